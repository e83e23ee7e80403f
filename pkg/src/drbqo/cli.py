"""Command-line entry point: ``drbqo {run,truth,suggest,tell}``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from drbqo import gp, runner
from drbqo.runner import ConfigError, ExperimentConfig, RunState

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drbqo", description="Distributionally robust Bayesian quadrature optimisation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seeds", type=_seeds, help='comma-separated seeds, e.g. "0,1,2"')
        sp.add_argument("--method", help="override the configured method")
        sp.add_argument("--rho", type=float, help="override the ball radius")

    run = sub.add_parser("run", help="run the configured experiment and write CSVs")
    overrides(run)
    run.add_argument("--out", help="output directory (default: config 'output')")
    run.add_argument("--truth", help="directory of precomputed truth files")

    truth = sub.add_parser("truth", help="precompute ground-truth robust values")
    overrides(truth)
    truth.add_argument("--out", help="output directory for truth_seed<N>.npz files")

    sug = sub.add_parser("suggest", help="propose the next (x, w) for an external objective")
    overrides(sug, config_required=False)
    sug.add_argument("--state", required=True, help="run-state file (created if missing)")

    tell = sub.add_parser("tell", help="report the observed value for the pending suggestion")
    tell.add_argument("--state", required=True)
    tell.add_argument("--y", type=float, required=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    changes = {}
    if args.seeds:
        changes["seeds"] = args.seeds
    if args.method:
        changes["method"] = args.method
    if args.rho is not None:
        changes["rho"] = args.rho
    if getattr(args, "truth", None):
        changes["truth_dir"] = args.truth
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.output
    runs = runner.run_experiment(cfg)
    rec, agg = runner.write_outputs(cfg, runs, out)
    print(f"wrote {rec} and {agg}")
    return EXIT_OK


def cmd_truth(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.truth_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        gt = runner.ground_truth(cfg.replace(truth_dir=None), seed)
        gt.save(runner.truth_path(out, seed))
        print(f"seed {seed}: best candidate {gt.best_index} robust value {gt.best_value:.6g}")
    return EXIT_OK


def cmd_suggest(args) -> int:
    path = Path(args.state)
    if path.exists():
        state = RunState.from_json(path.read_text())
    else:
        if not args.config:
            raise ConfigError("--config is required to start a new run state")
        cfg = _config(args)
        state = RunState(cfg, cfg.seeds[0])
    if state.pending is None:
        state.pending = state.suggest()
    x, w = state.pending
    path.write_text(state.to_json())
    print(json.dumps({"x": np.asarray(x).tolist(), "w_index": int(w),
                      "w": state.context_set[w].tolist(), "t": state.t + 1,
                      "initial": state.in_init}))
    return EXIT_OK


def cmd_tell(args) -> int:
    path = Path(args.state)
    if not path.exists():
        raise ConfigError(f"no run state at {path}")
    state = RunState.from_json(path.read_text())
    if state.pending is None:
        raise ConfigError("no pending suggestion; call suggest first")
    x, w = state.pending
    rx = state.tell(x, w, args.y)
    state.pending = None
    path.write_text(state.to_json())
    print(json.dumps({"t": state.t, "n_observations": len(state.data),
                      "report_x": None if rx is None else np.asarray(rx).tolist()}))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "truth": cmd_truth, "suggest": cmd_suggest, "tell": cmd_tell}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except gp.GPNumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
