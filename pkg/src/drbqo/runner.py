"""Experiment loop for robust and baseline quadrature optimisation.

One master seed derives independent named random streams, so switching the
method does not perturb the context set, the initial design or the
observation noise.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from drbqo import acquisition as acq
from drbqo import benchmarks as bm
from drbqo import gp, rff

log = logging.getLogger(__name__)

STATE_VERSION = 1
CI_QUANTILE = 2.054  # two-sided 96% normal quantile

# method -> (how x_t is chosen, how the report point is chosen)
METHODS = {
    "drbqo": ("robust_ts", "maximin"),
    "emp_drbqo": ("robust_ts", "empirical"),
    "bqo_ts": ("ts", "empirical"),
    "maximin_bqo_ts": ("ts", "maximin"),
    "bqo_ei": ("ei", "empirical"),
    "maximin_bqo_ei": ("ei", "maximin"),
    "bqo_ucb": ("ucb", "empirical"),
}
W_RULES = ("max_variance", "uniform_random")
STREAMS = ("contexts", "init", "rff", "noise", "hyperopt", "w_random")


class ConfigError(ValueError):
    pass


class RunError(gp.GPNumericalError):
    """Numerical failure inside a run, tagged with the seed and iteration."""


@dataclass
class ExperimentConfig:
    method: str = "drbqo"
    rho: float = 1.0
    horizon: int = 100
    n_contexts: int = 10
    d: int = 2
    n_init: int = 12
    n_features: int = rff.DEFAULT_FEATURES
    n_candidates: int = acq.DEFAULT_CANDIDATES
    seeds: list = field(default_factory=lambda: [0])
    objective: str = "logistic"
    logistic_bound: float = bm.LOGISTIC_BOUND
    context_dist: str = "standard_normal"
    context_seed: int | None = None
    candidate_scheme: str = "sobol"
    candidate_seed: int = 0
    noise_std: float = 0.01
    xi: float = 0.0
    ucb_beta: float | None = None
    w_rule: str = "max_variance"
    refit_every: int = 1
    log_lengthscale_min: float = -3.0
    log_lengthscale_max: float = 2.0
    log_amplitude_min: float = -3.0
    log_amplitude_max: float = 3.0
    log_noise_min: float = -8.0
    log_noise_max: float = 0.0
    hp_restarts: int = 5
    hp_max_fev: int = 300
    isotropic: bool = False
    output: str = "results"
    truth_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ConfigError("rho must be >= 0")
        for name in ("horizon", "n_init", "n_contexts", "d", "n_features", "n_candidates",
                     "refit_every", "hp_restarts", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        seeds = [int(s) for s in self.seeds]
        if not seeds:
            raise ConfigError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        self.seeds = seeds
        if self.w_rule not in W_RULES:
            raise ConfigError(f"w_rule must be one of {W_RULES}")
        if self.xi < 0:
            raise ConfigError("xi must be >= 0")
        if self.method == "bqo_ucb" and self.ucb_beta is None:
            raise ConfigError("bqo_ucb needs ucb_beta")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        for lo, hi in (("log_lengthscale_min", "log_lengthscale_max"),
                       ("log_amplitude_min", "log_amplitude_max"),
                       ("log_noise_min", "log_noise_max")):
            if getattr(self, lo) > getattr(self, hi):
                raise ConfigError(f"{lo} must not exceed {hi}")
        try:
            self.make_objective()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def make_objective(self) -> bm.ObjectiveFn:
        if self.objective == "logistic":
            return bm.logistic_objective(self.d, self.logistic_bound)
        return bm.make_objective(self.objective, self.d)

    @property
    def search_space(self) -> gp.SearchSpace:
        return gp.SearchSpace(
            (self.log_lengthscale_min, self.log_lengthscale_max),
            (self.log_amplitude_min, self.log_amplitude_max),
            (self.log_noise_min, self.log_noise_max),
            restarts=self.hp_restarts, isotropic=self.isotropic, max_fev=self.hp_max_fev)


def stream(seed: int, name: str) -> np.random.Generator:
    """Random generator for one named purpose under a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


def normalize_contexts(S: np.ndarray) -> np.ndarray:
    """Affinely map each context coordinate onto [0, 1] over the context set."""
    lo, hi = S.min(axis=0), S.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (S - lo) / span


@dataclass
class IterationRecord:
    seed: int
    t: int
    x: np.ndarray
    w_index: int
    y: float
    report_x: np.ndarray
    rho_regret: float
    empirical_value: float


def truth_path(directory, seed: int) -> Path:
    return Path(directory) / f"truth_seed{seed}.npz"


class RunState:
    """Everything needed to step one seed of one method.

    Used by :func:`run_single` and, persisted to JSON, by the ask/tell CLI.
    """

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.kind, self.report_mode = METHODS[config.method]
        self.objective = config.make_objective()
        self.streams = {name: stream(seed, name) for name in STREAMS}
        ctx_rng = stream(config.context_seed, "contexts") if config.context_seed is not None \
            else self.streams["contexts"]
        self.context_set = bm.sample_context_set(config.context_dist, config.n_contexts,
                                                 self.objective.m_w, ctx_rng)
        self.context_gp = normalize_contexts(self.context_set)
        self.candidates = acq.make_candidates(config.d, config.n_candidates,
                                              config.candidate_seed, config.candidate_scheme)
        init = self.streams["init"]
        self.init_index = init.integers(len(self.candidates), size=config.n_init)
        self.init_w = init.integers(config.n_contexts, size=config.n_init)
        self.data = gp.Dataset(self.context_gp, d=config.d)
        self.hp = gp.GPHyperParams.default(config.d, self.objective.m_w)
        self.t = 0  # completed optimisation steps
        self.pending: tuple[np.ndarray, int] | None = None

    # -- model -------------------------------------------------------------
    def scaled_dataset(self) -> gp.Dataset:
        scaler = gp.OutputScaler.from_data(self.data.y)
        return self.data.with_y(scaler.forward(self.data.y))

    @property
    def in_init(self) -> bool:
        return len(self.data) < self.config.n_init

    def suggest(self) -> tuple[np.ndarray, int]:
        """Next design point and context index to evaluate."""
        if self.in_init:
            i = len(self.data)
            return self.candidates[int(self.init_index[i])], int(self.init_w[i])
        cfg = self.config
        ds = self.scaled_dataset()
        if self.t % cfg.refit_every == 0:
            self.hp = gp.optimize_hyperparams(ds, cfg.search_space, self.streams["hyperopt"], self.hp)
        post = gp.fit(ds, self.hp)
        if self.kind in ("robust_ts", "ts"):
            sample = rff.sample_posterior(self.hp.kernel, ds, self.hp.noise_variance,
                                          self.streams["rff"], cfg.n_features)
            if self.kind == "robust_ts":
                _, x, _ = acq.drbqo_select_x(sample, self.context_gp, self.candidates, cfg.rho)
            else:
                _, x, _ = acq.bqo_ts_select_x(sample, self.context_gp, self.candidates)
        elif self.kind == "ei":
            _, x, _ = acq.bqo_ei_select_x(post, self.candidates, float(ds.y.max()), cfg.xi)
        else:
            scores = acq.ucb_quadrature_batch(post, self.candidates.points, cfg.ucb_beta)
            x = self.candidates[int(np.argmax(scores))]
        if cfg.w_rule == "max_variance":
            w = acq.select_w(post, x)
        else:
            w = int(self.streams["w_random"].integers(cfg.n_contexts))
        return x, w

    def tell(self, x, w_index: int, y: float) -> np.ndarray | None:
        """Record an observation; after the initial design return the report point."""
        was_init = self.in_init
        self.data = self.data.append(x, w_index, y)
        if was_init:
            return None
        self.t += 1
        post = gp.fit(self.scaled_dataset(), self.hp)
        _, rx = acq.report_point(post, self.data.x, self.config.rho, self.report_mode)
        return rx

    def observe(self, x, w_index: int) -> float:
        f = float(self.objective(x[None, :], self.context_set[w_index][None, :])[0])
        return f + self.config.noise_std * float(self.streams["noise"].standard_normal())

    # -- persistence ---------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({
            "version": STATE_VERSION,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "t": self.t,
            "context_set": self.context_set.tolist(),
            "x": self.data.x.tolist(),
            "w_index": self.data.w_index.tolist(),
            "y": self.data.y.tolist(),
            "hp": self.hp.to_vector().tolist(),
            "pending": None if self.pending is None
            else {"x": np.asarray(self.pending[0]).tolist(), "w_index": int(self.pending[1])},
            "streams": {k: g.bit_generator.state for k, g in self.streams.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "RunState":
        blob = json.loads(text)
        if blob.get("version") != STATE_VERSION:
            raise ConfigError(f"unsupported state version {blob.get('version')}")
        state = cls(ExperimentConfig.from_dict(blob["config"]), blob["seed"])
        state.context_set = np.asarray(blob["context_set"], dtype=float)
        state.context_gp = normalize_contexts(state.context_set)
        state.data = gp.Dataset(state.context_gp, np.asarray(blob["x"], dtype=float).reshape(-1, state.config.d),
                                blob["w_index"], blob["y"], d=state.config.d)
        state.hp = gp.GPHyperParams.from_vector(blob["hp"], state.config.d)
        state.t = int(blob["t"])
        if blob.get("pending"):
            state.pending = (np.asarray(blob["pending"]["x"], dtype=float), int(blob["pending"]["w_index"]))
        for k, st in blob["streams"].items():
            state.streams[k].bit_generator.state = st
        return state


def ground_truth(config: ExperimentConfig, seed: int) -> bm.GroundTruth:
    state = RunState(config, seed)
    if config.truth_dir:
        path = truth_path(config.truth_dir, seed)
        if path.exists():
            gt = bm.GroundTruth.load(path)
            if (gt.rho != config.rho or gt.candidates.shape != state.candidates.points.shape
                    or not np.array_equal(gt.candidates, state.candidates.points)
                    or not np.array_equal(gt.context_set, state.context_set)):
                raise ConfigError(f"truth file {path} does not match this configuration")
            return gt
    return bm.build_ground_truth(state.objective, state.context_set, config.rho,
                                 state.candidates.points)


def run_single(config: ExperimentConfig, seed: int,
               truth: bm.GroundTruth | None = None) -> list[IterationRecord]:
    """Run one seed of the configured method for ``horizon`` steps."""
    state = RunState(config, seed)
    gt = truth if truth is not None else ground_truth(config, seed)
    while state.in_init:
        x, w = state.suggest()
        state.tell(x, w, state.observe(x, w))
    records = []
    for t in range(1, config.horizon + 1):
        try:
            x, w = state.suggest()
            y = state.observe(x, w)
            rx = state.tell(x, w, y)
        except gp.GPNumericalError as e:
            raise RunError(f"seed {seed}, t {t}: {e}") from e
        records.append(IterationRecord(
            seed, t, np.array(x), w, y, np.array(rx), bm.rho_regret(rx, gt),
            bm.empirical_value(state.objective, rx, state.context_set)))
    return records


def _run_seed(args):
    config, seed = args
    return run_single(config, seed)


def run_experiment(config: ExperimentConfig) -> dict[int, list[IterationRecord]]:
    jobs = [(config, s) for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_seed, jobs))
    else:
        results = [_run_seed(j) for j in jobs]
    return dict(zip(config.seeds, results))


@dataclass
class AggregateCurve:
    t: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    n_seeds: int
    degenerate: bool = False


def best_so_far(records: list[IterationRecord]) -> np.ndarray:
    return np.minimum.accumulate(np.array([r.rho_regret for r in records]))


def aggregate(runs) -> AggregateCurve:
    """Mean and 96% normal half-width of best-so-far regret across seeds.

    ``runs`` maps seed -> records (or is a list of record lists).
    """
    curves = list(runs.values()) if isinstance(runs, dict) else list(runs)
    if not curves:
        raise ValueError("no runs to aggregate")
    B = np.vstack([best_so_far(r) for r in curves])
    k = B.shape[0]
    t = np.array([r.t for r in curves[0]])
    mean = B.mean(axis=0)
    if k < 2:
        log.warning("confidence interval needs at least two seeds")
        return AggregateCurve(t, mean, np.zeros_like(mean), k, degenerate=True)
    # spread about the first curve so identical curves give exactly zero width
    half = CI_QUANTILE * (B - B[0]).std(axis=0, ddof=1) / np.sqrt(k)
    return AggregateCurve(t, mean, half, k)


def _g(v) -> str:
    return format(float(v), ".12g")


def records_csv(runs, d: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "t", *[f"x_{i}" for i in range(d)], "w_index", "y",
                *[f"report_x_{i}" for i in range(d)], "rho_regret", "empirical_value"])
    curves = runs.values() if isinstance(runs, dict) else runs
    for recs in curves:
        for r in recs:
            w.writerow([r.seed, r.t, *map(_g, r.x), r.w_index, _g(r.y), *map(_g, r.report_x),
                        _g(r.rho_regret), _g(r.empirical_value)])
    return buf.getvalue()


def aggregate_csv(curve: AggregateCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mean_regret", "ci_halfwidth", "n_seeds"])
    for t, m, h in zip(curve.t, curve.mean, curve.half_width):
        w.writerow([int(t), _g(m), _g(h), curve.n_seeds])
    return buf.getvalue()


def write_outputs(config: ExperimentConfig, runs, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / f"records_{config.method}.csv"
    agg_path = out / f"aggregate_{config.method}.csv"
    rec_path.write_text(records_csv(runs, config.d))
    agg_path.write_text(aggregate_csv(aggregate(runs)))
    return rec_path, agg_path
