import csv
import io
import json

import numpy as np
import pytest

from drbqo import cli, gp, runner
from drbqo.runner import ConfigError, ExperimentConfig, IterationRecord, RunState

FAST = dict(horizon=3, n_init=4, n_candidates=64, n_features=100, hp_restarts=1, hp_max_fev=40)


def cfg(**kw):
    return ExperimentConfig(**{**FAST, **kw})


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(method="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(rho=-1)
    with pytest.raises(ConfigError):
        ExperimentConfig(method="bqo_ucb")
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[1, 1])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"horizon": 3, "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig(objective="shifted_beale", d=3)
    c = ExperimentConfig.from_dict({"method": "bqo_ei", "seeds": [2, 5]})
    assert c.replace(rho=0.3).rho == 0.3 and c.seeds == [2, 5]


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_named_streams_are_independent():
    a = runner.stream(3, "noise").standard_normal(4)
    b = runner.stream(3, "noise").standard_normal(4)
    c = runner.stream(3, "rff").standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    s1 = RunState(cfg(method="drbqo"), 7)
    s2 = RunState(cfg(method="bqo_ei"), 7)
    np.testing.assert_array_equal(s1.context_set, s2.context_set)
    np.testing.assert_array_equal(s1.init_index, s2.init_index)


def test_context_seed_shares_context_set():
    a = RunState(cfg(context_seed=0), 1)
    b = RunState(cfg(context_seed=0), 2)
    np.testing.assert_array_equal(a.context_set, b.context_set)
    assert not np.array_equal(RunState(cfg(), 1).context_set, RunState(cfg(), 2).context_set)


def test_minimal_run():
    c = cfg(horizon=1, n_candidates=1, n_contexts=1, n_init=1)
    recs = runner.run_single(c, 0)
    assert len(recs) == 1
    state = RunState(c, 0)
    np.testing.assert_array_equal(recs[0].x, state.candidates[0])
    assert recs[0].w_index == 0
    assert recs[0].rho_regret == pytest.approx(0.0, abs=1e-12)


def test_same_seed_identical_records():
    c = cfg()
    a = runner.records_csv({0: runner.run_single(c, 0)}, c.d)
    b = runner.records_csv({0: runner.run_single(c, 0)}, c.d)
    assert a == b


@pytest.mark.parametrize("method", sorted(runner.METHODS))
def test_every_method_runs(method):
    c = cfg(method=method, ucb_beta=2.0 if method == "bqo_ucb" else None, horizon=2)
    recs = runner.run_single(c, 1)
    assert [r.t for r in recs] == [1, 2]
    assert all(r.rho_regret >= -1e-12 for r in recs)


def test_uniform_random_w_rule():
    recs = runner.run_single(cfg(w_rule="uniform_random", horizon=4), 0)
    assert all(0 <= r.w_index < 10 for r in recs)


def test_rho_zero_matches_bqo_ts():
    a = runner.run_single(cfg(method="drbqo", rho=0.0, horizon=6), 4)
    b = runner.run_single(cfg(method="maximin_bqo_ts", rho=0.0, horizon=6), 4)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.x, rb.x)
        assert ra.w_index == rb.w_index


def test_state_roundtrip_continues_identically():
    c = cfg(horizon=0 + 3)
    ref = RunState(c, 2)
    for _ in range(c.n_init + 1):
        x, w = ref.suggest()
        ref.tell(x, w, ref.observe(x, w))
    saved = ref.to_json()
    x1, w1 = ref.suggest()
    back = RunState.from_json(saved)
    x2, w2 = back.suggest()
    np.testing.assert_array_equal(x1, x2)
    assert w1 == w2
    with pytest.raises(ConfigError):
        RunState.from_json(json.dumps({**json.loads(saved), "version": 99}))


def rec(seed, t, regret):
    return IterationRecord(seed, t, np.zeros(2), 0, 0.0, np.zeros(2), regret, 0.0)


def test_aggregate_rules():
    same = {s: [rec(s, 1, 0.5), rec(s, 2, 0.2)] for s in range(3)}
    agg = runner.aggregate(same)
    np.testing.assert_array_equal(agg.half_width, 0.0)
    np.testing.assert_allclose(agg.mean, [0.5, 0.2])
    two = runner.aggregate({0: [rec(0, 1, 0.0)], 1: [rec(1, 1, 2.0)]})
    assert two.mean[0] == 1.0
    one = runner.aggregate({0: [rec(0, 1, 1.0)]})
    assert one.degenerate and one.half_width[0] == 0.0


def test_aggregate_matches_hand_formula():
    rng = np.random.default_rng(0)
    R = rng.exponential(size=(30, 5))
    runs = {s: [rec(s, t + 1, R[s, t]) for t in range(5)] for s in range(30)}
    agg = runner.aggregate(runs)
    # best-so-far at t = 4, then mean and 2.054 * sample sd / sqrt(30)
    col = [min(R[s, :4]) for s in range(30)]
    m = sum(col) / 30
    sd = (sum((v - m) ** 2 for v in col) / 29) ** 0.5
    assert agg.mean[3] == pytest.approx(m, rel=1e-12)
    assert agg.half_width[3] == pytest.approx(2.054 * sd / 30 ** 0.5, rel=1e-12)


def test_csv_layout():
    runs = {0: [rec(0, 1, 0.25)]}
    rows = list(csv.reader(io.StringIO(runner.records_csv(runs, 2))))
    assert rows[0] == ["seed", "t", "x_0", "x_1", "w_index", "y", "report_x_0", "report_x_1",
                       "rho_regret", "empirical_value"]
    assert rows[1][8] == "0.25"
    agg = list(csv.reader(io.StringIO(runner.aggregate_csv(runner.aggregate(runs)))))
    assert agg[0] == ["t", "mean_regret", "ci_halfwidth", "n_seeds"]
    assert runner._g(1 / 3) == "0.333333333333"


def test_truth_file_mismatch(tmp_path):
    c = cfg(truth_dir=str(tmp_path))
    runner.ground_truth(c, 0).save(runner.truth_path(tmp_path, 0))
    assert runner.ground_truth(c, 0).best_index == runner.ground_truth(cfg(), 0).best_index
    with pytest.raises(ConfigError):
        runner.ground_truth(c.replace(rho=0.5), 0)


# -- command line ------------------------------------------------------------

def write_config(path, **kw):
    path.write_text(json.dumps({**FAST, **kw}))
    return path


def test_cli_run_row_count(tmp_path):
    conf = write_config(tmp_path / "c.json", horizon=2, seeds=[0, 1])
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "out")]) == 0
    rows = (tmp_path / "out" / "records_drbqo.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    agg = (tmp_path / "out" / "aggregate_drbqo.csv").read_text().splitlines()
    assert len(agg) == 1 + 2 and agg[1].endswith(",2")


def test_cli_overrides(tmp_path):
    conf = write_config(tmp_path / "c.json", horizon=1)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(conf), "--out", str(out), "--seeds", "3",
                     "--method", "bqo_ts", "--rho", "0.5"]) == 0
    rows = list(csv.reader((out / "records_bqo_ts.csv").open()))
    assert rows[1][0] == "3"


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 2
    assert cli.main(["run"]) == 2
    assert cli.main(["run", "--config", "x", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    conf = write_config(tmp_path / "c.json")
    assert cli.main(["run", "--config", str(conf), "--method", "nope"]) == 2


def test_cli_numerical_failure(tmp_path, monkeypatch):
    def boom(config):
        raise gp.GPNumericalError("not positive definite")
    monkeypatch.setattr(runner, "run_experiment", boom)
    conf = write_config(tmp_path / "c.json")
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path)]) == 3


def test_cli_truth_cache_equivalence(tmp_path):
    conf = write_config(tmp_path / "c.json", horizon=2, seeds=[0, 1])
    truth = tmp_path / "truth"
    assert cli.main(["truth", "--config", str(conf), "--out", str(truth)]) == 0
    assert sorted(p.name for p in truth.iterdir()) == ["truth_seed0.npz", "truth_seed1.npz"]
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "b"),
                     "--truth", str(truth)]) == 0
    a = (tmp_path / "a" / "records_drbqo.csv").read_text()
    b = (tmp_path / "b" / "records_drbqo.csv").read_text()
    assert a == b


def test_cli_ask_tell(tmp_path, capsys):
    conf = write_config(tmp_path / "c.json", n_init=2)
    state = tmp_path / "state.json"
    assert cli.main(["tell", "--state", str(state), "--y", "1"]) == 2
    assert cli.main(["suggest", "--state", str(state)]) == 2
    capsys.readouterr()
    f = ExperimentConfig.load(conf).make_objective()
    reports = []
    for _ in range(4):
        assert cli.main(["suggest", "--state", str(state), "--config", str(conf)]) == 0
        s = json.loads(capsys.readouterr().out)
        # asking twice without telling returns the same pending point
        assert cli.main(["suggest", "--state", str(state)]) == 0
        assert json.loads(capsys.readouterr().out) == s
        y = float(f(np.array([s["x"]]), np.array([s["w"]]))[0])
        assert cli.main(["tell", "--state", str(state), "--y", str(y)]) == 0
        reports.append(json.loads(capsys.readouterr().out)["report_x"])
    assert reports[:2] == [None, None]
    assert all(r is not None and len(r) == 2 for r in reports[2:])
    assert cli.main(["tell", "--state", str(state), "--y", "0"]) == 2
