import numpy as np
import pytest

from drbqo import benchmarks as bm
from drbqo import chi2dro


def test_logistic_values():
    f = bm.logistic_objective(2)
    mid = np.array([[0.5, 0.5]])
    for w in ([0.0, 0.0], [3.0, -2.0]):
        assert f(mid, [w])[0] == pytest.approx(-np.log(2))
    assert bm._logistic(np.array([[1.0]]), np.array([[10.0]]))[0] == pytest.approx(-10.0000453989, abs=1e-9)


def test_unit_cube_mapping():
    f = bm.logistic_objective(2, bound=1.0)
    np.testing.assert_allclose(f.to_native([0.0, 1.0]), [-1.0, 1.0])
    np.testing.assert_allclose(f.to_unit(f.to_native([0.2, 0.7])), [0.2, 0.7])
    with pytest.raises(ValueError):
        f([[1.5, 0.5]], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        f([[0.5]], [[0.0, 0.0]])


def test_shifted_objectives():
    for name in ("shifted_levy", "shifted_beale"):
        f = bm.make_objective(name, 2)
        u = np.random.default_rng(0).uniform(size=(5, 2))
        base = bm.BASE_FUNCTIONS[name.split("_")[1]][0]
        np.testing.assert_allclose(f(u, np.zeros((5, 2))), -base(f.to_native(u)))
    levy = bm.make_objective("shifted_levy", 3)
    at_one = levy.to_unit(np.ones(3))
    assert levy(at_one[None], np.zeros((1, 3)))[0] == pytest.approx(0.0, abs=1e-14)
    assert bm.beale(np.array([[3.0, 0.5]]))[0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        bm.make_objective("shifted_beale", 3)
    with pytest.raises(ValueError):
        bm.make_objective("rosenbrock", 2)


def test_context_sets():
    S = bm.sample_context_set("standard_normal", 1, 2, np.random.default_rng(0))
    assert S.shape == (1, 2)
    a = bm.sample_context_set("standard_normal", 5, 2, np.random.default_rng(3))
    b = bm.sample_context_set("standard_normal", 5, 2, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    big = bm.sample_context_set("standard_normal", 100_000, 2, np.random.default_rng(1))
    assert np.all(np.abs(big.mean(axis=0)) < 3 / np.sqrt(100_000))
    with pytest.raises(ValueError):
        bm.sample_context_set("cauchy", 5, 1, np.random.default_rng(0))


def constant_objective(c=1.0):
    return bm.ObjectiveFn("const", 1, 1, np.zeros(1), np.ones(1), lambda x, w: np.full(len(x), c))


def table_objective(T):
    T = np.asarray(T, float)
    # candidates are x = i / 10 and contexts are w = j
    def native(x, w):
        return T[np.rint(x[:, 0] * 10).astype(int), np.rint(w[:, 0]).astype(int)]
    return bm.ObjectiveFn("table", 1, 1, np.zeros(1), np.ones(1), native)


def test_ground_truth_rho_zero_is_empirical():
    f = bm.logistic_objective(2)
    rng = np.random.default_rng(2)
    S, X = rng.normal(size=(6, 2)), rng.uniform(size=(50, 2))
    gt = bm.build_ground_truth(f, S, 0.0, X)
    assert gt.best_index == int(np.argmax(f.table(X, S).mean(axis=1)))


def test_ground_truth_constant():
    gt = bm.build_ground_truth(constant_objective(), np.zeros((3, 1)), 1.0, np.linspace(0, 1, 4)[:, None])
    np.testing.assert_array_equal(gt.values, 1.0)
    assert gt.best_index == 0


def test_ground_truth_hand_table():
    T = np.array([[1.0, 1.0, -2.0],
                  [0.5, 0.6, 0.4],
                  [0.0, 3.0, 0.0],
                  [-1.0, 2.0, 2.0],
                  [0.45, 0.45, 0.45]])
    f = table_objective(T)
    X = (np.arange(5) / 10)[:, None]
    S = np.arange(3, dtype=float)[:, None]
    gt = bm.build_ground_truth(f, S, 1.0, X)
    # rho = 1 = (n - 1) / 2: the ball is the whole simplex, so values are row minima
    np.testing.assert_allclose(gt.values, T.min(axis=1), atol=1e-12)
    assert gt.best_index == 4
    assert bm.rho_regret(X[4], gt) == pytest.approx(0.0, abs=1e-12)
    assert bm.rho_regret(X[1], gt) == pytest.approx(0.05, abs=1e-12)
    assert bm.rho_regret(X[0], gt) == pytest.approx(2.45, abs=1e-12)


def test_regret_nonnegative_and_off_grid():
    f = bm.logistic_objective(2)
    rng = np.random.default_rng(3)
    S, X = rng.normal(size=(10, 2)), rng.uniform(size=(200, 2))
    gt = bm.build_ground_truth(f, S, 1.0, X)
    assert all(bm.rho_regret(x, gt) >= -1e-12 for x in X)
    off = np.array([0.123, 0.456])
    assert gt.robust_value(off) == pytest.approx(chi2dro.solve(f.table(off[None], S)[0], 1.0).value)
    assert bm.empirical_value(f, off, S) == pytest.approx(f.table(off[None], S).mean())


def test_ground_truth_roundtrip(tmp_path):
    f = bm.logistic_objective(2, bound=1.5)
    rng = np.random.default_rng(4)
    gt = bm.build_ground_truth(f, rng.normal(size=(5, 2)), 0.5, rng.uniform(size=(30, 2)))
    path = tmp_path / "gt.npz"
    gt.save(path)
    back = bm.GroundTruth.load(path)
    np.testing.assert_array_equal(back.values, gt.values)
    np.testing.assert_array_equal(back.context_set, gt.context_set)
    assert back.best_index == gt.best_index and back.rho == 0.5
    assert back.objective.params == {"bound": 1.5}
    off = np.array([0.31, 0.62])
    assert back.robust_value(off) == gt.robust_value(off)
