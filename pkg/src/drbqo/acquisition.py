"""Per-iteration decision rules over a fixed candidate set.

Every argmax here resolves ties to the lowest index (``np.argmax``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from drbqo import chi2dro
from drbqo.gp import GPPosterior
from drbqo.rff import FunctionSample

DEFAULT_CANDIDATES = 1000


@dataclass(frozen=True, eq=False)
class CandidateSet:
    points: np.ndarray
    seed: int
    scheme: str = "sobol"

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValueError("candidate set must be a nonempty (k, d) array")

    def __len__(self):
        return self.points.shape[0]

    def __getitem__(self, i):
        return self.points[i]


def make_candidates(d: int, count: int = DEFAULT_CANDIDATES, seed: int = 0,
                    scheme: str = "sobol") -> CandidateSet:
    """Scrambled Sobol points (or i.i.d. uniform) in the unit cube."""
    if count < 1:
        raise ValueError("count must be positive")
    if scheme == "sobol":
        m = int(np.ceil(np.log2(count)))
        pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:count]
    elif scheme == "uniform":
        pts = np.random.default_rng(seed).random((count, d))
    else:
        raise ValueError(f"unknown candidate scheme {scheme!r}")
    return CandidateSet(pts, seed, scheme)


def _points(candidates):
    return candidates.points if isinstance(candidates, CandidateSet) else np.atleast_2d(candidates)


def sample_table(sample: FunctionSample, context_set, X) -> np.ndarray:
    """Sampled function at every (candidate, context) pair, shape (k, n)."""
    return sample.table(X, context_set)


def drbqo_select_x(sample: FunctionSample, context_set, candidates, rho: float):
    """Candidate maximising the worst-case expectation of the sampled function.

    Returns ``(index, x, robust_value)``.
    """
    X = _points(candidates)
    values = chi2dro.robust_values(sample_table(sample, context_set, X), rho)
    i = int(np.argmax(values))
    return i, X[i], float(values[i])


def bqo_ts_select_x(sample: FunctionSample, context_set, candidates):
    """Candidate maximising the context-average of the sampled function."""
    X = _points(candidates)
    values = sample_table(sample, context_set, X).mean(axis=1)
    i = int(np.argmax(values))
    return i, X[i], float(values[i])


def select_w(post: GPPosterior, x) -> int:
    """Context with the largest posterior variance at design ``x``."""
    return int(np.argmax(post.var_grid(np.atleast_2d(x))[0]))


def expected_improvement(mu, s, best_y: float, xi: float = 0.0):
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    imp = mu - best_y - xi
    pos = s > 0
    z = np.where(pos, imp / np.where(pos, s, 1.0), 0.0)
    out = np.where(pos, imp * norm.cdf(z) + s * norm.pdf(z), 0.0)
    return np.maximum(out, 0.0)


def ei_quadrature_batch(post: GPPosterior, X, best_y: float, xi: float = 0.0) -> np.ndarray:
    """Expected improvement of the uniform-weight quadrature for each row of X."""
    n = post.n_contexts
    mu, var = post.quadrature_moments(X, np.full(n, 1.0 / n))
    return expected_improvement(mu, np.sqrt(np.maximum(var, 0.0)), best_y, xi)


def ei_quadrature(post: GPPosterior, x, best_y: float, xi: float = 0.0) -> float:
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    return float(ei_quadrature_batch(post, np.atleast_2d(x), best_y, xi)[0])


def bqo_ei_select_x(post: GPPosterior, candidates, best_y: float, xi: float = 0.0):
    X = _points(candidates)
    values = ei_quadrature_batch(post, X, best_y, xi)
    i = int(np.argmax(values))
    return i, X[i], float(values[i])


def ucb_quadrature_batch(post: GPPosterior, X, beta: float) -> np.ndarray:
    """Upper confidence bound ``mu + sqrt(beta) * sigma`` of the uniform quadrature."""
    n = post.n_contexts
    mu, var = post.quadrature_moments(X, np.full(n, 1.0 / n))
    return mu + np.sqrt(beta) * np.sqrt(np.maximum(var, 0.0))


def report_point(post: GPPosterior, visited_x, rho: float, mode: str = "maximin"):
    """Pick the visited design with the best posterior-mean objective.

    ``maximin`` scores each design by the worst-case expectation of the
    posterior mean over the chi-square ball; ``empirical`` by its plain
    context average. Returns ``(index, x)`` into ``visited_x``.
    """
    X = np.atleast_2d(np.asarray(visited_x, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("no visited points")
    M = post.mean_grid(X)
    if mode == "maximin":
        scores = chi2dro.robust_values(M, rho)
    elif mode == "empirical":
        scores = M.mean(axis=1)
    else:
        raise ValueError(f"unknown report mode {mode!r}")
    i = int(np.argmax(scores))
    return i, X[i]
