"""Worst-case expectation over a chi-square ball around the empirical distribution.

For a loss vector ``l`` over ``n`` support points the inner problem is::

    min_p  p @ l   s.t.  p in simplex,  n * ||p||^2 <= 2 * rho + 1

The KKT conditions give ``lam * n * p_i = max(-l_i - eta, 0)`` with ``eta``
fixed by the normalisation, so for each ``lam > 0`` the weights are a
Euclidean projection of ``-l / (n * lam)`` onto the simplex. ``n * ||p||^2``
is non-increasing in ``lam``, and ``lam`` is found by bisection on
``[0, lam_max]``.

The active set for a given ``lam`` is resolved by sorting ``l`` once and
scanning prefix sizes ``k = 1..n``: the active set is the ``k`` smallest
losses for the largest ``k`` whose threshold ``(sum of k smallest + n*lam)/k``
still exceeds the ``k``-th smallest loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ITER = 200


@dataclass(frozen=True)
class ChiSquareBall:
    n: int
    rho: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("support size must be at least 1")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ValueError("rho must be a nonnegative real")

    @property
    def saturated(self) -> bool:
        """True when the ball covers the whole simplex."""
        return self.rho >= (self.n - 1) / 2

    def contains(self, p, atol: float = 1e-6) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(
            p.shape == (self.n,)
            and abs(p.sum() - 1.0) <= 1e-9
            and np.all(p >= -1e-12)
            and self.n * p @ p <= 2 * self.rho + 1 + atol
        )


@dataclass(frozen=True)
class RobustSolution:
    weights: np.ndarray
    value: float
    lam: float
    eta: float
    iterations: int


def _check_inputs(L, rho):
    L = np.asarray(L, dtype=float)
    if L.shape[-1] == 0:
        raise ValueError("loss vector must be nonempty")
    if np.isnan(L).any():
        raise ValueError("loss vector contains NaN")
    if not np.all(np.isfinite(L)):
        raise ValueError("loss vector must be finite")
    if not (np.isfinite(rho) and rho >= 0):
        raise ValueError("rho must be a nonnegative real")
    return L


def _weights_at(ls, cums, lam, n):
    """Active set and distance from uniform for sorted losses ``ls``.

    ``ls`` and ``cums`` are (B, n); ``lam`` is (B,) and strictly positive.
    Returns ``(c, kstar, excess)`` where the threshold is ``c + lam`` and
    ``excess = n * ||p - 1/n||^2``. Working with ``c`` rather than the
    threshold keeps the deviations accurate when ``lam`` dwarfs the losses.
    """
    k = np.arange(1, n + 1)
    c_all = cums / k + lam[:, None] * ((n - k) / k)
    # the feasible prefixes form a run of True values; its length is the active-set size
    kstar = np.maximum((ls < c_all + lam[:, None]).sum(axis=1), 1)
    rows = np.arange(ls.shape[0])
    c = c_all[rows, kstar - 1]
    dev = np.where(k[None, :] <= kstar[:, None], c[:, None] - ls, -lam[:, None])
    excess = ((dev / lam[:, None]) ** 2).sum(axis=1) / n
    return c, kstar, excess


def _lambda_upper(ls, rho):
    """A feasible ``lam``: with every point active the excess is ``S / (n lam^2)``.

    All points stay active once ``lam >= max(l) - mean(l)``, so the larger
    of that and ``sqrt(S / (2 n rho))`` is feasible. It scales like
    ``rho ** -0.5`` and stays finite for subnormal ``rho``.
    """
    n = ls.shape[1]
    centred = ls - ls.mean(axis=1, keepdims=True)
    S = (centred * centred).sum(axis=1)
    return np.maximum(np.sqrt(S / (2.0 * n)) / np.sqrt(rho), centred[:, -1])


def solve_batch(L, rho: float, tol: float = 1e-10):
    """Solve the inner problem for every row of ``L`` (B, n) at once.

    Returns ``(P, values, lam, eta, iterations)`` as arrays with leading
    dimension B. ``tol`` is the relative width of the bisection interval.
    """
    L = _check_inputs(np.atleast_2d(L), rho)
    if tol <= 0:
        raise ValueError("tol must be positive")
    B, n = L.shape
    budget = 2.0 * rho  # allowed n * ||p - 1/n||^2

    P = np.full((B, n), 1.0 / n)
    lam = np.zeros(B)
    eta = -L.mean(axis=1)
    iters = np.zeros(B, dtype=int)

    lmin = L.min(axis=1)
    at_min = L == lmin[:, None]
    n_min = at_min.sum(axis=1)
    constant = n_min == n
    if rho == 0.0:
        todo = np.zeros(B, dtype=bool)
    else:
        # lam = 0 is optimal when the uniform distribution on the argmin set fits
        vertex = ~constant & (n / n_min - 1.0 <= budget)
        P[vertex] = at_min[vertex] / n_min[vertex, None]
        eta[vertex] = -lmin[vertex]
        todo = ~constant & ~vertex

    if todo.any():
        idx = np.flatnonzero(todo)
        order = np.argsort(L[idx], axis=1, kind="stable")
        ls = np.take_along_axis(L[idx], order, axis=1)
        cums = np.cumsum(ls, axis=1)

        hi = _lambda_upper(ls, rho)
        # safety net in case the closed-form bound is not feasible in floating point
        for _ in range(60):
            bad = _weights_at(ls, cums, hi, n)[2] > budget
            if not bad.any():
                break
            hi = np.where(bad, 2.0 * hi, hi)
        lo = np.zeros_like(hi)
        it = np.zeros(idx.size, dtype=int)
        for _ in range(MAX_ITER):
            active = hi - lo > tol * hi
            if not active.any():
                break
            mid = 0.5 * (hi + lo)
            infeasible = _weights_at(ls, cums, mid, n)[2] > budget
            lo = np.where(active & infeasible, mid, lo)
            hi = np.where(active & ~infeasible, mid, hi)
            it += active

        # exact lambda for the active set found at the feasible end
        c, kstar, _ = _weights_at(ls, cums, hi, n)
        rows = np.arange(idx.size)
        kk = np.arange(1, n + 1)
        in_a = kk[None, :] <= kstar[:, None]
        mean_a = cums[rows, kstar - 1] / kstar
        sk = (np.where(in_a, ls - mean_a[:, None], 0.0) ** 2).sum(axis=1)
        denom = n * (budget - (n - kstar) / kstar)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lam_star = np.sqrt(sk / denom)
            c_star = mean_a + lam_star * (n - kstar) / kstar
        nxt = ls[rows, np.minimum(kstar, n - 1)]
        ok = (denom > 0) & (sk > 0) & np.isfinite(lam_star) & (lam_star > 0)
        ok &= ls[rows, kstar - 1] < c_star + lam_star
        ok &= (kstar == n) | (nxt >= c_star + lam_star)
        lam_f = np.where(ok, lam_star, hi)
        c_f = np.where(ok, c_star, c)

        # p_i = 1/n + (c - l_i) / (n lam) on the active set, 0 elsewhere
        Ps = np.where(in_a, 1.0 / n + (c_f[:, None] - ls) / (n * lam_f[:, None]), 0.0)
        Ps = np.maximum(Ps, 0.0)
        Ps /= Ps.sum(axis=1, keepdims=True)
        Pi = np.empty_like(Ps)
        np.put_along_axis(Pi, order, Ps, axis=1)
        P[idx] = Pi
        lam[idx] = lam_f
        eta[idx] = -(c_f + lam_f)
        iters[idx] = it

    # pull any floating-point overshoot back onto the ball, towards uniform
    dev = P - 1.0 / n
    excess = n * (dev * dev).sum(axis=1)
    over = excess > budget
    if over.any():
        scale = np.sqrt(budget / excess[over])
        P[over] = 1.0 / n + dev[over] * scale[:, None]

    if rho == 0.0:
        # same arithmetic as a plain context average, so ties break identically
        values = L.mean(axis=1)
    else:
        values = np.einsum("ij,ij->i", P, L)
        values[constant] = L[constant, 0]
    return P, values, lam, eta, iters


def solve(l, rho: float, tol: float = 1e-10) -> RobustSolution:
    """Worst-case weights and value of ``p @ l`` over the chi-square ball.

    Parameters
    ----------
    l : array_like, shape (n,)
        Losses (or rewards) at the support points.
    rho : float
        Ball radius; ``0`` gives the empirical distribution and
        ``rho >= (n - 1) / 2`` the whole simplex.
    tol : float
        Relative width of the bisection interval on the dual variable at
        termination.
    """
    l = np.asarray(l, dtype=float)
    if l.ndim != 1:
        raise ValueError("l must be a vector")
    P, values, lam, eta, iters = solve_batch(l[None, :], rho, tol)
    return RobustSolution(P[0], float(values[0]), float(lam[0]), float(eta[0]),
                          int(iters[0]))


def robust_values(L, rho: float) -> np.ndarray:
    """Worst-case expectation for every row of ``L``."""
    return solve_batch(L, rho)[1]


def sandwich_bounds(l, rho: float) -> tuple[float, float]:
    """Bounds on ``mean(l) - robust value`` from the empirical variance.

    Returns ``(max(sqrt(2 rho s2) - 2 M rho, 0), sqrt(2 rho s2))`` where ``s2``
    is the 1/n variance of ``l`` and ``M`` its range.
    """
    l = np.asarray(l, dtype=float)
    s2 = l.var()
    M = l.max() - l.min()
    upper = float(np.sqrt(2.0 * rho * s2))
    lower = max(upper - 2.0 * M * rho, 0.0)
    return lower, upper
