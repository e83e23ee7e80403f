"""Gaussian-process inference on the joint design/context space.

Observations are made at pairs ``(x, w_i)`` where ``w_i`` is drawn from a
fixed context set. Besides the usual posterior mean and covariance this
module gives the posterior of weighted sums ``sum_i p_i f(x, w_i)`` (the
quadrature posterior) and marginal-likelihood fitting of the kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

from drbqo import kernel as kern
from drbqo.kernel import KernelSpec, LengthScales

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class GPNumericalError(RuntimeError):
    """Raised when a covariance matrix cannot be factorised."""


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    w_index: int
    y: float


@dataclass(frozen=True)
class Dataset:
    """Observations on ``X x S_n`` with the (fixed) context set ``S_n``.

    ``x`` is (t, d), ``w_index`` (t,) and ``y`` (t,). The dataset is
    immutable; :meth:`append` returns a new one.
    """

    context_set: np.ndarray
    x: np.ndarray = None
    w_index: np.ndarray = None
    y: np.ndarray = None
    d: int = None

    def __post_init__(self):
        S = np.asarray(self.context_set, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.shape[0] < 1:
            raise ValueError("context set must be nonempty")
        object.__setattr__(self, "context_set", S)
        d = self.d
        if self.x is None:
            if d is None:
                raise ValueError("design dimension needed for an empty dataset")
            x = np.zeros((0, d))
        else:
            x = np.asarray(self.x, dtype=float)
            if x.ndim != 2:
                x = x.reshape(len(x), -1) if d is None else x.reshape(-1, d)
            if d is not None and x.shape[1] != d:
                raise ValueError(f"x has {x.shape[1]} columns, expected {d}")
            d = x.shape[1]
        wi = np.zeros(0, dtype=int) if self.w_index is None else np.asarray(self.w_index, dtype=int).ravel()
        y = np.zeros(0) if self.y is None else np.asarray(self.y, dtype=float).ravel()
        if not (len(x) == len(wi) == len(y)):
            raise ValueError("x, w_index and y must have equal length")
        if np.any(wi < 0) or np.any(wi >= S.shape[0]):
            raise ValueError("w_index out of range of the context set")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w_index", wi)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)

    def __len__(self):
        return len(self.y)

    @property
    def n_contexts(self) -> int:
        return self.context_set.shape[0]

    @property
    def observations(self) -> list[Observation]:
        return [Observation(x, int(i), float(v)) for x, i, v in zip(self.x, self.w_index, self.y)]

    @property
    def joint(self) -> np.ndarray:
        return np.hstack([self.x, self.context_set[self.w_index]])

    def append(self, x, w_index: int, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, self.d)
        return Dataset(self.context_set, np.vstack([self.x, x]),
                       np.append(self.w_index, int(w_index)), np.append(self.y, float(y)))

    def with_y(self, y) -> "Dataset":
        return replace(self, y=np.asarray(y, dtype=float))


@dataclass(frozen=True)
class GPHyperParams:
    kernel: KernelSpec
    noise_variance: float

    def __post_init__(self):
        if not self.noise_variance >= NOISE_FLOOR:
            raise ValueError(f"noise variance must be >= {NOISE_FLOOR}")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.log(self.kernel.lengthscales.joint),
                               [np.log(self.kernel.amplitude), np.log(self.noise_variance)]])

    @classmethod
    def from_vector(cls, v, d: int) -> "GPHyperParams":
        v = np.asarray(v, dtype=float)
        ls = np.exp(v[:-2])
        spec = KernelSpec(LengthScales(ls[:d], ls[d:]), float(np.exp(v[-2])))
        return cls(spec, max(float(np.exp(v[-1])), NOISE_FLOOR))

    @classmethod
    def default(cls, d: int, m: int, lengthscale: float = 0.5,
                noise_variance: float = 1e-2) -> "GPHyperParams":
        return cls(KernelSpec.isotropic(d, m, lengthscale), noise_variance)


def robust_cholesky(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``A``, adding diagonal jitter only if needed.

    Jitter starts at 1e-10 and grows tenfold up to 1e-4.
    """
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPNumericalError(
        f"Cholesky failed for a {A.shape[0]}x{A.shape[0]} matrix with jitter up to "
        f"{JITTER_MAX:g} (min diag {np.min(np.diag(A)):.3g})")


@dataclass(frozen=True, eq=False)
class GPPosterior:
    """Posterior of ``f`` given a dataset; immutable after :func:`fit`."""

    hp: GPHyperParams
    context_set: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    L: np.ndarray | None
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def kernel(self) -> KernelSpec:
        return self.hp.kernel

    @property
    def n_contexts(self) -> int:
        return self.context_set.shape[0]

    def _v(self, Z):
        Kx = kern.cross(self.kernel, self.Z, Z)
        return solve_triangular(self.L, Kx, lower=True, check_finite=False)

    def mean(self, Z) -> np.ndarray:
        """Posterior mean at the rows of a joint-point array."""
        Z = np.atleast_2d(Z)
        if self.L is None:
            return np.zeros(Z.shape[0])
        return kern.cross(self.kernel, Z, self.Z) @ self.alpha

    def cov(self, Z1, Z2) -> np.ndarray:
        K = kern.cross(self.kernel, Z1, Z2)
        if self.L is None:
            return K
        return K - self._v(Z1).T @ self._v(Z2)

    def var(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        prior = np.full(Z.shape[0], self.kernel.amplitude)
        if self.L is None:
            return prior
        V = self._v(Z)
        return np.maximum(prior - (V * V).sum(axis=0), 0.0)

    def grid(self, X) -> np.ndarray:
        """Joint points for every (design row, context) pair, shape (k*n, d+m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k, n = X.shape[0], self.n_contexts
        return np.hstack([np.repeat(X, n, axis=0), np.tile(self.context_set, (k, 1))])

    def mean_grid(self, X) -> np.ndarray:
        """Posterior means at ``(x, w_i)`` for every design row and context, (k, n)."""
        X = np.atleast_2d(X)
        return self.mean(self.grid(X)).reshape(X.shape[0], self.n_contexts)

    def var_grid(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.var(self.grid(X)).reshape(X.shape[0], self.n_contexts)

    def quadrature_moments(self, X, weights) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of ``sum_i p_i f(x, w_i)`` for each design row.

        ``weights`` is either one vector over the contexts or one per row.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k, n = X.shape[0], self.n_contexts
        P = np.broadcast_to(_check_weights(weights, n), (k, n))
        G = self.grid(X)
        mu = (self.mean(G).reshape(k, n) * P).sum(axis=1)
        # prior part: sum_ij p_i p_j k((x,w_i),(x,w_j)) only depends on contexts
        Kw = kern.cross(self.kernel, np.hstack([np.zeros((n, X.shape[1])), self.context_set]),
                        np.hstack([np.zeros((n, X.shape[1])), self.context_set]))
        prior = np.einsum("ki,ij,kj->k", P, Kw, P)
        if self.L is None:
            return mu, prior
        V = self._v(G).reshape(-1, k, n)  # (t, k, n)
        proj = np.einsum("tkn,kn->tk", V, P)
        var = prior - (proj * proj).sum(axis=0)
        return mu, var


def _check_weights(weights, n):
    P = np.asarray(weights, dtype=float)
    if P.shape[-1] != n:
        raise ValueError(f"weights must have {n} entries")
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("weights must sum to one")
    if np.any(P < -1e-12):
        raise ValueError("weights must be nonnegative")
    return P


def fit(dataset: Dataset, hp: GPHyperParams) -> GPPosterior:
    S = dataset.context_set
    if hp.kernel.d != dataset.d or hp.kernel.m != S.shape[1]:
        raise ValueError("kernel dimensions do not match the dataset")
    if len(dataset) == 0:
        return GPPosterior(hp, S, np.zeros((0, hp.kernel.dim)), np.zeros(0), None, np.zeros(0))
    Z = dataset.joint
    K = kern.gram(hp.kernel, Z)
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, jitter = robust_cholesky(K)
    alpha = cho_solve((L, True), dataset.y, check_finite=False)
    return GPPosterior(hp, S, Z, dataset.y.copy(), L, alpha, jitter)


def _point(p: GPPosterior, x, w):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return kern.joint_points(p.kernel, x[None, :], w[None, :])


def posterior_mean(p: GPPosterior, x, w) -> float:
    return float(p.mean(_point(p, x, w))[0])


def posterior_cov(p: GPPosterior, z1, z2) -> float:
    """Posterior covariance between joint points given as ``(x, w)`` pairs."""
    return float(p.cov(_point(p, *z1), _point(p, *z2))[0, 0])


def quadrature_mean(p: GPPosterior, x, weights) -> float:
    mu, _ = p.quadrature_moments(np.atleast_1d(x)[None, :], weights)
    return float(mu[0])


def quadrature_var(p: GPPosterior, x, weights) -> float:
    _, var = p.quadrature_moments(np.atleast_1d(x)[None, :], weights)
    return float(var[0])


def log_marginal_likelihood(dataset: Dataset, hp: GPHyperParams) -> float:
    t = len(dataset)
    if t == 0:
        return 0.0
    K = kern.gram(hp.kernel, dataset.joint)
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, _ = robust_cholesky(K)
    a = cho_solve((L, True), dataset.y, check_finite=False)
    return float(-0.5 * dataset.y @ a - np.log(np.diag(L)).sum() - 0.5 * t * np.log(2 * np.pi))


@dataclass(frozen=True)
class OutputScaler:
    """Standardises targets to zero mean and unit variance."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def from_data(cls, y) -> "OutputScaler":
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            return cls()
        std = float(y.std())
        return cls(float(y.mean()), std if std > 1e-12 else 1.0)

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class SearchSpace:
    """Box for the log-hyperparameters (natural logs; noise is a variance)."""

    log_lengthscale: tuple[float, float] = (-3.0, 2.0)
    log_amplitude: tuple[float, float] = (-3.0, 3.0)
    log_noise: tuple[float, float] = (-8.0, 0.0)
    restarts: int = 5
    isotropic: bool = False
    max_fev: int = 300

    def bounds(self, d: int, m: int) -> np.ndarray:
        n_ls = 1 if self.isotropic else d + m
        rows = [self.log_lengthscale] * n_ls + [self.log_amplitude, self.log_noise]
        return np.array(rows, dtype=float)

    def expand(self, u, d: int, m: int) -> np.ndarray:
        """Map a search vector to the full ``(log ls..., log amp, log noise)`` vector."""
        u = np.asarray(u, dtype=float)
        if self.isotropic:
            return np.concatenate([np.full(d + m, u[0]), u[1:]])
        return u

    def contract(self, v, d: int, m: int) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.isotropic:
            return np.concatenate([[v[: d + m].mean()], v[-2:]])
        return v


class _Likelihood:
    """Negative log marginal likelihood with cached per-dimension distances."""

    def __init__(self, dataset: Dataset, space: SearchSpace):
        self.y = dataset.y
        self.t = len(dataset)
        self.d = dataset.d
        self.m = dataset.context_set.shape[1]
        self.space = space
        Z = dataset.joint
        self.diff2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).reshape(self.t, self.t, -1)

    def __call__(self, u) -> float:
        v = self.space.expand(u, self.d, self.m)
        inv_ls2 = np.exp(-2.0 * v[:-2])
        amp = np.exp(v[-2])
        noise = max(np.exp(v[-1]), NOISE_FLOOR)
        K = amp * np.exp(-(self.diff2 @ inv_ls2))
        K.flat[:: self.t + 1] += noise
        # raw LAPACK: this is the inner loop of the hyperparameter search
        L, info = lapack.dpotrf(K, lower=1, clean=0, overwrite_a=1)
        if info != 0:
            return np.inf
        a, _ = lapack.dtrtrs(L, self.y, lower=1)
        return float(0.5 * a @ a + np.log(L.diagonal()).sum() + 0.5 * self.t * np.log(2 * np.pi))


def optimize_hyperparams(dataset: Dataset, space: SearchSpace = SearchSpace(),
                         rng: np.random.Generator | None = None,
                         initial: GPHyperParams | None = None) -> GPHyperParams:
    """Maximise the log marginal likelihood over a box of log-hyperparameters.

    Multi-start Nelder-Mead: the first start is ``initial`` (clipped to the
    box) or the box centre, the others are uniform in the box. The result is
    never worse than any start point or ``initial``. On numerical failure the
    previous hyperparameters are returned.
    """
    d = dataset.d
    m = dataset.context_set.shape[1]
    bounds = space.bounds(d, m)
    lo, hi = bounds[:, 0], bounds[:, 1]
    rng = np.random.default_rng(0) if rng is None else rng

    if initial is not None:
        u0 = np.clip(space.contract(initial.to_vector(), d, m), lo, hi)
    else:
        u0 = 0.5 * (lo + hi)
    starts = [u0] + [rng.uniform(lo, hi) for _ in range(max(space.restarts, 1) - 1)]
    fallback = initial if initial is not None else GPHyperParams.from_vector(space.expand(u0, d, m), d)
    if len(dataset) == 0:
        return fallback

    free = hi > lo
    nll = _Likelihood(dataset, space)

    def objective(z):
        u = lo.copy()
        u[free] = z
        return nll(u)

    best_u, best_f = None, np.inf
    if initial is not None:
        best_u = space.contract(initial.to_vector(), d, m)
        best_f = nll(best_u)
    for u in starts:
        f0 = nll(u)
        if f0 < best_f:
            best_u, best_f = u, f0
        if not free.any():
            continue
        res = minimize(objective, u[free], method="Nelder-Mead",
                       bounds=list(zip(lo[free], hi[free])),
                       options={"maxfev": space.max_fev, "xatol": 1e-3, "fatol": 1e-4})
        if np.isfinite(res.fun) and res.fun < best_f:
            cand = lo.copy()
            cand[free] = res.x
            best_u, best_f = cand, float(res.fun)
    if best_u is None or not np.isfinite(best_f):
        log.warning("hyperparameter search failed; keeping previous values")
        return fallback
    return GPHyperParams.from_vector(space.expand(best_u, d, m), d)
