"""Approximate GP posterior draws with random Fourier features.

For the kernel ``a * exp(-sum_j (z_j - z'_j)^2 / l_j^2)`` Bochner's theorem
gives frequencies ``omega_j ~ Normal(0, 2 / l_j^2)``, since
``E[cos(omega * tau)] = exp(-var * tau^2 / 2)``. With phases
``b ~ U[0, 2 pi)`` the features ``sqrt(2 a / m) cos(W z + b)`` have inner
products that approximate the kernel. A Bayesian linear regression on these
features with a standard normal prior on the weights gives a posterior over
whole functions that can be drawn and evaluated anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from drbqo.gp import Dataset, robust_cholesky
from drbqo.kernel import KernelSpec

DEFAULT_FEATURES = 1000


class UnsupportedKernelError(TypeError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureMap:
    W: np.ndarray  # (m, D) frequencies
    b: np.ndarray  # (m,) phases
    alpha: float

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def __call__(self, Z) -> np.ndarray:
        """Feature matrix for the rows of ``Z``, shape (k, m)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise ValueError(f"joint dimension {Z.shape[1]} != {self.dim}")
        return np.sqrt(2.0 * self.alpha / self.m) * np.cos(Z @ self.W.T + self.b)


def build_feature_map(spec: KernelSpec, m: int, rng: np.random.Generator) -> FeatureMap:
    if not isinstance(spec, KernelSpec):
        raise UnsupportedKernelError("random features are only derived for the SE kernel")
    if m < 1:
        raise ValueError("need at least one feature")
    ls = spec.lengthscales.joint
    W = rng.standard_normal((m, ls.size)) * (np.sqrt(2.0) / ls)
    b = rng.uniform(0.0, 2.0 * np.pi, size=m)
    return FeatureMap(W, b, float(spec.amplitude))


@dataclass(frozen=True, eq=False)
class BlrPosterior:
    """Gaussian posterior N(mean, V) over feature weights.

    ``V = noise * A^{-1}`` with ``A = Phi^T Phi + noise I``; ``chol_A`` is the
    lower Cholesky factor of ``A`` so ``sqrt(noise) * chol_A^{-T}`` is a
    square root of ``V``.
    """

    feature_map: FeatureMap
    mean: np.ndarray
    chol_A: np.ndarray
    noise_variance: float

    @property
    def cov(self) -> np.ndarray:
        Ainv = cho_solve((self.chol_A, True), np.eye(self.mean.size), check_finite=False)
        return self.noise_variance * Ainv


def fit_blr(fm: FeatureMap, dataset: Dataset, noise_variance: float) -> BlrPosterior:
    m = fm.m
    A = np.zeros((m, m))
    rhs = np.zeros(m)
    if len(dataset):
        Phi = fm(dataset.joint)
        A = Phi.T @ Phi
        rhs = Phi.T @ dataset.y
    A[np.diag_indices(m)] += noise_variance
    L, _ = robust_cholesky(A)
    mean = cho_solve((L, True), rhs, check_finite=False)
    return BlrPosterior(fm, mean, L, float(noise_variance))


@dataclass(frozen=True, eq=False)
class FunctionSample:
    theta: np.ndarray
    feature_map: FeatureMap

    def __call__(self, Z) -> np.ndarray:
        return self.feature_map(Z) @ self.theta

    def table(self, X, S) -> np.ndarray:
        """Values at every (design row, context row) pair, shape (k, n).

        Splits each phase into a design part and a context part,
        ``cos(a + c) = cos a cos c - sin a sin c``, so trigonometric work is
        (k + n) * m instead of k * n * m.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        S = np.atleast_2d(np.asarray(S, dtype=float))
        fm = self.feature_map
        d = X.shape[1]
        if d + S.shape[1] != fm.dim:
            raise ValueError("design and context dimensions do not match the feature map")
        a = X @ fm.W[:, :d].T
        c = S @ fm.W[:, d:].T + fm.b
        coef = np.sqrt(2.0 * fm.alpha / fm.m) * self.theta
        return np.cos(a) @ (np.cos(c) * coef).T - np.sin(a) @ (np.sin(c) * coef).T


def draw_sample(post: BlrPosterior, rng: np.random.Generator) -> FunctionSample:
    xi = rng.standard_normal(post.mean.size)
    noise = solve_triangular(post.chol_A.T, xi, lower=False, check_finite=False)
    theta = post.mean + np.sqrt(post.noise_variance) * noise
    return FunctionSample(theta, post.feature_map)


def eval_sample(s: FunctionSample, x, w) -> float:
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(w)]).astype(float)
    return float(s(z[None, :])[0])


def draw_sample_dual(fm: FeatureMap, dataset: Dataset, noise_variance: float,
                     rng: np.random.Generator) -> FunctionSample:
    """Exact posterior draw using only a t x t solve (Matheron's rule).

    With ``theta0 ~ N(0, I)`` and ``eps ~ N(0, noise I)``,
    ``theta0 + Phi^T (Phi Phi^T + noise I)^{-1} (y - Phi theta0 - eps)`` has
    the same law as a draw from :func:`fit_blr`'s posterior. Cheaper than
    the m x m factorisation whenever there are fewer observations than features.
    """
    theta0 = rng.standard_normal(fm.m)
    if len(dataset) == 0:
        return FunctionSample(theta0, fm)
    Phi = fm(dataset.joint)
    eps = np.sqrt(noise_variance) * rng.standard_normal(len(dataset))
    K = Phi @ Phi.T
    K[np.diag_indices_from(K)] += noise_variance
    L, _ = robust_cholesky(K)
    resid = dataset.y - Phi @ theta0 - eps
    return FunctionSample(theta0 + Phi.T @ cho_solve((L, True), resid, check_finite=False), fm)


def sample_posterior(spec: KernelSpec, dataset: Dataset, noise_variance: float,
                     rng: np.random.Generator, m: int = DEFAULT_FEATURES) -> FunctionSample:
    """Fresh feature map and one posterior function draw.

    Uses the t x t form when ``t < m`` and the weight-space regression otherwise.
    """
    fm = build_feature_map(spec, m, rng)
    if len(dataset) < m:
        return draw_sample_dual(fm, dataset, noise_variance, rng)
    return draw_sample(fit_blr(fm, dataset, noise_variance), rng)
