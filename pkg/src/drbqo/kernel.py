"""Squared-exponential kernel on the product space of designs and contexts.

The kernel is ``amplitude * exp(-d2)`` where ``d2`` is the squared distance
scaled per dimension by the lengthscales. There is no factor of one half in
the exponent; the random-feature sampler in :mod:`drbqo.rff` relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LengthScales:
    """Per-dimension lengthscales for designs (``theta``) and contexts (``psi``)."""

    theta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        for name, v in (("theta", theta), ("psi", psi)):
            if v.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} entries must be positive and finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "psi", psi)

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def m(self) -> int:
        return self.psi.size

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.theta, self.psi])


@dataclass(frozen=True)
class KernelSpec:
    lengthscales: LengthScales
    amplitude: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError("amplitude must be positive and finite")

    @classmethod
    def isotropic(cls, d: int, m: int, lengthscale: float, amplitude: float = 1.0):
        """Shared lengthscale across every design and context dimension."""
        return cls(LengthScales(np.full(d, lengthscale), np.full(m, lengthscale)),
                   amplitude)

    @property
    def d(self) -> int:
        return self.lengthscales.d

    @property
    def m(self) -> int:
        return self.lengthscales.m

    @property
    def dim(self) -> int:
        return self.d + self.m


def joint_points(spec: KernelSpec, x, w) -> np.ndarray:
    """Stack design rows ``x`` (k, d) and context rows ``w`` (k, m) into (k, d+m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if x.shape[1] != spec.d:
        raise ValueError(f"design dimension {x.shape[1]} != {spec.d}")
    if w.shape[1] != spec.m:
        raise ValueError(f"context dimension {w.shape[1]} != {spec.m}")
    if x.shape[0] != w.shape[0]:
        raise ValueError("x and w must have the same number of rows")
    return np.hstack([x, w])


def _as_joint(spec: KernelSpec, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != spec.dim:
        raise ValueError(f"joint dimension {Z.shape[1]} != {spec.dim}")
    return Z


def sq_dist(spec: KernelSpec, Z1, Z2) -> np.ndarray:
    """Lengthscale-scaled squared distances between rows of Z1 and Z2."""
    ls = spec.lengthscales.joint
    A = _as_joint(spec, Z1) / ls
    B = _as_joint(spec, Z2) / ls
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        diff = A[:, j, None] - B[None, :, j]
        d2 += diff * diff
    return d2


def cross(spec: KernelSpec, Z1, Z2) -> np.ndarray:
    """Kernel matrix between two sets of joint points."""
    return spec.amplitude * np.exp(-sq_dist(spec, Z1, Z2))


def gram(spec: KernelSpec, Z) -> np.ndarray:
    """Symmetric Gram matrix of a nonempty set of joint points."""
    Z = _as_joint(spec, Z)
    if Z.shape[0] == 0:
        raise ValueError("gram needs at least one point")
    K = cross(spec, Z, Z)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, spec.amplitude)
    return K


def eval(spec: KernelSpec, x, w, x2, w2) -> float:  # noqa: A001
    """k((x, w), (x2, w2)) for single points."""
    x, w, x2, w2 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, w, x2, w2))
    if x.shape != (spec.d,) or x2.shape != (spec.d,):
        raise ValueError(f"design vectors must have length {spec.d}")
    if w.shape != (spec.m,) or w2.shape != (spec.m,):
        raise ValueError(f"context vectors must have length {spec.m}")
    ls = spec.lengthscales
    d2 = np.sum(((x - x2) / ls.theta) ** 2) + np.sum(((w - w2) / ls.psi) ** 2)
    return float(spec.amplitude * np.exp(-d2))
