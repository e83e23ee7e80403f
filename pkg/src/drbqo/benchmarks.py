"""Synthetic objectives, context sets, ground-truth robust values and regret."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from drbqo import chi2dro

LOGISTIC_BOUND = 1.0


@dataclass(frozen=True, eq=False)
class ObjectiveFn:
    """A deterministic ``f(x, w)`` with ``x`` given on the unit cube.

    ``native(xn, w)`` evaluates at design points in the function's own box
    ``[lower, upper]``; calling the object maps unit-cube inputs there first.
    Both accept row-stacked inputs and broadcast one context set against one
    design batch when shapes are ``(k, d)`` and ``(k, m_w)``.
    """

    name: str
    d: int
    m_w: int
    lower: np.ndarray
    upper: np.ndarray
    native: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def to_native(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.lower + u * (self.upper - self.lower)

    def to_unit(self, xn) -> np.ndarray:
        xn = np.asarray(xn, dtype=float)
        return (xn - self.lower) / (self.upper - self.lower)

    def __call__(self, u, w) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if u.shape[1] != self.d or w.shape[1] != self.m_w:
            raise ValueError(f"{self.name}: expected x of dim {self.d} and w of dim {self.m_w}")
        if np.any(u < -1e-12) or np.any(u > 1 + 1e-12):
            raise ValueError(f"{self.name}: design point outside the unit cube")
        return self.native(self.to_native(u), w)

    def table(self, U, S) -> np.ndarray:
        """Values at every (design row, context) pair, shape (k, n)."""
        U = np.atleast_2d(U)
        S = np.atleast_2d(S)
        k, n = U.shape[0], S.shape[0]
        vals = self(np.repeat(U, n, axis=0), np.tile(S, (k, 1)))
        return vals.reshape(k, n)


def _logistic(xn, w):
    return -np.logaddexp(0.0, np.einsum("ij,ij->i", xn, w))


def logistic_objective(d: int, bound: float = LOGISTIC_BOUND) -> ObjectiveFn:
    """``f(x, w) = -log(1 + exp(x.w))`` on the box ``[-bound, bound]^d``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return ObjectiveFn("logistic", d, d, np.full(d, -bound), np.full(d, bound), _logistic,
                       {"bound": bound})


def beale(z):
    x, y = z[:, 0], z[:, 1]
    return ((1.5 - x + x * y) ** 2 + (2.25 - x + x * y ** 2) ** 2
            + (2.625 - x + x * y ** 3) ** 2)


def levy(z):
    w = 1.0 + (z - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = ((w[:, :-1] - 1) ** 2 * (1 + 10 * np.sin(np.pi * w[:, :-1] + 1) ** 2)).sum(axis=1)
    tail = (w[:, -1] - 1) ** 2 * (1 + np.sin(2 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


# name -> (function to minimise, native box per dimension, fixed dimension or None)
BASE_FUNCTIONS = {
    "beale": (beale, (-4.5, 4.5), 2),
    "levy": (levy, (-10.0, 10.0), None),
}


def shifted_objective(base_name: str, d: int) -> ObjectiveFn:
    """``f(x, w) = -base(x + w)``: a standard minimisation test function,
    sign-flipped for maximisation, with the context added to the native-box
    design point.
    """
    if base_name not in BASE_FUNCTIONS:
        raise ValueError(f"unknown base function {base_name!r}; choose from {sorted(BASE_FUNCTIONS)}")
    fn, (lo, hi), fixed = BASE_FUNCTIONS[base_name]
    if fixed is not None and d != fixed:
        raise ValueError(f"{base_name} is only defined for d={fixed}")

    def native(xn, w):
        return -fn(xn + w)

    return ObjectiveFn(f"shifted_{base_name}", d, d, np.full(d, lo), np.full(d, hi), native)


def make_objective(name: str, d: int, **params) -> ObjectiveFn:
    if name == "logistic":
        return logistic_objective(d, **params)
    if name.startswith("shifted_"):
        return shifted_objective(name[len("shifted_"):], d)
    raise ValueError(f"unknown objective {name!r}")


def sample_context_set(dist: str, n: int, m_w: int, rng: np.random.Generator) -> np.ndarray:
    if dist != "standard_normal":
        raise ValueError(f"unsupported context distribution {dist!r}")
    if n < 1 or m_w < 1:
        raise ValueError("n and m_w must be positive")
    return rng.standard_normal((n, m_w))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    candidates: np.ndarray
    context_set: np.ndarray
    rho: float
    values: np.ndarray  # robust value per candidate
    weights: np.ndarray  # worst-case weights per candidate
    best_index: int
    objective: ObjectiveFn | None = None

    @property
    def x_star(self) -> np.ndarray:
        return self.candidates[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.values[self.best_index])

    def lookup(self, x) -> int | None:
        x = np.asarray(x, dtype=float)
        hit = np.flatnonzero(np.all(self.candidates == x, axis=1))
        return int(hit[0]) if hit.size else None

    def robust_value(self, x) -> float:
        i = self.lookup(x)
        if i is not None:
            return float(self.values[i])
        if self.objective is None:
            raise ValueError("point is not a candidate and no objective is attached")
        l = self.objective.table(np.atleast_2d(x), self.context_set)[0]
        return chi2dro.solve(l, self.rho).value

    def save(self, path) -> None:
        path = Path(path)
        meta = {"rho": self.rho, "best_index": self.best_index}
        if self.objective is not None:
            meta["objective"] = {"name": self.objective.name, "d": self.objective.d,
                                 "params": self.objective.params}
        with open(path, "wb") as fh:
            np.savez(fh, candidates=self.candidates, context_set=self.context_set,
                     values=self.values, weights=self.weights, meta=json.dumps(meta))

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            obj = None
            if "objective" in meta:
                o = meta["objective"]
                obj = make_objective(o["name"], o["d"], **o.get("params", {}))
            return cls(z["candidates"], z["context_set"], float(meta["rho"]), z["values"],
                       z["weights"], int(meta["best_index"]), obj)


def build_ground_truth(obj: ObjectiveFn, context_set, rho: float, candidates) -> GroundTruth:
    S = np.atleast_2d(np.asarray(context_set, dtype=float))
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    L = obj.table(X, S)
    P, values, *_ = chi2dro.solve_batch(L, rho)
    return GroundTruth(X, S, float(rho), values, P, int(np.argmax(values)), obj)


def rho_regret(x, gt: GroundTruth) -> float:
    """Robust value at the robust maximiser minus the robust value at ``x``."""
    return gt.best_value - gt.robust_value(x)


def empirical_value(obj: ObjectiveFn, x, context_set) -> float:
    """Mean of ``f(x, w)`` over the context set."""
    return float(obj.table(np.atleast_2d(x), context_set)[0].mean())
