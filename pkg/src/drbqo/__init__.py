"""Distributionally robust Bayesian quadrature optimisation."""

from drbqo import acquisition, benchmarks, chi2dro, gp, kernel, rff, runner

__all__ = ["acquisition", "benchmarks", "chi2dro", "gp", "kernel", "rff", "runner"]
__version__ = "0.1.0"
