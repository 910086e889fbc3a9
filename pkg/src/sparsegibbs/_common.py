"""Shared errors, RNG streams and small numeric helpers."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Bad user input: violated precondition or malformed object."""


class NumericalError(ArithmeticError):
    """A computation failed for numerical reasons (zero measure, divergence...)."""


class ZeroMeasureError(NumericalError):
    """The partition function vanishes: no configuration has positive weight."""


def make_rng(seed, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator for ``(seed, stream)``.

    Distinct streams of the same seed are statistically independent, so
    replicas use ``stream = replica_index``.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def tv_distance(p, q) -> float:
    """Total variation distance, half the L1 norm."""
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def atanh_guarded(x, report: dict | None = None):
    """atanh with arguments clamped to [-1+1e-15, 1-1e-15].

    Clamp events are counted in ``report['clamps']`` when a dict is given.
    """
    x = np.asarray(x, dtype=float)
    lim = 1.0 - 1e-15
    bad = np.abs(x) > lim
    if report is not None and np.any(bad):
        report["clamps"] = report.get("clamps", 0) + int(np.count_nonzero(bad))
    return np.arctanh(np.clip(x, -lim, lim))


def gamma_u(u):
    """gamma(u) = -1/2 log(1 - u^2)."""
    u = np.asarray(u, dtype=float)
    return -0.5 * np.log1p(-u * u)


def binary_entropy(x):
    """Natural-log binary entropy H(x) = -x log x - (1-x) log(1-x)."""
    from scipy.special import entr

    x = np.asarray(x, dtype=float)
    return entr(x) + entr(1.0 - x)
