"""Cavity recursions for ferromagnetic Ising models on trees.

Deterministic recursions on k-regular trees, population dynamics on
Galton-Watson trees, free-entropy densities and the coexistence exponent
of random k-regular graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._common import ValidationError, binary_entropy, gamma_u, make_rng
from .graph_ensembles import DegreeDistribution


def _atanh_th(theta, h):
    # atanh(theta * tanh h), exact at h = +-inf
    return np.arctanh(theta * np.tanh(h))


def beta_c(k: int) -> float:
    """Critical inverse temperature atanh(1/(k-1)) of the k-regular tree."""
    if k < 3:
        raise ValidationError("beta_c is finite only for k >= 3")
    return float(np.arctanh(1.0 / (k - 1)))


def kregular_recursion(k: int, beta: float, B: float, ell: int):
    """Upward fields h_r (r = 0..ell) and downward fields h_r^ell (r = 0..ell).

    h_r = B + (k-1) atanh(theta tanh h_{r-1}) with h_{-1} = 0, and
    h_r^ell = B + (k-2) atanh(theta tanh h_r) + atanh(theta tanh h_{r+1}^ell)
    with h_ell^ell = h_{ell-1}.
    """
    if k < 2 or ell < 0:
        raise ValidationError("need k >= 2 and ell >= 0")
    th = np.tanh(beta)
    h = np.empty(ell + 1)
    prev = 0.0
    for r in range(ell + 1):
        prev = B + (k - 1) * _atanh_th(th, prev)
        h[r] = prev
    down = np.empty(ell + 1)
    down[ell] = h[ell - 1] if ell >= 1 else 0.0
    for r in range(ell - 1, -1, -1):
        down[r] = B + (k - 2) * _atanh_th(th, h[r]) + _atanh_th(th, down[r + 1])
    return h, down


def kregular_fixed_point(k: int, beta: float, B: float, tol: float = 1e-15) -> float:
    """Largest root h* of B + (k-1) atanh(theta tanh h) - h = 0, by bisection."""
    if k < 2:
        raise ValidationError("need k >= 2")
    th = np.tanh(beta)

    def g(h):
        return B + (k - 1) * _atanh_th(th, h) - h

    hi = abs(B) + (k - 1) * abs(np.arctanh(th)) + 1.0
    grid = np.concatenate([np.linspace(-hi, hi, 4001), [-1e-9, 0.0, 1e-9]])
    grid = np.unique(grid)
    vals = g(grid)
    nonneg = np.flatnonzero(vals >= 0)
    if len(nonneg) == 0:
        raise ValidationError("no root bracketed")
    i = nonneg[-1]
    if vals[i] == 0 or i == len(grid) - 1:
        return float(grid[i])
    return float(optimize.bisect(g, grid[i], grid[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps))


def kregular_free_entropy(k: int, beta: float, h: float, B: float = 0.0) -> float:
    """phi_k = (k/2){gamma(theta) - log[1 + theta tanh^2 h]} + log{e^B[1+theta t]^k + e^-B[1-theta t]^k}."""
    th = np.tanh(beta)
    t = np.tanh(h)
    edge = 0.5 * k * (gamma_u(th) - np.log1p(th * t * t))
    vert = np.logaddexp(B + k * np.log1p(th * t), -B + k * np.log1p(-th * t))
    return float(edge + vert)


def kregular_tree_sizes(k: int, ell: int):
    """Generation sizes n_t and the edge count of T_k(ell)."""
    n_t = np.array([1] + [k * (k - 1) ** (t - 1) for t in range(1, ell + 1)], dtype=np.int64)
    return n_t, int(n_t.sum() - 1)


def kregular_tree_log_z(k: int, beta: float, B: float, ell: int, form: str = "simplified") -> float:
    """log Z of the Ising model on T_k(ell) from the cavity fields.

    ``form='full'`` evaluates edge, mixed and vertex sums separately;
    ``'simplified'`` uses the telescoped version. The gamma term carries
    the number of edges, |T_k(ell)| - 1.
    """
    if k < 3 or ell < 0:
        raise ValidationError("need k >= 3 and ell >= 0")
    th = np.tanh(beta)
    h, down = kregular_recursion(k, beta, B, ell)
    hm1 = np.concatenate([[0.0], h])          # hm1[r] = h_{r-1}
    n_t, n_edges = kregular_tree_sizes(k, ell)
    out = n_edges * gamma_u(th)
    if form == "full":
        for r in range(ell):
            out -= n_t[ell - r] * np.log1p(th * np.tanh(h[r]) * np.tanh(down[r]))
        for r in range(ell + 1):
            tp, td = np.tanh(hm1[r]), np.tanh(down[r])
            a = (k - 1) * np.log1p(th * tp) + np.log1p(th * td)
            b = (k - 1) * np.log1p(-th * tp) + np.log1p(-th * td)
            out += n_t[ell - r] * np.logaddexp(B + a, -B + b)
        return float(out)
    if form != "simplified":
        raise ValidationError("form is 'full' or 'simplified'")
    top = np.tanh(h[ell - 1]) if ell else 0.0
    out += np.logaddexp(B + k * np.log1p(th * top), -B + k * np.log1p(-th * top))
    for r in range(ell):
        t = np.tanh(hm1[r])
        out += n_t[ell - r] * np.logaddexp(B + (k - 1) * np.log1p(th * t), -B + (k - 1) * np.log1p(-th * t))
    return float(out)


def canopy_weights(k: int, tol: float = 1e-18) -> np.ndarray:
    """P(R = r) = (k-2)/(k-1)^{r+1}, truncated once the tail is below tol."""
    if k < 3:
        raise ValidationError("need k >= 3")
    rmax = int(np.ceil(np.log(tol) / -np.log(k - 1))) + 1
    return (k - 2) / (k - 1.0) ** (np.arange(rmax) + 1)


def canopy_free_entropy(k: int, beta: float, B: float) -> float:
    """lim log Z_ell / |T_k(ell)|: gamma(theta) + E log{e^B[1+theta t_{R-1}]^{k-1} + e^-B[...]}."""
    w = canopy_weights(k)
    th = np.tanh(beta)
    h, _ = kregular_recursion(k, beta, B, len(w))
    t = np.tanh(np.concatenate([[0.0], h[: len(w) - 1]]))
    terms = np.logaddexp(B + (k - 1) * np.log1p(th * t), -B + (k - 1) * np.log1p(-th * t))
    return float(gamma_u(th) + np.dot(w, terms) / w.sum())


def coexistence_eta(k: int, beta: float, u: float):
    """(delta_*, eta_k) for the balanced-cut count at fraction u.

    delta_* is the positive root of delta^2 (e^{4 beta} - 1) + delta - u(1-u) = 0.
    """
    if not 0 < u < 1 or beta < 0:
        raise ValidationError("need u in (0, 1) and beta >= 0")
    c = u * (1 - u)
    delta = 2 * c / (1 + np.sqrt(1 + 4 * np.expm1(4 * beta) * c))
    eta = (beta * k / 2 + (1 - k) * binary_entropy(u)
           - 0.5 * k * (u * np.log(u - delta) + (1 - u) * np.log(1 - u - delta)))
    return float(delta), float(eta)


# ------------------------------------------------------------ populations


@dataclass
class Population:
    h: np.ndarray
    generation: int = 0

    def summary(self, n_batches: int = 20) -> dict:
        t = np.tanh(self.h)
        bm = np.array([b.mean() for b in np.array_split(self.h, n_batches)])
        return {
            "generation": self.generation,
            "size": int(len(self.h)),
            "mean": float(self.h.mean()),
            "se": float(bm.std(ddof=1) / np.sqrt(n_batches)) if n_batches > 1 else float("nan"),
            "tanh_quantiles": dict(zip(["q05", "q25", "q50", "q75", "q95"],
                                       map(float, np.quantile(t, [0.05, 0.25, 0.5, 0.75, 0.95])))),
        }


def density_evolution_ising(offspring: DegreeDistribution, beta: float, B: float,
                            population_size: int = 10**5, iters: int = 100, seed=None,
                            init: str | float = "free", rng_stream: int = 0) -> Population:
    """h' = B + sum_{i <= K} atanh(theta tanh h_i), K ~ offspring, h_i resampled.

    ``init='free'`` starts at 0 and ``'plus'`` at +inf (the plus boundary).
    """
    if population_size < 1 or iters < 0:
        raise ValidationError("population_size >= 1 and iters >= 0 required")
    rng = make_rng(seed, rng_stream)
    th = np.tanh(beta)
    if init == "free":
        h = np.zeros(population_size)
    elif init == "plus":
        h = np.full(population_size, np.inf)
    else:
        h = np.full(population_size, float(init))
    owner_buf = np.arange(population_size)
    for _ in range(iters):
        K = offspring.sample(rng, population_size)
        idx = rng.integers(0, population_size, size=int(K.sum()))
        contrib = _atanh_th(th, h[idx])
        h = B + np.bincount(np.repeat(owner_buf, K), weights=contrib, minlength=population_size)
    return Population(h, iters)


@dataclass
class TreeFreeEntropyParts:
    edge: float
    mixed: float
    vertex: float
    se: float = 0.0

    @property
    def total(self) -> float:
        return self.edge + self.mixed + self.vertex


def gw_free_entropy(P: DegreeDistribution, beta: float, B: float, population: Population,
                    n_samples: int = 10**5, seed=None) -> TreeFreeEntropyParts:
    """Monte Carlo estimate of the Bethe free-entropy density on GW(P) trees.

    Samples L ~ P and i.i.d. fields h_j from the population; h_{-j} is
    built from the other L - 1 fields.
    """
    rng = make_rng(seed, 1)
    th = np.tanh(beta)
    L = P.sample(rng, n_samples)
    tot = int(L.sum())
    owner = np.repeat(np.arange(n_samples), L)
    hj = population.h[rng.integers(0, len(population.h), size=tot)]
    a = _atanh_th(th, hj)
    S = np.bincount(owner, weights=a, minlength=n_samples)
    h_minus = B + S[owner] - a
    tj = np.tanh(hj)
    edge = 0.5 * L * gamma_u(th)
    mixed = -0.5 * np.bincount(owner, weights=np.log1p(th * np.tanh(h_minus) * tj), minlength=n_samples)
    lp = np.bincount(owner, weights=np.log1p(th * tj), minlength=n_samples)
    lm = np.bincount(owner, weights=np.log1p(-th * tj), minlength=n_samples)
    vert = np.logaddexp(B + lp, -B + lm)
    per = edge + mixed + vert
    se = float(per.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return TreeFreeEntropyParts(float(edge.mean()), float(mixed.mean()), float(vert.mean()), se)
