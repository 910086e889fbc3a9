"""Exact and asymptotic computations for the Curie-Weiss model.

mu(x) propto exp{(beta/n) sum_{i<j} x_i x_j + B sum_i x_i} on {+1,-1}^n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gammaln, logsumexp

from ._common import ValidationError, binary_entropy


@dataclass(frozen=True)
class CwParams:
    n: int
    beta: float
    B: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if not self.beta >= 0:
            raise ValidationError("beta must be >= 0")


def _log_weights(p: CwParams):
    M = np.arange(-p.n, p.n + 1, 2)
    k = (p.n + M) // 2
    lw = (gammaln(p.n + 1) - gammaln(k + 1) - gammaln(p.n - k + 1)
          + p.B * M + p.beta * M.astype(float) ** 2 / (2 * p.n) - p.beta / 2)
    return M / p.n, lw


def magnetization_pmf(n: int, beta: float, B: float = 0.0):
    """Exact law of the mean spin on S_n = {-1, -1+2/n, ..., 1}.

    Returns (grid, pmf, log Z).
    """
    p = CwParams(n, beta, B)
    m, lw = _log_weights(p)
    lz = float(logsumexp(lw))
    return m, np.exp(lw - lz), lz


def cw_log_z(n: int, beta: float, B: float = 0.0) -> float:
    return magnetization_pmf(n, beta, B)[2]


def phi_cw(m, beta: float, B: float = 0.0):
    """varphi(m) = B m + beta m^2 / 2 + H((1+m)/2)."""
    m = np.asarray(m, float)
    return B * m + 0.5 * beta * m * m + binary_entropy((1 + m) / 2)


def sandwich_bounds(n: int, beta: float, B: float = 0.0):
    """Lower and upper bounds on P{mean spin = m} for every m in S_n."""
    m, pmf, lz = magnetization_pmf(n, beta, B)
    upper = np.exp(n * phi_cw(m, beta, B) - lz)
    lower = np.exp(-beta / 2) / (n + 1) * upper
    return m, pmf, lower, upper


@dataclass
class FixedPoints:
    roots: list
    labels: list
    B_star: float | None = None
    tangent: bool = False

    def as_dict(self):
        return {"roots": self.roots, "labels": self.labels, "B_star": self.B_star, "tangent": self.tangent}


def _roots(beta: float, B: float, grid_size: int = 10**4, tangency_gap: float = 1e-10):
    f = lambda m: np.tanh(beta * m + B) - m
    x = np.linspace(-1.0, 1.0, grid_size + 1)
    v = f(x)
    sg = np.sign(v)     # signs, not products: tiny values underflow
    roots = []
    for i in range(grid_size):
        if v[i] == 0:
            roots.append(float(x[i]))
        elif sg[i] * sg[i + 1] < 0:
            roots.append(float(optimize.bisect(f, x[i], x[i + 1], xtol=1e-15)))
    if v[-1] == 0:
        roots.append(1.0)
    # a double root touching zero between grid points: look at local extrema
    if beta > 1:
        mt = np.sqrt(1 - 1 / beta)
        for s in (-1, 1):
            xe = (s * np.arctanh(mt) - B) / beta
            if -1 < xe < 1 and abs(f(xe)) < tangency_gap and all(abs(r - xe) > 1e-6 for r in roots):
                roots.append(float(xe))
    roots = sorted(roots)
    tangent = any(b - a < tangency_gap for a, b in zip(roots, roots[1:]))
    return roots, tangent


def B_star(beta: float, tol: float = 1e-14) -> float:
    """Field above which m = tanh(beta m + B) has a single root (beta > 1).

    Bisection on B for the value of tanh(beta m + B) - m at the negative
    local minimum, where beta sech^2(beta m + B) = 1.
    """
    if beta <= 1:
        return 0.0
    a = np.arctanh(np.sqrt(1 - 1 / beta))

    def gap(B):
        m = (-a - B) / beta
        return np.tanh(beta * m + B) - m

    return float(optimize.bisect(gap, 0.0, beta, xtol=tol))


def cw_fixed_points(beta: float, B: float = 0.0) -> FixedPoints:
    """All solutions of m = tanh(beta m + B), labelled m_-, m_0, m_+."""
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    if B < 0:
        fp = cw_fixed_points(beta, -B)
        roots = [-r for r in reversed(fp.roots)]
        lab = {"m_+": "m_-", "m_-": "m_+", "m_0": "m_0"}
        return FixedPoints(roots, [lab[s] for s in reversed(fp.labels)], fp.B_star, fp.tangent)
    roots, tangent = _roots(beta, B)
    if len(roots) == 1:
        labels = ["m_+"]
    elif len(roots) == 2:
        labels = ["m_-", "m_+"]     # tangency: m_- and m_0 have merged
    else:
        labels = ["m_-", "m_0", "m_+"]
    return FixedPoints(roots, labels, B_star(beta) if beta > 1 else None, tangent)


def cw_free_entropy(beta: float, B: float = 0.0, tie_tol: float = 1e-12):
    """phi_* = sup over [-1, 1] of varphi, and the set of maximizers."""
    roots = cw_fixed_points(beta, B).roots
    vals = phi_cw(np.array(roots), beta, B)
    best = float(vals.max())
    return best, [r for r, v in zip(roots, vals) if v >= best - tie_tol]


def free_entropy_window(n: int, beta: float, B: float = 0.0):
    """(lower, phi_n, upper) with the finite-n bounds around phi_*."""
    phi_star, _ = cw_free_entropy(beta, B)
    phi_n = cw_log_z(n, beta, B) / n
    lower = phi_star - beta / (2 * n) - np.log(n * (n + 1)) / n
    upper = phi_star + np.log(n + 1) / n
    return lower, phi_n, upper


def window_mass(n: int, beta: float, B: float, center: float, radius: float) -> float:
    m, pmf, _ = magnetization_pmf(n, beta, B)
    return float(pmf[np.abs(m - center) <= radius + 1e-12].sum())


def _moments(n, beta, B):
    m, pmf, _ = magnetization_pmf(n, beta, B)
    mean = float(pmf @ m)
    return m, pmf, mean, float(pmf @ (m - mean) ** 2)


def cavity_bound_check(n: int, beta: float, B: float = 0.0):
    """|E_{n+1,beta'} X_i - E_{n,beta} X_i| and beta sinh(B+beta) sqrt(Var X-bar).

    beta' = beta (1 + 1/n); by exchangeability E X_i equals the mean spin.
    """
    _, _, mean_n, var_n = _moments(n, beta, B)
    _, _, mean_n1, _ = _moments(n + 1, beta * (1 + 1 / n), B)
    return abs(mean_n1 - mean_n), beta * np.sinh(B + beta) * np.sqrt(var_n)


def tilted_expectation(n: int, beta: float, B: float, F) -> tuple[float, float]:
    """E_{n+1,beta'} F and E_n[F cosh(B + beta X-bar)] / E_n cosh(...), for F of X-bar."""
    m, pmf, _ = magnetization_pmf(n, beta, B)
    w = np.cosh(B + beta * m)
    rhs = float(pmf @ (F(m) * w) / (pmf @ w))
    # law of the first n spins under the (n+1)-model: condition on the extra spin
    m1, pmf1, _ = magnetization_pmf(n + 1, beta * (1 + 1 / n), B)
    # P(first n spins sum to M) = sum_s P(total = M + s) * share of configurations
    M = np.rint(m * n).astype(int)
    lhs_w = np.zeros_like(m)
    for s in (1, -1):
        tot = M + s
        idx = (tot + n + 1) // 2
        k_plus = (n + M) // 2 + (s == 1)
        share = np.exp(gammaln(n + 1) - gammaln((n + M) // 2 + 1) - gammaln((n - M) // 2 + 1)
                       - (gammaln(n + 2) - gammaln(k_plus + 1) - gammaln(n + 1 - k_plus + 1)))
        lhs_w += pmf1[idx] * share
    lhs = float(lhs_w @ F(m))
    return lhs, rhs


def mean_field_constant(beta: float, B: float = 0.0) -> float:
    """beta (cosh(B+beta) + 2 sinh(B+beta)), collecting the Lipschitz bounds."""
    return float(beta * (np.cosh(B + beta) + 2 * np.sinh(abs(B) + beta)))


def mean_field_check(n: int, beta: float, B: float = 0.0):
    """|E X_i - tanh(B + beta E X-bar)| and C(beta, B) sqrt(Var X-bar)."""
    _, _, mean, var = _moments(n, beta, B)
    return abs(mean - np.tanh(B + beta * mean)), mean_field_constant(beta, B) * np.sqrt(var)
