"""XORSAT: GF(2) linear algebra, hypergraph 2-core peeling and finite-size scaling.

Two conventions appear here. For linear systems a ``FactorGraph`` has
variables as v-nodes and equations as c-nodes, and ``parity_matrix()``
is H. For peeling the roles are dual: v-nodes are hyper-edges with ``l``
sockets each and c-nodes are hypergraph vertices; ``n`` counts v-nodes,
``m = floor(n rho)`` counts c-nodes and ``gamma = l / rho``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammainc

from ._common import NumericalError, ValidationError, make_rng
from .graph_ensembles import FactorGraph

# ------------------------------------------------------------ GF(2) systems


def _pack(dense: np.ndarray) -> np.ndarray:
    dense = np.asarray(dense, dtype=np.uint8) & 1
    m, n = dense.shape
    W = max(1, -(-n // 64))
    pad = np.zeros((m, W * 64), dtype=np.uint8)
    pad[:, :n] = dense
    return np.packbits(pad, axis=1, bitorder="little").view("<u8").astype(np.uint64)


def _unpack(words: np.ndarray, n: int) -> np.ndarray:
    w = np.ascontiguousarray(words.astype("<u8"))
    bits = np.unpackbits(w.view(np.uint8), axis=1, bitorder="little")
    return bits[:, :n]


class Gf2System:
    """H x = b over GF(2); rows of H are packed into 64-bit words."""

    def __init__(self, rows: np.ndarray, n_cols: int, b=None):
        rows = np.asarray(rows, dtype=np.uint64)
        if rows.ndim != 2:
            raise ValidationError("packed rows must be 2-D")
        self.rows = rows
        self.n_cols = int(n_cols)
        self.b = np.zeros(len(rows), np.uint8) if b is None else (np.asarray(b, np.uint8).ravel() & 1)
        if len(self.b) != len(rows):
            raise ValidationError("b must have one entry per row")

    @property
    def m_rows(self) -> int:
        return len(self.rows)

    @classmethod
    def from_dense(cls, H, b=None) -> "Gf2System":
        H = np.atleast_2d(np.asarray(H, dtype=np.uint8))
        return cls(_pack(H), H.shape[1], b)

    @classmethod
    def from_factor_graph(cls, fg: FactorGraph, b=None) -> "Gf2System":
        """Rows are c-nodes, columns v-nodes; repeated couples cancel mod 2."""
        return cls.from_dense(fg.parity_matrix(), b)

    def to_dense(self) -> np.ndarray:
        return _unpack(self.rows, self.n_cols)

    def row_weights(self) -> np.ndarray:
        return np.bitwise_count(self.rows).astype(np.int64).sum(axis=1)

    def transpose(self) -> "Gf2System":
        return Gf2System.from_dense(self.to_dense().T)

    def with_rhs(self, b) -> "Gf2System":
        return Gf2System(self.rows, self.n_cols, b)

    def to_text(self) -> str:
        H = self.to_dense()
        lines = [f"{self.m_rows} {self.n_cols}"]
        lines += [" ".join(map(str, np.flatnonzero(r))) for r in H]
        lines.append("".join(map(str, self.b.tolist())))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Gf2System":
        lines = text.split("\n")
        try:
            m, n = map(int, lines[0].split())
            H = np.zeros((m, n), dtype=np.uint8)
            for i in range(m):
                idx = [int(t) for t in lines[1 + i].split()]
                if idx != sorted(set(idx)) or (idx and (idx[0] < 0 or idx[-1] >= n)):
                    raise ValidationError(f"row {i}: column indices must be sorted, distinct, in range")
                H[i, idx] = 1
            bs = lines[1 + m].strip()
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"malformed GF(2) system text: {exc}") from exc
        if len(bs) != m or set(bs) - {"0", "1"}:
            raise ValidationError("b line must be a 0/1 string of length m")
        return cls.from_dense(H, np.frombuffer(bs.encode(), np.uint8) - ord("0"))

    def __eq__(self, other):
        return (isinstance(other, Gf2System) and self.n_cols == other.n_cols
                and np.array_equal(self.rows, other.rows) and np.array_equal(self.b, other.b))

    def __repr__(self):
        return f"Gf2System(m={self.m_rows}, n={self.n_cols})"


@dataclass
class _Echelon:
    rows: np.ndarray      # reduced rows, pivots first
    b: np.ndarray
    pivots: list
    transform: np.ndarray | None   # packed m x m row operations (rows of T H = rref)


def _eliminate(sys: Gf2System, track: bool = False) -> _Echelon:
    rows = sys.rows.copy()
    b = sys.b.copy()
    m = len(rows)
    T = _pack(np.eye(m, dtype=np.uint8)) if track else None
    pivots = []
    r = 0
    for j in range(sys.n_cols):
        if r == m:
            break
        w, bit = j >> 6, np.uint64(1) << np.uint64(j & 63)
        col = (rows[:, w] & bit) != 0
        cand = np.flatnonzero(col[r:])
        if len(cand) == 0:
            continue
        p = r + int(cand[0])
        if p != r:
            rows[[r, p]] = rows[[p, r]]
            b[[r, p]] = b[[p, r]]
            col[[r, p]] = col[[p, r]]
            if track:
                T[[r, p]] = T[[p, r]]
        col[r] = False
        rows[col] ^= rows[r]
        b[col] ^= b[r]
        if track:
            T[col] ^= T[r]
        pivots.append(j)
        r += 1
    return _Echelon(rows, b, pivots, T)


@dataclass
class Gf2Solution:
    rank: int
    satisfiable: bool
    solution: np.ndarray | None
    log2_count: float
    weight_enumerator: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {
            "rank": self.rank,
            "satisfiable": self.satisfiable,
            "solution": None if self.solution is None else self.solution.tolist(),
            "log2_count": self.log2_count,
            "weight_enumerator": None if self.weight_enumerator is None else self.weight_enumerator.tolist(),
        }


def _null_basis(ech: _Echelon, n: int) -> list[int]:
    """Kernel basis of H as integer bit masks (n <= 62)."""
    R = _unpack(ech.rows[: len(ech.pivots)], n)
    free = sorted(set(range(n)) - set(ech.pivots))
    basis = []
    for f in free:
        v = 1 << f
        for i, p in enumerate(ech.pivots):
            if R[i, f]:
                v |= 1 << p
        basis.append(v)
    return basis


def gf2_solve(sys: Gf2System, weights: bool | None = None) -> Gf2Solution:
    """Rank, satisfiability, one solution and log2 of the solution count.

    The weight enumerator (counts of solutions of H x = 0 by Hamming
    weight) is returned when n <= 20, or when ``weights=True``.
    """
    ech = _eliminate(sys)
    r = len(ech.pivots)
    n = sys.n_cols
    sat = not np.any(ech.b[r:])
    x = None
    if sat:
        x = np.zeros(n, dtype=np.uint8)
        x[ech.pivots] = ech.b[:r]
    if weights is None:
        weights = n <= 20
    wen = None
    if weights:
        if n > 30:
            raise ValidationError("weight enumerator is limited to n <= 30")
        sols = np.zeros(1, dtype=np.int64)
        for v in _null_basis(ech, n):
            sols = np.concatenate([sols, sols ^ np.int64(v)])
        wen = np.bincount(np.bitwise_count(sols).astype(np.int64), minlength=n + 1)
    return Gf2Solution(r, sat, x, float(n - r) if sat else float("-inf"), wen)


def gf2_rank(sys: Gf2System) -> int:
    return len(_eliminate(sys).pivots)


def gf2_apply(sys: Gf2System, x) -> np.ndarray:
    """H x mod 2."""
    xp = _pack(np.asarray(x, np.uint8)[None, :])[0]
    return (np.bitwise_count(sys.rows & xp).astype(np.int64).sum(axis=1) & 1).astype(np.uint8)


def satisfiable_rhs_fraction(sys: Gf2System) -> float:
    """Fraction of all 2^m right-hand sides b making H x = b solvable, by enumeration over b."""
    m = sys.m_rows
    if m > 24:
        raise ValidationError("enumeration over b is limited to m <= 24")
    ech = _eliminate(sys, track=True)
    r = len(ech.pivots)
    checks = _unpack(ech.transform[r:], m)          # b consistent iff checks @ b = 0
    masks = (checks.astype(np.int64) << np.arange(m, dtype=np.int64)).sum(axis=1)
    allb = np.arange(2**m, dtype=np.int64)
    ok = np.ones(len(allb), dtype=bool)
    for c in masks:
        ok &= (np.bitwise_count(allb & c) & 1) == 0
    return float(ok.mean())


def satisfiability_identity_check(sampler, trials: int, seed=None) -> dict:
    """Monte Carlo version of P(sat) = 2^{n-m} E[1/Z_H] >= P(Z_{H^T} = 1).

    ``sampler(rng)`` returns a ``Gf2System`` (its b is ignored); b is
    drawn uniformly. Estimates come with standard errors; ``exact_mean``
    is E[2^{rank-m}], the conditional satisfiability probability averaged
    over the sampled matrices.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rng = make_rng(seed, 7)
    sat = np.empty(trials)
    inv = np.empty(trials)
    full = np.empty(trials)
    for t in range(trials):
        H = sampler(rng)
        b = rng.integers(0, 2, size=H.m_rows, dtype=np.uint8)
        sol = gf2_solve(H.with_rhs(b), weights=False)
        sat[t] = sol.satisfiable
        inv[t] = 2.0 ** (sol.rank - H.m_rows)
        full[t] = sol.rank == H.m_rows
    se = lambda a: float(a.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    out = {
        "p_sat": float(sat.mean()), "p_sat_se": se(sat),
        "inv_z": float(inv.mean()), "inv_z_se": se(inv),
        "p_full_rank": float(full.mean()), "p_full_rank_se": se(full),
        "trials": trials,
    }
    out["equality_within_ci"] = abs(out["p_sat"] - out["inv_z"]) <= 3 * max(out["p_sat_se"], 1e-12) + 1e-12
    out["inequality_holds"] = bool(np.all(inv >= full))
    return out


# ------------------------------------------------------------ peeling


@dataclass
class PeelingTrajectory:
    tau: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    core_vnodes: np.ndarray
    core_cnodes: np.ndarray
    stop_reason: str
    l: int = 0

    @property
    def tau_hat(self) -> int:
        return int(self.tau[-1])

    @property
    def core_empty(self) -> bool:
        return len(self.core_vnodes) == 0

    def as_dict(self) -> dict:
        return {"tau_hat": self.tau_hat, "stop_reason": self.stop_reason,
                "core_vnodes": int(len(self.core_vnodes)), "core_cnodes": int(len(self.core_cnodes)),
                "z1": self.z1.tolist(), "z2": self.z2.tolist()}


def _peel_state(fg: FactorGraph):
    v, c = fg.edges[:, 0], fg.edges[:, 1]
    deg = np.bincount(c, minlength=fg.n_cnodes)
    xv = np.zeros(fg.n_cnodes, dtype=np.int64)
    np.bitwise_xor.at(xv, c, v)
    return deg.tolist(), xv.tolist(), fg.vnode_members()


def peel_core(fg: FactorGraph, seed=None) -> PeelingTrajectory:
    """Peel a uniformly chosen degree-1 c-node (and its v-node) until none is left.

    Each c-node carries its degree and the XOR of incident v-node ids, so
    the v-node of a degree-1 c-node is read off in O(1).
    """
    rng = make_rng(seed, 11)
    deg, xv, members = _peel_state(fg)
    ones = [a for a, d in enumerate(deg) if d == 1]
    pos = [-1] * fg.n_cnodes
    for i, a in enumerate(ones):
        pos[a] = i
    z1 = len(ones)
    z2 = sum(1 for d in deg if d >= 2)
    alive = [True] * fg.n_vnodes
    U = rng.random(fg.n_vnodes + 1).tolist()
    tau_l, z1_l, z2_l = [0], [z1], [z2]
    tau = 0
    while ones:
        a = ones[int(U[tau] * len(ones))]
        i = xv[a]
        alive[i] = False
        for b in members[i]:
            d = deg[b]
            deg[b] = d - 1
            xv[b] ^= i
            if d == 1:
                k = pos[b]
                last = ones.pop()
                if last != b:
                    ones[k] = last
                    pos[last] = k
                pos[b] = -1
                z1 -= 1
            elif d == 2:
                pos[b] = len(ones)
                ones.append(b)
                z1 += 1
                z2 -= 1
        tau += 1
        tau_l.append(tau)
        z1_l.append(z1)
        z2_l.append(z2)
    core_v = np.flatnonzero(alive)
    core_c = np.flatnonzero(np.asarray(deg) > 0)
    return PeelingTrajectory(np.array(tau_l), np.array(z1_l), np.array(z2_l), core_v, core_c,
                             "core" if len(core_v) else "empty",
                             int(fg.vnode_degrees().max()) if fg.n_vnodes else 0)


def two_core(fg: FactorGraph) -> np.ndarray:
    """Boolean mask of v-nodes in the 2-core (stack-based peeling, no trajectory)."""
    deg, xv, members = _peel_state(fg)
    alive = [True] * fg.n_vnodes
    stack = [a for a, d in enumerate(deg) if d == 1]
    while stack:
        a = stack.pop()
        if deg[a] != 1:
            continue
        i = xv[a]
        alive[i] = False
        for b in members[i]:
            deg[b] -= 1
            xv[b] ^= i
            if deg[b] == 1:
                stack.append(b)
    return np.array(alive, dtype=bool)


def _core_nonempty_sockets(cs: np.ndarray, n: int, l: int, m: int) -> bool:
    vs = np.repeat(np.arange(n, dtype=np.int64), l)
    deg = np.bincount(cs, minlength=m).tolist()
    xv_a = np.zeros(m, dtype=np.int64)
    np.bitwise_xor.at(xv_a, cs, vs)
    xv = xv_a.tolist()
    members = cs.reshape(n, l).tolist()
    removed = 0
    stack = [a for a, d in enumerate(deg) if d == 1]
    while stack:
        a = stack.pop()
        if deg[a] != 1:
            continue
        i = xv[a]
        removed += 1
        for b in members[i]:
            deg[b] -= 1
            xv[b] ^= i
            if deg[b] == 1:
                stack.append(b)
    return removed < n


# ------------------------------------------------------------ smoothed kernel


def _f_lambda(lam):
    # lambda (1 - e^-lambda) / (1 - e^-lambda - lambda e^-lambda), with its derivative
    lam = np.asarray(lam, float)
    small = lam < 1e-3
    x = np.where(small, lam, 0.0)           # series argument
    ls = np.where(small, 1.0, lam)
    a = -np.expm1(-ls)
    g = gammainc(2, ls)
    le = np.exp(np.log(ls) - ls)            # lambda e^-lambda without inf * 0
    f = np.where(small, 2 + x / 3 + x**2 / 18 + x**3 / 270 - x**4 / 3240, ls * a / g)
    fp = np.where(small, 1 / 3 + x / 9 + x**2 / 90 - x**3 / 810,
                  (a + le) / g - a * ls * le / g**2)
    return f, fp


def _ratio(lam):
    # lambda^2 e^-lambda / (1 - e^-lambda - lambda e^-lambda)
    lam = np.asarray(lam, float)
    small = lam < 1e-3
    x = np.where(small, lam, 0.0)
    ls = np.where(small, 1.0, lam)
    return np.where(small, 2 - 2 * x / 3 + x**2 / 18 + x**3 / 270,
                    np.exp(2 * np.log(ls) - ls) / gammainc(2, ls))


def solve_lambda(R, tol: float = 1e-14, max_iter: int = 60):
    """Positive root of f(lambda) = R (R >= 2), vectorized.

    Newton steps safeguarded by the bracket [max(R-2, 0), R] (since
    0 < f(lambda) - lambda <= 2), with bisection whenever Newton leaves it.
    R <= 2 gives 0 and R = inf gives inf.
    """
    R = np.asarray(R, float)
    out = np.where(np.isinf(R), np.inf, 0.0)
    act = np.isfinite(R) & (R > 2)
    if not np.any(act):
        return out
    r = R[act]
    lo = np.maximum(r - 2, 0.0)
    hi = r.copy()
    lam = np.clip(r - _ratio(r), lo, hi)
    for _ in range(max_iter):
        f, fp = _f_lambda(lam)
        res = f - r
        lo = np.where(res < 0, lam, lo)
        hi = np.where(res > 0, lam, hi)
        if np.all(np.abs(res) <= tol * r):
            break
        step = lam - res / fp
        bad = (step <= lo) | (step >= hi) | ~np.isfinite(step)
        lam = np.where(bad, 0.5 * (lo + hi), step)
    out[act] = lam
    return out


def _lambda_scalar(R: float, tol: float = 1e-14) -> float:
    # scalar twin of solve_lambda, used inside the ODE loops
    if R <= 2:
        return 0.0
    if math.isinf(R):
        return math.inf
    lo, hi = max(R - 2, 0.0), R
    lam = min(max(R - float(_ratio(R)), lo), hi)
    for _ in range(60):
        if lam < 1e-3:
            f = 2 + lam / 3 + lam**2 / 18 + lam**3 / 270 - lam**4 / 3240
            fp = 1 / 3 + lam / 9 + lam**2 / 90 - lam**3 / 810
        else:
            le = math.exp(math.log(lam) - lam)
            a = -math.expm1(-lam)
            g = float(gammainc(2.0, lam))
            f = lam * a / g
            fp = (a + le) / g - a * lam * le / (g * g)
        res = f - R
        if res < 0:
            lo = lam
        elif res > 0:
            hi = lam
        if abs(res) <= tol * R:
            break
        step = lam - res / fp
        lam = step if lo < step < hi else 0.5 * (lo + hi)
    return lam


def _ratio_scalar(lam: float) -> float:
    if lam < 1e-3:
        return 2 - 2 * lam / 3 + lam**2 / 18 + lam**3 / 270
    return math.exp(2 * math.log(lam) - lam) / float(gammainc(2.0, lam))


def _drift_scalar(theta: float, y1: float, y2: float, l: int):
    s = l * (1.0 - theta)
    p0 = y1 / s
    if y2 > 0:
        lam = _lambda_scalar(max((s - y1) / y2, 2.0))
        p1 = y2 * _ratio_scalar(lam) / s
    else:
        p1 = 0.0
    return -1.0 + (l - 1) * (p1 - p0), -(l - 1) * p1, p0, p1


@dataclass
class KernelParams:
    p0: float
    p1: float
    p2: float
    lam: float
    x1: float
    x2: float
    theta: float
    l: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _probs(x1, x2, theta, l):
    s = l * (1.0 - np.asarray(theta, float))
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        R = np.where(x2 > 0, np.maximum((s - x1) / np.where(x2 > 0, x2, 1.0), 2.0), np.inf)
    lam = solve_lambda(R)
    p1 = np.where(x2 > 0, x2 * _ratio(np.where(np.isfinite(lam), lam, 1.0)) / s, 0.0)
    return x1 / s, p1, lam


def kernel_support(l: int):
    """(q0, q1, q2) with q0 >= 1 and q0 + q1 + q2 = l, mapped to (dz1, dz2) = (q1 - q0, -q1)."""
    out = []
    for q0 in range(1, l + 1):
        for q1 in range(0, l - q0 + 1):
            out.append((q0, q1, l - q0 - q1))
    return out


def kernel_hat(x1: float, x2: float, theta: float, l: int, tol: float = 1e-12):
    """Smoothed one-step law of (dz1, dz2) at scaled state (x1, x2) and time theta.

    Returns (KernelParams, {(dz1, dz2): probability}).
    """
    if l < 2:
        raise ValidationError("need l >= 2")
    if not 0 <= theta < 1:
        raise ValidationError("theta must lie in [0, 1)")
    if x1 <= 0 or x2 < 0:
        raise ValidationError("need x1 > 0 and x2 >= 0 for a peeling step")
    if x1 + 2 * x2 > l * (1 - theta) + tol:
        raise ValidationError("infeasible state: x1 + 2 x2 > l (1 - theta)")
    p0, p1, lam = (float(v) for v in _probs(x1, x2, theta, l))
    p2 = 1.0 - p0 - p1
    if p2 < -tol:
        raise NumericalError(f"kernel probabilities leave the simplex (p2 = {p2})")
    p2 = max(p2, 0.0)
    pmf = {}
    for q0, q1, q2 in kernel_support(l):
        c = math.comb(l - 1, q0 - 1) * math.comb(l - q0, q1)
        pr = c * p0 ** (q0 - 1) * p1**q1 * p2**q2
        pmf[(q1 - q0, -q1)] = pmf.get((q1 - q0, -q1), 0.0) + pr
    return KernelParams(p0, p1, p2, lam, float(x1), float(x2), float(theta), int(l)), pmf


# ------------------------------------------------------------ mean and covariance ODEs


def _drift(theta, y1, y2, l):
    p0, p1, _ = _probs(y1, y2, theta, l)
    return -1.0 + (l - 1) * (p1 - p0), -(l - 1) * p1, p0, p1


def initial_state(l: int, rho: float):
    """y(0) = rho (gamma e^-gamma, 1 - e^-gamma - gamma e^-gamma)."""
    g = l / rho
    return rho * g * math.exp(-g), rho * float(gammainc(2, g))


def initial_covariance(l: int, rho: float) -> np.ndarray:
    """Q(0): per-c-node Poisson(gamma) covariance conditioned on the socket total, times rho."""
    g = l / rho
    e2 = math.exp(-2 * g)
    eg = math.exp(g)
    q11 = rho * g * e2 * (eg - 1 + g - g * g)
    q12 = -rho * g * e2 * (eg - 1 - g * g)
    q22 = rho * e2 * ((eg - 1) + g * (eg - 2) - g * g * (1 + g))
    return np.array([[q11, q12], [q12, q22]])


def y1_closed_form(theta, l: int, rho: float):
    """y1(theta) = l u^{l-1} h(u), u = (1-theta)^{1/l}, h(u) = u - 1 + exp(-gamma u^{l-1})."""
    u = (1.0 - np.asarray(theta, float)) ** (1.0 / l)
    g = l / rho
    return l * u ** (l - 1) * (u - 1 + np.exp(-g * u ** (l - 1)))


def y2_closed_form(theta, l: int, rho: float):
    u = (1.0 - np.asarray(theta, float)) ** (1.0 / l)
    return rho * gammainc(2, (l / rho) * u ** (l - 1))


def _grid(step: float, theta_end: float) -> np.ndarray:
    K = max(1, int(math.ceil(theta_end / step - 1e-9)))
    return np.linspace(0.0, theta_end, K + 1)


def _rk4_mean_scalar(l: int, rho: float, theta) -> np.ndarray:
    y1, y2 = initial_state(l, rho)
    out = np.empty((len(theta), 2))
    out[0] = y1, y2
    th = theta.tolist()
    for j in range(len(th) - 1):
        t, h = th[j], th[j + 1] - th[j]
        a1, a2, _, _ = _drift_scalar(t, y1, y2, l)
        b1, b2, _, _ = _drift_scalar(t + h / 2, y1 + h / 2 * a1, y2 + h / 2 * a2, l)
        c1, c2, _, _ = _drift_scalar(t + h / 2, y1 + h / 2 * b1, y2 + h / 2 * b2, l)
        d1, d2, _, _ = _drift_scalar(t + h, y1 + h * c1, y2 + h * c2, l)
        y1 += h / 6 * (a1 + 2 * b1 + 2 * c1 + d1)
        y2 += h / 6 * (a2 + 2 * b2 + 2 * c2 + d2)
        out[j + 1] = y1, y2
    return out


def _rk4_mean(l: int, rhos, theta) -> np.ndarray:
    """Mean ODE on the grid for each rho; shape (len(theta), 2, len(rhos))."""
    rhos = np.atleast_1d(np.asarray(rhos, float))
    return np.stack([_rk4_mean_scalar(l, float(r), theta) for r in rhos], axis=2)


@dataclass
class OdeTrajectory:
    theta: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    l: int
    rho: float
    theta_star: float | None = None
    closed_form_gap: float = float("nan")
    Q11: np.ndarray | None = None
    Q12: np.ndarray | None = None
    Q22: np.ndarray | None = None

    def Q(self, j: int) -> np.ndarray:
        return np.array([[self.Q11[j], self.Q12[j]], [self.Q12[j], self.Q22[j]]])

    def as_dict(self, stride: int = 1) -> dict:
        d = {"l": self.l, "rho": self.rho, "theta_star": self.theta_star,
             "closed_form_gap": self.closed_form_gap,
             "theta": self.theta[::stride].tolist(), "y1": self.y1[::stride].tolist(),
             "y2": self.y2[::stride].tolist()}
        if self.Q11 is not None:
            d.update(Q11=self.Q11[::stride].tolist(), Q12=self.Q12[::stride].tolist(),
                     Q22=self.Q22[::stride].tolist())
        return d


def _check_ode_args(l, rho, step):
    if l < 3:
        raise ValidationError("need l >= 3")
    if not rho > 0:
        raise ValidationError("need rho > 0")
    if not 0 < step <= 1e-3:
        raise ValidationError("step must lie in (0, 1e-3]")


def _theta_star(theta, y1, l, rho):
    neg = np.flatnonzero(y1 < 0)
    if len(neg) == 0:
        return None
    j = int(neg[0])
    a, b = theta[j - 1], theta[j]
    f = lambda t: float(y1_closed_form(t, l, rho))
    if f(a) > 0 > f(b):
        return float(optimize.brentq(f, a, b, xtol=1e-15))
    # closed form disagrees in sign on this cell: linear interpolation of the numeric path
    return float(a + (b - a) * y1[j - 1] / (y1[j - 1] - y1[j]))


def mean_ode_solve(l: int, rho: float, step: float = 1e-4, theta_end: float = 0.99,
                   stop_at_zero: bool = True, tol: float = 1e-10) -> OdeTrajectory:
    """RK4 for dy/dtheta = F(theta, y) from y(0), with the first zero of y1.

    The grid is uniform with spacing at most ``step`` and ends exactly at
    ``theta_end``. With ``stop_at_zero`` the trajectory is cut at the
    first grid point where y1 < 0.
    """
    _check_ode_args(l, rho, step)
    theta = _grid(step, theta_end)
    Y = _rk4_mean(l, [rho], theta)[:, :, 0]
    y1, y2 = Y[:, 0], Y[:, 1]
    if not np.all(np.isfinite(Y)):
        raise NumericalError("mean ODE integration produced non-finite values")
    ts = _theta_star(theta, y1, l, rho)
    if ts is not None and stop_at_zero:
        j = int(np.flatnonzero(y1 < 0)[0]) + 1
        theta, y1, y2 = theta[:j], y1[:j], y2[:j]
    if np.any(y2 < -tol):
        raise NumericalError("y2 became negative")
    gap = float(np.max(np.abs(y1 - y1_closed_form(theta, l, rho))))
    return OdeTrajectory(theta, y1, y2, l, float(rho), ts, gap)


def _tangency_u(l: int) -> float:
    f = lambda u: -math.log1p(-u) - u / ((l - 1) * (1 - u))
    return float(optimize.brentq(f, 1e-9, 1 - 1e-12, xtol=1e-16, rtol=1e-15))


def _min_y1(l, rhos, step, theta_end):
    theta = _grid(step, theta_end)
    y1 = _rk4_mean(l, rhos, theta)[:, 0, :]
    out = np.empty(y1.shape[1])
    for k in range(y1.shape[1]):
        col = y1[:, k]
        i = int(np.argmin(col))
        if 0 < i < len(col) - 1:
            a, b, c = col[i - 1], col[i], col[i + 1]
            curv = a - 2 * b + c
            out[k] = b - (c - a) ** 2 / (8 * curv) if curv > 0 else b
        else:
            out[k] = col[i]
    return out


def rho_d(l: int, method: str = "tangency", step: float = 1e-3) -> float:
    """Critical density inf{rho : h_rho(u) > 0 on (0, 1]}.

    ``tangency``: h = dh/du = 0 reduces to u / ((l-1)(1-u)) = -log(1-u),
    gamma = 1/((l-1) u^{l-2} (1-u)), rho_d = l / gamma.
    ``ode``: the smallest rho whose numeric y1 stays positive, found by
    root-finding on the interpolated minimum of y1 over theta.
    """
    if l < 3:
        raise ValidationError("rho_d requires l >= 3")
    if method == "tangency":
        u = _tangency_u(l)
        return float(l * (l - 1) * u ** (l - 2) * (1 - u))
    if method != "ode":
        raise ValidationError("method is 'tangency' or 'ode'")
    lo, hi = 0.5, 3.0
    for width in (16, 8, 6):
        rs = np.linspace(lo, hi, width + 1)
        mins = _min_y1(l, rs, step, 0.99)
        k = np.flatnonzero((mins[:-1] < 0) & (mins[1:] >= 0))
        if len(k) == 0:
            raise NumericalError("no sign change of min y1 in the rho bracket")
        k = int(k[0])
        if width == 6:
            # cubic interpolation of min y1(rho) through the bracket
            sl = slice(max(k - 1, 0), min(k + 3, len(rs)))
            spl = np.polynomial.Polynomial.fit(rs[sl], mins[sl], deg=len(rs[sl]) - 1)
            return float(optimize.brentq(spl, rs[k], rs[k + 1], xtol=1e-14))
        pad = (rs[1] - rs[0]) * 0.05
        lo, hi = rs[k] - pad, rs[k + 1] + pad
    raise AssertionError("unreachable")


def theta_d(l: int) -> float:
    return float(1 - _tangency_u(l) ** l)


def _cov_terms(p0, p1, l):
    g11 = (l - 1) * (p0 + p1 - (p0 - p1) ** 2)
    g12 = -(l - 1) * (p0 * p1 + p1 * (1 - p1))
    g22 = (l - 1) * p1 * (1 - p1)
    return g11, g12, g22


def drift_covariance(p0, p1, l: int) -> np.ndarray:
    """G: covariance of one smoothed step (dz1, dz2)."""
    g11, g12, g22 = _cov_terms(p0, p1, l)
    return np.array([[g11, g12], [g12, g22]])


def covariance_ode_solve(l: int, rho: float, step: float = 1e-4, theta_end: float = 0.99,
                         fd: float = 1e-6, psd_tol: float = 1e-10,
                         stop_at_zero: bool = True) -> OdeTrajectory:
    """RK4 for dQ/dtheta = G + A Q + Q A^T jointly with the mean ODE.

    A = dF/dy is taken by central differences with step ``fd`` on each
    coordinate of y; the state stores (Q11, Q12, Q22), so Q is symmetric
    by construction. Stops at the first zero of y1 unless told otherwise.
    """
    _check_ode_args(l, rho, step)
    theta = _grid(step, theta_end)
    def F(t, s):
        y1, y2, q11, q12, q22 = s
        f1, f2, p0, p1 = _drift_scalar(t, y1, y2, l)
        u1, u2, _, _ = _drift_scalar(t, y1 + fd, y2, l)
        d1, d2, _, _ = _drift_scalar(t, y1 - fd, y2, l)
        v1, v2, _, _ = _drift_scalar(t, y1, y2 + fd, l)
        w1, w2, _, _ = _drift_scalar(t, y1, y2 - fd, l)
        a11, a21 = (u1 - d1) / (2 * fd), (u2 - d2) / (2 * fd)
        a12, a22 = (v1 - w1) / (2 * fd), (v2 - w2) / (2 * fd)
        g11, g12, g22 = _cov_terms(p0, p1, l)
        # (A Q + Q A^T) entries for symmetric Q
        aq11 = a11 * q11 + a12 * q12
        aq12 = a11 * q12 + a12 * q22
        aq21 = a21 * q11 + a22 * q12
        aq22 = a21 * q12 + a22 * q22
        return np.array([f1, f2, g11 + 2 * aq11, g12 + aq12 + aq21, g22 + 2 * aq22])

    Q0 = initial_covariance(l, rho)
    s = np.array([*initial_state(l, rho), Q0[0, 0], Q0[0, 1], Q0[1, 1]])
    out = [s]
    for j in range(len(theta) - 1):
        t, h = theta[j], theta[j + 1] - theta[j]
        k1 = F(t, s)
        k2 = F(t + h / 2, s + h / 2 * k1)
        k3 = F(t + h / 2, s + h / 2 * k2)
        k4 = F(t + h, s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(s)
        if stop_at_zero and s[0] < 0:
            break
    S = np.array(out)
    if not np.all(np.isfinite(S)):
        raise NumericalError("covariance ODE produced non-finite values")
    tr = S[:, 2] + S[:, 4]
    det = S[:, 2] * S[:, 4] - S[:, 3] ** 2
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
    if np.any(lam_min < -psd_tol):
        j = int(np.flatnonzero(lam_min < -psd_tol)[0])
        raise NumericalError(f"Q lost positive semi-definiteness at theta = {theta[j]:.6g}")
    theta = theta[: len(S)]
    ts = _theta_star(theta, S[:, 0], l, rho)
    gap = float(np.max(np.abs(S[:, 0] - y1_closed_form(theta, l, rho))))
    return OdeTrajectory(theta, S[:, 0], S[:, 1], l, float(rho), ts, gap, S[:, 2], S[:, 3], S[:, 4])


# ------------------------------------------------------------ finite-size scaling


def brownian_parabola_min(paths: int, step: float = 0.02, horizon: float = 8.0, seed=None,
                          chunk: int = 10**4) -> np.ndarray:
    """Samples of Z = inf_t (t^2/2 + W(t)), W a two-sided standard Brownian motion.

    On each grid cell the path given its endpoints is a Brownian bridge
    (a linear drift does not change the bridge law), so the cell minimum
    is drawn exactly: (a + b - sqrt((b-a)^2 - 2 dt log U)) / 2. The only
    bias is the curvature of t^2/2 within a cell, of order dt^2.
    """
    rng = make_rng(seed, 13)
    K = int(round(2 * horizon / step))
    t = np.linspace(-horizon, horizon, K + 1)
    mid = K // 2
    dt = t[1] - t[0]
    out = np.empty(paths)
    for s in range(0, paths, chunk):
        c = min(chunk, paths - s)
        inc = rng.standard_normal((c, K)) * math.sqrt(dt)
        W = np.concatenate([np.zeros((c, 1)), np.cumsum(inc, axis=1)], axis=1)
        X = W - W[:, mid:mid + 1] + 0.5 * t * t
        a, b = X[:, :-1], X[:, 1:]
        u = rng.random((c, K))
        cell = 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2 * dt * np.log(u)))
        out[s:s + c] = cell.min(axis=1)
    return out


@dataclass
class FssConstants:
    l: int
    rho_d: float
    theta_d: float
    F_tilde: float
    G_tilde: float
    Q11: float
    dy1_drho: float
    a: float
    b: float
    kappa: float
    kappa_se: float
    extra: dict = field(default_factory=dict)
    z_samples: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("z_samples")
        d.update(d.pop("extra"))
        return d


@functools.lru_cache(maxsize=16)
def fss_constants(l: int = 3, mc_paths: int = 10**5, mc_step: float = 0.02, seed=0,
                  ode_step: float = 1e-4, horizon: float = 8.0) -> FssConstants:
    """Constants of the two-term scaling law for the core probability.

    theta_d and rho_d come from the tangency equations. F~ = dF1/dtheta +
    dF1/dy2 F2 at the critical point (equal to y1''), G~ = G11 there,
    Q11 from the covariance ODE at rho_d, dy1/drho by central differences
    of the mean ODE at rho_d (1 +- 1e-5). kappa = -E inf_t(t^2/2 + W(t)).
    """
    if l < 3:
        raise ValidationError("need l >= 3")
    rd = rho_d(l)
    td = theta_d(l)
    # the critical trajectory only touches zero at theta_d: do not stop on round-off
    cov = covariance_ode_solve(l, rd, step=ode_step, theta_end=td, stop_at_zero=False)
    y1d, y2d = float(cov.y1[-1]), float(cov.y2[-1])
    Q11 = float(cov.Q11[-1])
    dlt = 1e-5 * rd
    theta = _grid(ode_step, td)
    Y = _rk4_mean(l, [rd - dlt, rd + dlt], theta)
    dy1 = float((Y[-1, 0, 1] - Y[-1, 0, 0]) / (2 * dlt))
    h = 1e-5
    f1t = (_drift(td + h, y1d, y2d, l)[0] - _drift(td - h, y1d, y2d, l)[0]) / (2 * h)
    f1y2 = (_drift(td, y1d, y2d + h, l)[0] - _drift(td, y1d, y2d - h, l)[0]) / (2 * h)
    f1, f2, p0, p1 = _drift(td, y1d, y2d, l)
    F_t = float(f1t + f1y2 * f2)
    G_t = float(_cov_terms(p0, p1, l)[0])
    Z = brownian_parabola_min(mc_paths, mc_step, horizon, seed)
    kappa = float(-Z.mean())
    kse = float(Z.std(ddof=1) / math.sqrt(mc_paths))
    a = dy1 / math.sqrt(Q11)
    b = G_t ** (2 / 3) * F_t ** (-1 / 3) / math.sqrt(Q11)
    if not (F_t > 0 and G_t > 0 and a > 0 and b > 0 and kappa > 0):
        raise NumericalError("scaling constants out of their admissible sign range")
    return FssConstants(l, rd, td, F_t, G_t, Q11, dy1, a, b, kappa, kse,
                        {"y1_at_theta_d": y1d, "y2_at_theta_d": y2d, "drift_F1": float(f1),
                         "mc_paths": mc_paths, "mc_step": mc_step}, Z)


def fss_prediction(l: int, n, r, constants: FssConstants | None = None, expand: bool = True):
    """G1(-r a) + b kappa G1'(-r a) n^{-1/6}, clipped to [0, 1].

    ``expand=False`` returns E G1(-r a - b n^{-1/6} Z) over the simulated
    samples of Z instead of its first-order Taylor expansion.
    """
    c = constants or fss_constants(l)
    x = -np.asarray(r, float) * c.a
    nn = np.asarray(n, float) ** (-1 / 6)
    if expand:
        p = stats.norm.cdf(x) + c.b * c.kappa * stats.norm.pdf(x) * nn
    else:
        if c.z_samples is None:
            raise ValidationError("constants carry no samples of Z")
        xb, nb = np.broadcast_arrays(x, nn)
        p = np.array([stats.norm.cdf(xi - c.b * ni * c.z_samples).mean()
                      for xi, ni in zip(xb.ravel(), nb.ravel())]).reshape(xb.shape)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


def sample_core_sockets(l: int, n: int, m: int, rng) -> np.ndarray:
    """Socket targets of G_l(n, m): each of the n l sockets picks floor(U m)."""
    return np.minimum((rng.random(n * l) * m).astype(np.int64), m - 1)


def core_probability_mc(l: int, n: int, rho: float, trials: int, seed=None, alpha: float = 0.05) -> dict:
    """Fraction of G_l(n, floor(n rho)) samples with a non-empty core, with a Wilson interval.

    Trial t uses stream t of ``seed`` and uniform socket variables, so
    calls at different rho with the same seed are coupled.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if l < 2 or n < 1 or not rho > 0:
        raise ValidationError("need l >= 2, n >= 1 and rho > 0")
    m = int(math.floor(n * rho))
    if m < 1:
        raise ValidationError("floor(n rho) must be >= 1")
    hits = 0
    for t in range(trials):
        rng = make_rng(seed, 1000 + t)
        hits += _core_nonempty_sockets(sample_core_sockets(l, n, m, rng), n, l, m)
    ci = stats.binomtest(hits, trials).proportion_ci(confidence_level=1 - alpha, method="wilson")
    p = hits / trials
    return {"p_hat": p, "ci_low": float(ci.low), "ci_high": float(ci.high),
            "se": math.sqrt(max(p * (1 - p), 0.25 / trials) / trials),
            "hits": hits, "trials": trials, "n": n, "m": m, "rho": rho, "l": l}


def sample_core_graph(l: int, n: int, rho: float, seed=None, stream: int = 0) -> FactorGraph:
    m = int(math.floor(n * rho))
    cs = sample_core_sockets(l, n, m, make_rng(seed, stream))
    return FactorGraph(n, m, np.stack([np.repeat(np.arange(n), l), cs], axis=1),
                       {"ensemble": "G_l", "l": l, "n": n, "m": m})


def kernel_pmf_array(x1, x2, theta, l: int) -> tuple[np.ndarray, list]:
    """Smoothed kernel for many states at once: (probabilities (N, K), outcomes)."""
    p0, p1, _ = _probs(x1, x2, theta, l)
    p2 = np.clip(1.0 - p0 - p1, 0.0, 1.0)
    outcomes, cols = [], []
    for q0, q1, q2 in kernel_support(l):
        c = math.comb(l - 1, q0 - 1) * math.comb(l - q0, q1)
        outcomes.append((q1 - q0, -q1))
        cols.append(c * p0 ** (q0 - 1) * p1**q1 * p2**q2)
    return np.stack(cols, axis=1), outcomes


def kernel_consistency(l: int, n: int, rho: float, runs: int, seed=None, eps: float = 0.05,
                       bins: int = 20, min_expected: float = 10.0) -> dict:
    """Compare peeling steps with the smoothed kernel, cell by cell.

    Steps are kept when the pre-step state lies in
    Q+(eps) = {z1 >= 1, z2 >= n eps, tau <= n(1-eps), (n-tau) l - z1 - 2 z2 >= n eps}.
    A cell is a (theta bin, outcome) pair; its expected count is the sum
    of kernel probabilities over the steps in the bin, its variance the
    sum of p(1-p). Cells with expected count below ``min_expected`` are
    not tested.
    """
    X1, X2, TH, D1, D2 = [], [], [], [], []
    excluded = 0
    for s in range(runs):
        tr = peel_core(sample_core_graph(l, n, rho, seed, stream=s), seed=(0 if seed is None else seed) * 7919 + s)
        tau, z1, z2 = tr.tau[:-1], tr.z1[:-1], tr.z2[:-1]
        d1, d2 = np.diff(tr.z1), np.diff(tr.z2)
        ok = ((z1 >= 1) & (z2 >= n * eps) & (tau <= n * (1 - eps))
              & ((n - tau) * l - z1 - 2 * z2 >= n * eps))
        excluded += int((~ok).sum())
        X1.append(z1[ok] / n), X2.append(z2[ok] / n), TH.append(tau[ok] / n)
        D1.append(d1[ok]), D2.append(d2[ok])
    x1, x2, th = np.concatenate(X1), np.concatenate(X2), np.concatenate(TH)
    d1, d2 = np.concatenate(D1), np.concatenate(D2)
    P, outcomes = kernel_pmf_array(x1, x2, th, l)
    b = np.minimum((th * bins).astype(int), bins - 1)
    cells = []
    for k, (o1, o2) in enumerate(outcomes):
        hit = (d1 == o1) & (d2 == o2)
        obs = np.bincount(b, weights=hit, minlength=bins)
        exp = np.bincount(b, weights=P[:, k], minlength=bins)
        var = np.bincount(b, weights=P[:, k] * (1 - P[:, k]), minlength=bins)
        for j in range(bins):
            if exp[j] >= min_expected:
                z = (obs[j] - exp[j]) / math.sqrt(var[j])
                cells.append({"bin": j, "outcome": [o1, o2], "observed": float(obs[j]),
                              "expected": float(exp[j]), "z": float(z), "pass": bool(abs(z) <= 3)})
    support = set(outcomes)
    outside = sum((a, c) not in support for a, c in zip(d1.tolist(), d2.tolist()))
    frac = float(np.mean([c["pass"] for c in cells])) if cells else float("nan")
    return {"cells": cells, "pass_fraction": frac, "steps": int(len(x1)), "excluded_steps": excluded,
            "unsupported_steps": outside}
