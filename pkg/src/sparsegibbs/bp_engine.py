"""Sum-product belief propagation on pairwise models.

Messages live on directed edges: row ``2e`` of a message array is the
message ``u -> v`` for ``g.edges[e] = (u, v)`` and row ``2e + 1`` is
``v -> u``. All products are taken in the log domain, with exact zeros
counted separately so that a single zero factor can be divided out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._common import NumericalError, ValidationError, atanh_guarded, gamma_u, make_rng
from .exact_oracles import PairwiseSpec, SPINS, ising_spec
from .graph_ensembles import MultiGraph


@dataclass
class ConvergenceReport:
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False
    damping: float = 0.0
    clamps: int = 0

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "residuals": list(map(float, self.residuals)),
                "converged": self.converged, "damping": self.damping, "clamps": self.clamps}


@dataclass
class _Directed:
    src: np.ndarray
    dst: np.ndarray
    tab: np.ndarray  # tab[d, x_src, x_dst]


def _directed(g: MultiGraph, spec: PairwiseSpec) -> _Directed:
    spec.validate(g)
    if g.n_edges and np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValidationError("BP is not defined with self-loops")
    src = g.edges.ravel().copy()
    dst = g.edges[:, ::-1].ravel().copy()
    tab = np.empty((2 * g.n_edges, spec.q, spec.q))
    tab[0::2] = spec.edge
    tab[1::2] = np.transpose(spec.edge, (0, 2, 1))
    return _Directed(src, dst, tab)


def uniform_messages(g: MultiGraph, q: int) -> np.ndarray:
    return np.full((2 * g.n_edges, q), 1.0 / q)


def random_messages(g: MultiGraph, q: int, seed=None) -> np.ndarray:
    rng = make_rng(seed)
    m = rng.uniform(0.05, 1.0, size=(2 * g.n_edges, q))
    return m / m.sum(axis=1, keepdims=True)


def _log_with_zeros(a: np.ndarray):
    zero = a <= 0
    with np.errstate(divide="ignore"):
        la = np.where(zero, 0.0, np.log(np.where(zero, 1.0, a)))
    return la, zero.astype(np.int64)


def _incoming(nu, D):
    """f_d(x_dst) = sum_{x_src} psi_d(x_src, x_dst) nu_d(x_src)."""
    return np.einsum("dab,da->db", D.tab, nu)


def _vertex_sums(g, D, f, q):
    lf, zf = _log_with_zeros(f)
    S = np.zeros((g.n, q))
    Z = np.zeros((g.n, q), dtype=np.int64)
    np.add.at(S, D.dst, lf)
    np.add.at(Z, D.dst, zf)
    return lf, zf, S, Z


def bp_update(nu: np.ndarray, g: MultiGraph, spec: PairwiseSpec, D: _Directed | None = None) -> np.ndarray:
    """One synchronous application of the BP mapping."""
    D = D or _directed(g, spec)
    if nu.shape != (2 * g.n_edges, spec.q):
        raise ValidationError("message array has the wrong shape")
    if g.n_edges == 0:
        return nu.copy()
    f = _incoming(nu, D)
    lf, zf, S, Z = _vertex_sums(g, D, f, spec.q)
    rev = np.arange(len(D.src)) ^ 1
    lpsi, zpsi = _log_with_zeros(spec.vertex)
    logm = lpsi[D.src] + S[D.src] - lf[rev]
    zeros = zpsi[D.src] + Z[D.src] - zf[rev]
    logm = np.where(zeros > 0, -np.inf, logm)
    mx = logm.max(axis=1, keepdims=True)
    bad = ~np.isfinite(mx[:, 0])
    if np.any(bad):
        d = int(np.argmax(bad))
        raise NumericalError(f"zero normalizer on directed edge {int(D.src[d])}->{int(D.dst[d])}")
    out = np.exp(logm - mx)
    return out / out.sum(axis=1, keepdims=True)


def _update_one(nu, g, spec, D, d, lpsi):
    """Sequential update of a single directed edge in place."""
    ptr, nb, eid = g.csr
    i = D.src[d]
    acc = lpsi[i].copy()
    for e in eid[ptr[i]:ptr[i + 1]].tolist():
        dd = 2 * e + 1 if g.edges[e, 0] == i else 2 * e     # message into i
        if dd == (d ^ 1):
            continue
        with np.errstate(divide="ignore"):
            acc += np.log(D.tab[dd].T @ nu[dd])
    mx = acc.max()
    if not np.isfinite(mx):
        raise NumericalError(f"zero normalizer on directed edge {int(D.src[d])}->{int(D.dst[d])}")
    w = np.exp(acc - mx)
    nu[d] = w / w.sum()


def _tv_rows(a, b):
    return 0.5 * np.abs(a - b).sum(axis=1)


def bp_fixed_point(g: MultiGraph, spec: PairwiseSpec, init: np.ndarray | None = None,
                   damping: float = 0.0, tol: float = 1e-12, max_iter: int = 1000,
                   schedule: str = "parallel", seed=None):
    """Iterate BP until the sup-norm TV residual ``||T nu - nu||`` is <= tol.

    Returns the certified messages ``nu`` (the residual is measured at the
    returned value) and a ConvergenceReport whose flag must be checked.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    if not 0 <= damping < 1:
        raise ValidationError("damping must lie in [0, 1)")
    if schedule not in ("parallel", "sequential"):
        raise ValidationError("schedule is 'parallel' or 'sequential'")
    D = _directed(g, spec)
    nu = uniform_messages(g, spec.q) if init is None else np.array(init, dtype=float)
    if nu.shape != (2 * g.n_edges, spec.q) or np.any(nu < 0):
        raise ValidationError("init must be a non-negative (2m, q) array")
    nu = nu / nu.sum(axis=1, keepdims=True)
    report = ConvergenceReport(0, [], False, damping)
    rng = make_rng(seed)
    for it in range(max_iter + 1):
        new = bp_update(nu, g, spec, D)
        res = float(_tv_rows(new, nu).max(initial=0.0))
        report.residuals.append(res)
        report.iterations = it
        if res <= tol:
            report.converged = True
            return nu, report
        if it == max_iter:
            break
        if schedule == "parallel":
            nu = (1 - damping) * new + damping * nu
        else:
            with np.errstate(divide="ignore"):
                lpsi = np.log(spec.vertex)
            nxt = nu.copy()
            for d in rng.permutation(len(nu)):
                old = nxt[d].copy()
                _update_one(nxt, g, spec, D, int(d), lpsi)
                nxt[d] = (1 - damping) * nxt[d] + damping * old
            nu = nxt
    return nu, report


def _belief_logs(nu, g, spec, D):
    f = _incoming(nu, D)
    lf, zf, S, Z = _vertex_sums(g, D, f, spec.q)
    lpsi, zpsi = _log_with_zeros(spec.vertex)
    lb = lpsi + S
    return np.where(zpsi + Z > 0, -np.inf, lb)


def bp_marginal(nu: np.ndarray, g: MultiGraph, spec: PairwiseSpec, i: int | None = None) -> np.ndarray:
    """Beliefs mu_i(x) propto psi_i(x) prod_j sum_y psi_ij(x, y) nu_{j->i}(y).

    Returns the pmf of vertex ``i``, or all beliefs as an (n, q) array.
    """
    lb = _belief_logs(nu, g, spec, _directed(g, spec))
    mx = lb.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(mx)):
        v = int(np.argmax(~np.isfinite(mx[:, 0])))
        raise NumericalError(f"belief of vertex {v} has a zero normalizer")
    b = np.exp(lb - mx)
    b /= b.sum(axis=1, keepdims=True)
    return b if i is None else b[i]


def bethe_free_entropy(nu: np.ndarray, g: MultiGraph, spec: PairwiseSpec,
                       D: _Directed | None = None) -> float:
    """Phi(nu) = sum_i log z_i - sum_(ij) log z_ij."""
    D = D or _directed(g, spec)
    with np.errstate(divide="ignore"):
        lb = _belief_logs(nu, g, spec, D)
        mx = lb.max(axis=1)
        if not np.all(np.isfinite(mx)):
            v = int(np.argmax(~np.isfinite(mx)))
            raise NumericalError(f"log of zero in the vertex term of vertex {v}")
        vert = mx + np.log(np.exp(lb - mx[:, None]).sum(axis=1))
        if g.n_edges:
            ze = np.einsum("eab,ea,eb->e", spec.edge, nu[0::2], nu[1::2])
            if np.any(ze <= 0):
                e = int(np.argmax(ze <= 0))
                raise NumericalError(f"log of zero in the edge term of edge {e} {tuple(g.edges[e])}")
            edge = np.log(ze).sum()
        else:
            edge = 0.0
    return float(vert.sum() - edge)


def bethe_stationarity_check(nu: np.ndarray, g: MultiGraph, spec: PairwiseSpec,
                             fd_step: float = 1e-5) -> float:
    """Largest projected central-difference gradient of Phi at ``nu``.

    Each coordinate is perturbed by at most half its value, and the
    gradient of every message is projected on the tangent space of the
    face of the simplex spanned by its support.
    """
    D = _directed(g, spec)
    nu = np.array(nu, dtype=float)
    worst = 0.0
    for d in range(nu.shape[0]):
        supp = np.flatnonzero(nu[d] > 0)
        if len(supp) < 2:
            continue
        grad = np.empty(len(supp))
        for k, x in enumerate(supp):
            h = min(fd_step, nu[d, x] / 2)
            base = nu[d, x]
            nu[d, x] = base + h
            fp = bethe_free_entropy(nu, g, spec, D)
            nu[d, x] = base - h
            fm = bethe_free_entropy(nu, g, spec, D)
            nu[d, x] = base
            grad[k] = (fp - fm) / (2 * h)
        worst = max(worst, float(np.abs(grad - grad.mean()).max()))
    return worst


# ------------------------------------------------------------ Ising fields


@dataclass
class CavityFieldSet:
    h: np.ndarray      # per directed edge, same indexing as messages
    beta: float
    B: np.ndarray
    J: np.ndarray
    theta: np.ndarray

    def to_messages(self) -> np.ndarray:
        """nu(+1) = e^h / 2cosh h, state 0 is spin +1."""
        p = 0.5 * (1 + np.tanh(self.h))
        return np.stack([p, 1 - p], axis=1)

    @staticmethod
    def from_messages(nu, beta, B, J):
        with np.errstate(divide="ignore"):
            h = 0.5 * np.log(nu[:, 0] / nu[:, 1])
        J = np.asarray(J, float)
        return CavityFieldSet(h, beta, np.asarray(B, float), J, np.tanh(beta * J))


def _ising_params(g, beta, B, J):
    Bv = np.broadcast_to(np.asarray(B, float), (g.n,)).copy()
    Je = np.broadcast_to(np.asarray(J, float), (g.n_edges,)).copy()
    if not (np.isfinite(beta) and np.all(np.isfinite(Bv)) and np.all(np.isfinite(Je))):
        raise ValidationError("parameters must be finite")
    if g.n_edges and np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValidationError("BP is not defined with self-loops")
    return Bv, Je, np.tanh(beta * Je)


def ising_cavity_free_entropy(h: np.ndarray, g: MultiGraph, B, theta) -> float:
    """Bethe free entropy in cavity-field form (gamma(u) = -log(1-u^2)/2)."""
    th_d = np.repeat(theta, 2)
    dst = g.edges[:, ::-1].ravel()
    t = np.tanh(h)
    edge = gamma_u(theta) - np.log1p(theta * t[0::2] * t[1::2])
    lp = np.zeros(g.n)
    lm = np.zeros(g.n)
    np.add.at(lp, dst, np.log1p(th_d * t))
    np.add.at(lm, dst, np.log1p(-th_d * t))
    vert = np.logaddexp(B + lp, -B + lm)
    return float(edge.sum() + vert.sum())


def ising_cavity_fixed_point(g: MultiGraph, beta: float, B=0.0, J=1.0, init=None,
                             damping: float = 0.0, tol: float = 1e-12, max_iter: int = 10000):
    """Solve h_{i->j} = B_i + sum_{l in di minus j} atanh(theta_il tanh h_{l->i}).

    Returns (CavityFieldSet, magnetizations, Phi, ConvergenceReport).
    """
    Bv, Je, theta = _ising_params(g, beta, B, J)
    src = g.edges.ravel()
    dst = g.edges[:, ::-1].ravel()
    th_d = np.repeat(theta, 2)
    rev = np.arange(2 * g.n_edges) ^ 1
    h = np.zeros(2 * g.n_edges) if init is None else np.broadcast_to(np.asarray(init, float), (2 * g.n_edges,)).copy()
    info = {"clamps": 0}
    report = ConvergenceReport(0, [], False, damping)

    def step(h):
        u = atanh_guarded(th_d * np.tanh(h), info)
        S = np.zeros(g.n)
        np.add.at(S, dst, u)
        return Bv[src] + S[src] - u[rev], S

    for it in range(max_iter + 1):
        new, _ = step(h)
        # residual in TV between the corresponding binary messages
        res = float(0.5 * np.abs(np.tanh(new) - np.tanh(h)).max(initial=0.0))
        report.residuals.append(res)
        report.iterations = it
        if res <= tol:
            report.converged = True
            break
        if it == max_iter:
            break
        h = (1 - damping) * new + damping * h
    report.clamps = info["clamps"]
    _, S = step(h)
    mag = np.tanh(Bv + S)
    phi = ising_cavity_free_entropy(h, g, Bv, theta)
    return CavityFieldSet(h, beta, Bv, Je, theta), mag, phi, report


def tap_solve(J: np.ndarray, beta: float, B=0.0, init=None, damping: float = 0.5,
              tol: float = 1e-12, max_iter: int = 10000):
    """Iterate m = tanh(B + (beta/sqrt n) J m - m (beta^2/n) sum_l J_il^2 (1 - m_l^2)).

    ``J`` holds the unscaled couplings. Returns (m, ConvergenceReport).
    """
    J = np.asarray(J, float)
    n = J.shape[0]
    if J.shape != (n, n) or not np.allclose(J, J.T) or np.any(np.diag(J) != 0):
        raise ValidationError("J must be symmetric with zero diagonal")
    Bv = np.broadcast_to(np.asarray(B, float), (n,))
    m = np.zeros(n) if init is None else np.array(init, float)
    J2 = J**2
    report = ConvergenceReport(0, [], False, damping)
    for it in range(max_iter + 1):
        field_ = Bv + beta / np.sqrt(n) * (J @ m) - m * (beta**2 / n) * (J2 @ (1 - m**2))
        new = np.tanh(field_)
        if not np.all(np.isfinite(new)) or np.any(np.abs(new) >= 1):
            raise NumericalError("TAP iteration left the open cube (|m| >= 1)")
        res = float(np.abs(new - m).max(initial=0.0))
        report.residuals.append(res)
        report.iterations = it
        if res <= tol:
            report.converged = True
            return new, report
        m = (1 - damping) * new + damping * m
    return m, report


def independent_set_bp(g: MultiGraph, lam: float, init=None, tol: float = 1e-12,
                       max_iter: int = 10000, damping: float = 0.0):
    """BP for the hard-core model in the nu_{i->j}(0) parametrization.

    Returns (nu, densities, Phi, ConvergenceReport).
    """
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    if g.n_edges and np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValidationError("BP is not defined with self-loops")
    src = g.edges.ravel()
    dst = g.edges[:, ::-1].ravel()
    rev = np.arange(2 * g.n_edges) ^ 1
    nu = np.ones(2 * g.n_edges) if init is None else np.broadcast_to(np.asarray(init, float), (2 * g.n_edges,)).copy()
    report = ConvergenceReport(0, [], False, damping)

    def logprod(nu):
        S = np.zeros(g.n)
        np.add.at(S, dst, np.log(nu))
        return S

    for it in range(max_iter + 1):
        S = logprod(nu)
        new = 1.0 / (1.0 + lam * np.exp(S[src] - np.log(nu[rev])))
        res = float(np.abs(new - nu).max(initial=0.0))
        report.residuals.append(res)
        report.iterations = it
        if res <= tol:
            report.converged = True
            break
        if it == max_iter:
            break
        nu = (1 - damping) * new + damping * nu
    P = lam * np.exp(logprod(nu))
    dens = P / (1 + P)
    a, b = nu[0::2], nu[1::2]
    phi = float(np.log1p(P).sum() - np.log(a + b - a * b).sum())
    return nu, dens, phi, report


__all__ = [
    "ConvergenceReport", "CavityFieldSet", "SPINS", "uniform_messages", "random_messages",
    "bp_update", "bp_fixed_point", "bp_marginal", "bethe_free_entropy", "bethe_stationarity_check",
    "ising_cavity_fixed_point", "ising_cavity_free_entropy", "tap_solve", "independent_set_bp",
    "ising_spec",
]
