"""Brute-force ground truth on small instances.

Specifications use integer states ``0..q-1``. For Ising models state 0 is
spin +1 and state 1 is spin -1 (see ``SPINS``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._common import ValidationError, ZeroMeasureError, make_rng, tv_distance
from .graph_ensembles import FactorGraph, MultiGraph, bfs_distances

SPINS = np.array([1.0, -1.0])
MAX_STATES = 2**24
_CHUNK = 2**17


# ------------------------------------------------------------ specifications


@dataclass
class PairwiseSpec:
    """Vertex tables ``vertex[i, x]`` and edge tables ``edge[e, x_u, x_v]``.

    ``edge[e]`` is oriented as ``g.edges[e] = (u, v)``; the reverse
    orientation is the transpose, which makes the specification symmetric.
    """

    q: int
    vertex: np.ndarray
    edge: np.ndarray
    permitted: np.ndarray | None = None
    kappa: float | None = None

    def __post_init__(self):
        self.vertex = np.asarray(self.vertex, dtype=float)
        self.edge = np.asarray(self.edge, dtype=float).reshape(-1, self.q, self.q)
        if self.vertex.ndim != 2 or self.vertex.shape[1] != self.q:
            raise ValidationError("vertex tables must have shape (n, q)")
        if np.any(self.vertex < 0) or np.any(self.edge < 0):
            raise ValidationError("potentials must be non-negative")

    @property
    def psi_max(self) -> float:
        return float(max(self.vertex.max(initial=0.0), self.edge.max(initial=0.0)))

    def validate(self, g: MultiGraph, permissive: bool = False) -> None:
        if self.vertex.shape[0] != g.n or self.edge.shape[0] != g.n_edges:
            raise ValidationError("specification does not match the graph")
        if permissive:
            if not self.is_permissive(g):
                raise ValidationError("specification is not permissive")

    def is_permissive(self, g: MultiGraph) -> bool:
        if self.permitted is None or self.kappa is None:
            return False
        thr = self.kappa * self.psi_max * (1 - 1e-12)
        xp = np.asarray(self.permitted)
        if np.any(self.vertex.min(axis=1) < thr):
            return False
        u, v = g.edges[:, 0], g.edges[:, 1]
        e = np.arange(g.n_edges)
        row = self.edge[e, xp[u], :].min(axis=1) if g.n_edges else np.array([])
        col = self.edge[e, :, xp[v]].min(axis=1) if g.n_edges else np.array([])
        return bool(np.all(row >= thr) and np.all(col >= thr))


def ising_spec(g: MultiGraph, beta: float, B=0.0, J=1.0) -> PairwiseSpec:
    """psi_ij = exp(beta J_ij x x'), psi_i = exp(B_i x)."""
    Bv = np.broadcast_to(np.asarray(B, float), (g.n,))
    Je = np.broadcast_to(np.asarray(J, float), (g.n_edges,))
    vertex = np.exp(np.outer(Bv, SPINS))
    xx = np.outer(SPINS, SPINS)
    edge = np.exp(beta * Je[:, None, None] * xx[None])
    # permissive with x^p = +1 when B >= 0 and J >= 0
    return PairwiseSpec(2, vertex, edge, np.zeros(g.n, dtype=int), None)


def coloring_spec(g: MultiGraph, q: int) -> PairwiseSpec:
    """Uniform measure over proper q-colorings."""
    edge = np.broadcast_to(1.0 - np.eye(q), (g.n_edges, q, q)).copy()
    return PairwiseSpec(q, np.ones((g.n, q)), edge)


def independent_set_spec(g: MultiGraph, lam: float) -> PairwiseSpec:
    """Hard-core model: psi_i(1) = lam, psi_ij(1, 1) = 0."""
    edge = np.broadcast_to(np.array([[1.0, 1.0], [1.0, 0.0]]), (g.n_edges, 2, 2)).copy()
    vertex = np.tile([1.0, lam], (g.n, 1))
    return PairwiseSpec(2, vertex, edge, np.zeros(g.n, dtype=int), min(1.0, lam) / max(1.0, lam))


def random_permissive_spec(g: MultiGraph, q: int, seed=None, kappa: float = 0.1,
                           zero_prob: float = 0.2) -> PairwiseSpec:
    """Random bounded specification that is permissive with constant ``kappa``.

    Entries not protected by the permitted state are zeroed with probability
    ``zero_prob`` to exercise hard constraints.
    """
    rng = make_rng(seed)
    xp = rng.integers(0, q, g.n)
    vertex = rng.uniform(kappa, 1.0, size=(g.n, q))
    edge = rng.uniform(0.0, 1.0, size=(g.n_edges, q, q))
    edge[rng.random(edge.shape) < zero_prob] = 0.0
    for e, (u, v) in enumerate(g.edges.tolist()):
        edge[e, xp[u], :] = np.maximum(edge[e, xp[u], :], kappa + (1 - kappa) * rng.random(q))
        edge[e, :, xp[v]] = np.maximum(edge[e, :, xp[v]], kappa + (1 - kappa) * rng.random(q))
    vertex[:, :] = np.clip(vertex, kappa, 1.0)
    return PairwiseSpec(q, vertex, edge, xp, kappa)


@dataclass
class FactorSpec:
    """Factor-form specification on a FactorGraph.

    ``tables[a]`` has one axis per socket of c-node ``a`` (in the couple
    order), so repeated v-nodes get repeated axes.
    """

    q: int
    tables: list
    vertex: np.ndarray | None = None


def xor_spec(fg: FactorGraph, beta: float) -> FactorSpec:
    """psi_a = exp(beta prod_{i in a} x_i) over spins."""
    members = fg.cnode_members()
    tables = []
    for mem in members:
        k = len(mem)
        grids = np.meshgrid(*([SPINS] * k), indexing="ij") if k else []
        prod = np.prod(np.stack(grids), axis=0) if k else np.array(1.0)
        tables.append(np.exp(beta * prod))
    return FactorSpec(2, tables)


@dataclass
class ExactResult:
    log_z: float
    marginals: dict = field(default_factory=dict)
    table: np.ndarray | None = None


# ------------------------------------------------------------ enumeration


def _digits(idx: np.ndarray, n: int, q: int) -> np.ndarray:
    """Base-q digits, vertex 0 most significant (lexicographic order)."""
    pw = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // pw[None, :]) % q


def _log_tables(spec):
    with np.errstate(divide="ignore"):
        if isinstance(spec, PairwiseSpec):
            return np.log(spec.vertex), np.log(spec.edge)
        lv = None if spec.vertex is None else np.log(spec.vertex)
        return lv, [np.log(t) for t in spec.tables]


def _chunks(g, spec):
    """Yield (configs, log-weights) over all configurations in order."""
    if isinstance(g, MultiGraph):
        n = g.n
        if not isinstance(spec, PairwiseSpec):
            raise ValidationError("MultiGraph needs a PairwiseSpec")
        spec.validate(g)
    elif isinstance(g, FactorGraph):
        n = g.n_vnodes
        if not isinstance(spec, FactorSpec):
            raise ValidationError("FactorGraph needs a FactorSpec")
    else:
        raise ValidationError("unsupported graph type")
    q = spec.q
    total = q**n
    if total > MAX_STATES:
        raise ValidationError(f"{q}^{n} states exceed the enumeration guard {MAX_STATES}")
    lv, le = _log_tables(spec)
    members = g.cnode_members() if isinstance(g, FactorGraph) else None
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        x = _digits(idx, n, q) if n else np.zeros((1, 0), dtype=np.int64)
        lw = np.zeros(len(idx))
        if isinstance(g, MultiGraph):
            for i in range(n):
                lw += lv[i, x[:, i]]
            for e, (u, v) in enumerate(g.edges.tolist()):
                lw += le[e, x[:, u], x[:, v]]
        else:
            if lv is not None:
                for i in range(n):
                    lw += lv[i, x[:, i]]
            for a, mem in enumerate(members):
                lw += le[a][tuple(x[:, i] for i in mem)] if mem else le[a]
        yield x, lw


def _first_violation(g, spec) -> str:
    if isinstance(spec, PairwiseSpec):
        if np.any(spec.vertex.max(axis=1) == 0):
            return f"vertex {int(np.argmax(spec.vertex.max(axis=1) == 0))} has an all-zero table"
        return "edge constraints admit no joint configuration"
    return "factor constraints admit no joint configuration"


def exact_log_z(g, spec) -> float:
    """log Z by exhaustive enumeration (log domain, fixed order)."""
    parts = [logsumexp(lw) for _, lw in _chunks(g, spec)]
    out = float(logsumexp(parts)) if parts else 0.0
    if not np.isfinite(out):
        raise ZeroMeasureError("zero partition function: " + _first_violation(g, spec))
    return out


def exact_probability_table(g, spec) -> tuple[np.ndarray, float]:
    """Full table mu(x) with shape (q,)*n, and log Z."""
    lws = [lw for _, lw in _chunks(g, spec)]
    lw = np.concatenate(lws)
    lz = float(logsumexp(lw))
    if not np.isfinite(lz):
        raise ZeroMeasureError("zero partition function: " + _first_violation(g, spec))
    n = g.n if isinstance(g, MultiGraph) else g.n_vnodes
    return np.exp(lw - lz).reshape((spec.q,) * n), lz


def marginal_from_table(p: np.ndarray, U) -> np.ndarray:
    """Marginal of the listed vertices, axes in the order of ``U``."""
    U = list(U)
    if len(set(U)) != len(U):
        raise ValidationError("marginal vertex set has repeated entries")
    others = tuple(i for i in range(p.ndim) if i not in U)
    m = p.sum(axis=others) if others else p
    kept = [i for i in range(p.ndim) if i in U]
    return np.transpose(m, [kept.index(u) for u in U])


def exact_marginal(g, spec, U, given: dict | None = None) -> np.ndarray:
    """Exact mu_U, or mu_{U|W}(.|x_W) when ``given = {w: x_w}``."""
    U = list(U)
    q = spec.q
    size = q ** len(U)
    acc = np.zeros(size)
    lws, keys = [], []
    for x, lw in _chunks(g, spec):
        if given:
            ok = np.ones(len(lw), dtype=bool)
            for w, xw in given.items():
                ok &= x[:, w] == xw
            lw = np.where(ok, lw, -np.inf)
        key = np.zeros(len(lw), dtype=np.int64)
        for u in U:
            key = key * q + x[:, u]
        lws.append(lw)
        keys.append(key)
    lw = np.concatenate(lws)
    lz = logsumexp(lw)
    if not np.isfinite(lz):
        raise ZeroMeasureError("conditioning event has zero probability" if given else
                               "zero partition function: " + _first_violation(g, spec))
    acc = np.bincount(np.concatenate(keys), weights=np.exp(lw - lz), minlength=size)
    return acc.reshape((q,) * len(U)) if U else acc.reshape(())


def exact_reconstruction_tv(g: MultiGraph, spec: PairwiseSpec, root: int, t: int) -> float:
    """|| mu_{root, far} - mu_root x mu_far ||_TV with far = {d(root, .) >= t}.

    The distance-t shell separates the root from the rest of the far set,
    so the value only needs the joint law of root and shell.
    """
    dist = bfs_distances(g, root)
    shell = sorted(v for v, d in dist.items() if d == t)
    if not shell:
        return 0.0
    p, _ = exact_probability_table(g, spec)
    mu_o = marginal_from_table(p, [root])
    if t == 0:
        joint = np.diag(mu_o)
        return 0.5 * float(np.abs(joint - np.outer(mu_o, mu_o)).sum())
    joint = marginal_from_table(p, [root] + shell).reshape(spec.q, -1)
    mu_d = joint.sum(axis=0)
    return 0.5 * float(np.abs(joint - np.outer(mu_o, mu_d)).sum())


# ------------------------------------------------------------ colorings


def _elimination_order(n, edges):
    nbrs = [set() for _ in range(n)]
    for u, v in edges:
        if u != v:
            nbrs[u].add(v)
            nbrs[v].add(u)
    alive = set(range(n))
    order = []
    while alive:
        v = min(alive, key=lambda x: (len(nbrs[x]), x))
        order.append(v)
        for a in nbrs[v]:
            nbrs[a] |= nbrs[v] - {a}
            nbrs[a].discard(v)
        alive.remove(v)
    return order


def count_proper_colorings(g: MultiGraph, q: int, max_table: int = 2**22) -> int:
    """Exact number of proper q-colorings by integer variable elimination."""
    if q < 1:
        raise ValidationError("q must be >= 1")
    if np.any(g.edges[:, 0] == g.edges[:, 1]):
        return 0
    neq = np.ones((q, q), dtype=object) - np.eye(q, dtype=np.int64).astype(object)
    factors = [((v,), np.ones(q, dtype=object)) for v in range(g.n)]
    for u, v in {tuple(sorted(e)) for e in g.edges.tolist()}:
        factors.append(((u, v), neq.copy()))
    for v in _elimination_order(g.n, g.edges.tolist()):
        touching = [f for f in factors if v in f[0]]
        factors = [f for f in factors if v not in f[0]]
        scope = sorted({w for f in touching for w in f[0]})
        if q ** len(scope) > max_table:
            raise ValidationError("elimination table exceeds the size guard")
        prod = np.ones((q,) * len(scope), dtype=object)
        for vars_, tab in touching:
            perm = sorted(range(len(vars_)), key=lambda k: vars_[k])
            t = np.transpose(tab, perm)
            shape = [q if w in vars_ else 1 for w in scope]
            prod = prod * t.reshape(shape)
        ax = scope.index(v)
        new = prod.sum(axis=ax)
        rest = tuple(w for w in scope if w != v)
        factors.append((rest, np.asarray(new, dtype=object)))
    total = 1
    for _, tab in factors:
        total *= int(np.asarray(tab, dtype=object).reshape(()).item())
    return total


# ------------------------------------------------------------ hyper-loops


@dataclass
class HyperloopResult:
    counts: np.ndarray   # N_G(l), l = 0..|F|
    lhs: float           # sum_x x_U exp(beta sum_a x_a), by enumeration
    rhs: float           # 2^|V| cosh^|F| sum_l N_G(l) tanh^l

    @property
    def has_hyperloop(self) -> bool:
        return bool(self.counts[1:].sum() > 0)


def pairwise_as_factor_graph(g: MultiGraph) -> FactorGraph:
    """Each edge becomes a c-node on its two endpoints."""
    m = g.n_edges
    couples = np.stack([g.edges.ravel(), np.repeat(np.arange(m), 2)], axis=1)
    return FactorGraph(g.n, m, couples)


def _cnode_masks(fg: FactorGraph) -> np.ndarray:
    if fg.n_vnodes > 62:
        raise ValidationError("hyper-loop enumeration supports at most 62 v-nodes")
    masks = np.zeros(fg.n_cnodes, dtype=np.int64)
    for v, c in fg.edges.tolist():
        masks[c] ^= np.int64(1) << np.int64(v)
    return masks


def hyperloop_counts(fg: FactorGraph, U=()) -> np.ndarray:
    """Number of c-node subsets of each size whose odd-degree set is exactly U."""
    F = fg.n_cnodes
    if F > 24:
        raise ValidationError("hyper-loop enumeration supports at most 24 factors")
    masks = _cnode_masks(fg)
    target = np.int64(0)
    for u in U:
        target ^= np.int64(1) << np.int64(u)
    par = np.zeros(1, dtype=np.int64)
    size = np.zeros(1, dtype=np.int64)
    for a in range(F):
        par = np.concatenate([par, par ^ masks[a]])
        size = np.concatenate([size, size + 1])
    return np.bincount(size[par == target], minlength=F + 1)


def hyperloop_polynomial(fg: FactorGraph, beta: float, U=()) -> HyperloopResult:
    """Both sides of the high-temperature expansion of sum_x x_U e^{beta sum_a x_a}.

    With ``U = ()`` the sum runs over hyper-loops (all v-node degrees even);
    otherwise over c-node subsets with odd degree exactly on ``U``.
    """
    counts = hyperloop_counts(fg, U)
    n = fg.n_vnodes
    if n > 24:
        raise ValidationError("too many v-nodes to enumerate")
    F = fg.n_cnodes
    masks = _cnode_masks(fg)
    s = np.arange(2**n, dtype=np.int64)        # bit i set <=> x_i = -1
    odd = np.zeros(len(s), dtype=np.int64)
    for a in range(F):
        odd += np.bitwise_count(s & masks[a]) & 1
    energy = F - 2 * odd                        # sum_a x_a
    umask = np.int64(0)
    for u in U:
        umask ^= np.int64(1) << np.int64(u)
    sign = 1 - 2 * (np.bitwise_count(s & umask).astype(np.int64) & 1)
    lhs = float(np.sum(sign * np.exp(beta * energy)))
    th = np.tanh(beta)
    rhs = float(2.0**n * np.cosh(beta) ** F * np.polyval(counts[::-1].astype(float), th))
    return HyperloopResult(counts, lhs, rhs)


def exact_spin_correlation(g: MultiGraph, beta: float, i: int, j: int, B=0.0) -> float:
    """E[X_i X_j] for the Ising model, by enumeration."""
    m = exact_marginal(g, ising_spec(g, beta, B), [i, j])
    return float(np.einsum("ab,a,b->", m, SPINS, SPINS))


# ------------------------------------------------------------ Bethe states


def _patch_sets(g: MultiGraph, r: int, cap: int):
    """Connected vertex sets of G-diameter <= 2r, grown breadth-first."""
    dist = {v: bfs_distances(g, v, 2 * r) for v in range(g.n)}
    nbrs = [set(g.neighbors(v).tolist()) - {v} for v in range(g.n)]
    seen = set()
    frontier = [frozenset([v]) for v in range(g.n)]
    out, hit = [], False
    while frontier:
        nxt = []
        for S in frontier:
            if S in seen:
                continue
            seen.add(S)
            out.append(S)
            if len(out) >= cap:
                return out, True
            for w in set().union(*(nbrs[v] for v in S)) - S:
                if all(w in dist[v] for v in S):
                    nxt.append(S | {w})
        frontier = nxt
    return out, hit


def bethe_approximation_error(g: MultiGraph, spec: PairwiseSpec, messages: np.ndarray, r: int,
                              cap: int = 20000) -> dict:
    """sup over patches U of || mu_U - nu_U ||_TV for the given messages.

    Patches are induced trees of diameter <= 2r whose boundary vertices
    are leaves. Boundary vertex i uses nu_{i -> u(i)} in place of psi_i.
    Singletons carry the message-based belief of the vertex, so r = 0
    reduces to the largest single-site error.

    ``messages[2e]`` is the message u -> v along ``g.edges[e] = (u, v)``
    and ``messages[2e + 1]`` the reverse one.
    """
    msgs = np.asarray(messages, dtype=float)
    if msgs.shape != (2 * g.n_edges, spec.q) or np.any(msgs < 0):
        raise ValidationError("messages must be a non-negative (2m, q) array")
    if spec.permitted is not None:
        u, v = g.edges[:, 0], g.edges[:, 1]
        xp = np.asarray(spec.permitted)
        if g.n_edges and (np.any(msgs[0::2][np.arange(g.n_edges), xp[u]] <= 0)
                          or np.any(msgs[1::2][np.arange(g.n_edges), xp[v]] <= 0)):
            raise ValidationError("messages are not permissive")
    p, _ = exact_probability_table(g, spec)
    ptr, nb, eid = g.csr
    sets, hit = _patch_sets(g, r, cap)
    worst, arg, n_used = 0.0, None, 0
    for S in sets:
        U = sorted(S)
        inU = set(U)
        eU = [e for e, (a, b) in enumerate(g.edges.tolist()) if a in inU and b in inU]
        if len(eU) != len(U) - 1:
            continue
        if len(U) == 1:
            nu = _belief(g, spec, msgs, U[0])
        else:
            pos = {w: k for k, w in enumerate(U)}
            logt = np.zeros((spec.q,) * len(U))
            ok = True
            for i in U:
                inside = [w for w in nb[ptr[i]:ptr[i + 1]].tolist() if w in inU]
                outside = [w for w in nb[ptr[i]:ptr[i + 1]].tolist() if w not in inU]
                if outside:
                    if len(inside) != 1:
                        ok = False
                        break
                    e = [x for x in eid[ptr[i]:ptr[i + 1]].tolist() if x in eU][0]
                    pot = msgs[2 * e] if g.edges[e, 0] == i else msgs[2 * e + 1]
                else:
                    pot = spec.vertex[i]
                shape = [1] * len(U)
                shape[pos[i]] = spec.q
                with np.errstate(divide="ignore"):
                    logt = logt + np.log(pot).reshape(shape)
            if not ok:
                continue
            for e in eU:
                a, b = g.edges[e]
                shape = [1] * len(U)
                shape[pos[a]] = spec.q
                shape[pos[b]] = spec.q
                tab = spec.edge[e] if pos[a] < pos[b] else spec.edge[e].T
                with np.errstate(divide="ignore"):
                    logt = logt + np.log(tab).reshape(shape)
            w = np.exp(logt - np.max(logt))
            nu = w / w.sum()
        mu = marginal_from_table(p, U)
        d = tv_distance(mu.ravel(), nu.ravel())
        n_used += 1
        if d > worst or arg is None:
            worst, arg = max(worst, d), tuple(U)
    return {"epsilon": worst, "argmax": arg, "n_patches": n_used, "cap_hit": hit}


def _belief(g, spec, msgs, i):
    ptr, nb, eid = g.csr
    lb = np.log(np.maximum(spec.vertex[i], 0.0) + 0.0)
    for w, e in zip(nb[ptr[i]:ptr[i + 1]].tolist(), eid[ptr[i]:ptr[i + 1]].tolist()):
        incoming = msgs[2 * e + 1] if g.edges[e, 0] == i else msgs[2 * e]
        tab = spec.edge[e] if g.edges[e, 0] == i else spec.edge[e].T
        with np.errstate(divide="ignore"):
            lb = lb + np.log(tab @ incoming)
    b = np.exp(lb - np.max(lb))
    return b / b.sum()
