"""Random graph and tree ensembles, local balls and local profiles.

Vertices are integers ``0..n-1``. Multigraphs keep self-loops and repeated
edges (configuration-model artifacts); ``simplify`` removes them on demand.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._common import ValidationError, make_rng


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class DegreeDistribution:
    """Probability mass function ``P_k`` on ``k = 0, 1, ..., K``."""

    pmf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("degree pmf must be a non-empty non-negative array")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"degree pmf sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "pmf", p)

    @classmethod
    def delta(cls, k: int) -> "DegreeDistribution":
        p = np.zeros(k + 1)
        p[k] = 1.0
        return cls(p)

    @classmethod
    def poisson(cls, mean: float, tail: float = 1e-16) -> "DegreeDistribution":
        """Poisson(mean) truncated where the upper tail drops below ``tail``."""
        if mean < 0:
            raise ValidationError("Poisson mean must be >= 0")
        kmax = int(stats.poisson.isf(tail, mean)) + 1 if mean > 0 else 0
        p = stats.poisson.pmf(np.arange(kmax + 1), mean)
        return cls(p / p.sum())

    @property
    def support_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    def size_biased(self) -> "DegreeDistribution":
        """rho_k = (k+1) P_{k+1} / P-bar."""
        pbar = self.mean
        if pbar <= 0:
            raise ValidationError("size-biased law needs a positive mean")
        k = np.arange(1, len(self.pmf))
        rho = k * self.pmf[1:] / pbar
        if rho.size == 0:
            rho = np.array([1.0])
        return DegreeDistribution(rho / rho.sum())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.choice(len(self.pmf), size=size, p=self.pmf)


class MultiGraph:
    """Undirected multigraph with an O(degree) adjacency index.

    ``edges`` is an ``(m, 2)`` integer array; row ``e`` is edge ``e``.
    A self-loop contributes 2 to the degree of its vertex.
    """

    def __init__(self, n_vertices: int, edges=None, meta: dict | None = None):
        if n_vertices < 0:
            raise ValidationError("n_vertices must be >= 0")
        e = np.zeros((0, 2), dtype=np.int64) if edges is None else np.asarray(edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n_vertices):
            raise ValidationError("edge endpoint out of range")
        e.setflags(write=False)
        self.n = int(n_vertices)
        self.edges = e
        self.meta = dict(meta or {})
        self._adj = None

    @property
    def n_vertices(self) -> int:
        return self.n

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def _build_adj(self):
        # CSR over half-edges: slot s of vertex i -> (neighbor, edge id)
        m = len(self.edges)
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.argsort(src, kind="stable")
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=self.n), out=ptr[1:])
        self._adj = (ptr, dst[order], eid[order])

    @property
    def csr(self):
        """``(indptr, neighbors, edge_ids)`` with one entry per half-edge."""
        if self._adj is None:
            self._build_adj()
        return self._adj

    def neighbors(self, i: int) -> np.ndarray:
        ptr, nb, _ = self.csr
        return nb[ptr[i]:ptr[i + 1]]

    def incident_edges(self, i: int) -> np.ndarray:
        ptr, _, eid = self.csr
        return eid[ptr[i]:ptr[i + 1]]

    def has_defects(self) -> bool:
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            return True
        key = np.sort(self.edges, axis=1)
        return len(np.unique(key, axis=0)) < len(key)

    def simplify(self) -> tuple["MultiGraph", int]:
        """Drop self-loops and duplicate edges; return the graph and defect count."""
        keep = self.edges[self.edges[:, 0] != self.edges[:, 1]]
        key = np.unique(np.sort(keep, axis=1), axis=0) if len(keep) else keep
        return MultiGraph(self.n, key, self.meta), self.n_edges - len(key)

    def to_text(self) -> str:
        lines = [f"{self.n} {self.n_edges}"]
        lines += [f"{u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MultiGraph":
        rows = [ln.split() for ln in text.strip().splitlines()]
        n, m = int(rows[0][0]), int(rows[0][1])
        edges = np.array([[int(a), int(b)] for a, b in rows[1:1 + m]], dtype=np.int64)
        return cls(n, edges.reshape(-1, 2))

    def metadata_json(self) -> str:
        return json.dumps(self.meta, sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, MultiGraph) and self.n == other.n and np.array_equal(self.edges, other.edges)

    def __repr__(self):
        return f"MultiGraph(n={self.n}, m={self.n_edges})"


class FactorGraph:
    """Bipartite (v-node, c-node) multigraph given as an ordered couple list.

    ``edges[s] = (v, c)``; the order is the socket order: all sockets of
    v-node 0 first, then v-node 1, and so on.
    """

    def __init__(self, n_vnodes: int, n_cnodes: int, edges, meta: dict | None = None):
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e[:, 0].min() < 0 or e[:, 0].max() >= n_vnodes
                       or e[:, 1].min() < 0 or e[:, 1].max() >= n_cnodes):
            raise ValidationError("factor-graph couple out of range")
        e.setflags(write=False)
        self.n_vnodes = int(n_vnodes)
        self.n_cnodes = int(n_cnodes)
        self.edges = e
        self.meta = dict(meta or {})

    @property
    def n_couples(self) -> int:
        return len(self.edges)

    def vnode_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n_vnodes)

    def cnode_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n_cnodes)

    def cnode_members(self) -> list[list[int]]:
        """For every c-node the list of v-nodes on it (with multiplicity)."""
        out = [[] for _ in range(self.n_cnodes)]
        for v, c in self.edges.tolist():
            out[c].append(v)
        return out

    def vnode_members(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_vnodes)]
        for v, c in self.edges.tolist():
            out[v].append(c)
        return out

    def parity_matrix(self) -> np.ndarray:
        """Binary ``n_cnodes x n_vnodes`` matrix of edge-multiplicity parities."""
        h = np.zeros((self.n_cnodes, self.n_vnodes), dtype=np.uint8)
        np.add.at(h, (self.edges[:, 1], self.edges[:, 0]), 1)
        return h % 2

    def to_text(self) -> str:
        lines = [f"{self.n_vnodes} {self.n_cnodes} {self.n_couples}"]
        lines += [f"{v} {c}" for v, c in self.edges]
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"FactorGraph(v={self.n_vnodes}, c={self.n_cnodes}, couples={self.n_couples})"


@dataclass
class RootedTree:
    """Rooted tree stored by parent pointers; vertex 0 is the root."""

    parent: np.ndarray
    generation: np.ndarray
    children: list = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return 0

    def offspring(self) -> np.ndarray:
        return np.array([len(c) for c in self.children], dtype=np.int64)

    def depth(self) -> int:
        return int(self.generation.max()) if len(self.generation) else 0

    def to_multigraph(self) -> MultiGraph:
        v = np.arange(1, self.n_vertices)
        return MultiGraph(self.n_vertices, np.stack([self.parent[1:], v], axis=1) if len(v) else None)

    @classmethod
    def from_offspring(cls, offspring_by_vertex) -> "RootedTree":
        """Build from BFS-ordered offspring counts."""
        parent, gen, children = [-1], [0], [[]]
        q = deque([0])
        counts = list(offspring_by_vertex)
        i = 0
        while q and i < len(counts):
            v = q.popleft()
            for _ in range(counts[i]):
                w = len(parent)
                parent.append(v)
                gen.append(gen[v] + 1)
                children.append([])
                children[v].append(w)
                q.append(w)
            i += 1
        return cls(np.array(parent), np.array(gen), children)


# ------------------------------------------------------------- samplers


def _degree_sequence(P: DegreeDistribution, n: int) -> np.ndarray:
    """floor(n P_k) vertices of degree k, leftovers by largest remainder.

    Vertices are sorted by degree, so the parity fix lands on the last
    (highest-degree) vertex.
    """
    target = n * P.pmf
    counts = np.floor(target).astype(np.int64)
    short = n - counts.sum()
    if short > 0:
        frac = target - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    deg = np.repeat(np.arange(len(counts)), counts)
    if deg.sum() % 2 == 1:
        deg[-1] += 1
    return deg


def sample_configuration_model(P: DegreeDistribution, n: int, seed=None) -> MultiGraph:
    """Configuration model: uniform matching of the prescribed half-edges."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not isinstance(P, DegreeDistribution):
        P = DegreeDistribution(P)
    rng = make_rng(seed)
    deg = _degree_sequence(P, n)
    stubs = np.repeat(np.arange(n), deg)
    rng.shuffle(stubs)
    edges = stubs.reshape(-1, 2)
    return MultiGraph(n, edges, {"ensemble": "configuration", "n": n,
                                 "pmf": P.pmf.tolist(), "seed": _seed_meta(seed)})


def sample_erdos_renyi(alpha: float, n: int, variant: str = "fixed-m", seed=None) -> MultiGraph:
    """Erdos-Renyi graphs with ``alpha`` edges per vertex.

    ``fixed-m``: m = floor(n alpha) edges with i.i.d. uniform endpoints
    (configuration style, self-loops and repeats possible).
    ``binomial``: each pair independently with probability 2 alpha/(n-1).
    """
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = make_rng(seed)
    meta = {"ensemble": f"erdos-renyi/{variant}", "n": n, "alpha": alpha, "seed": _seed_meta(seed)}
    if variant == "fixed-m":
        m = int(np.floor(n * alpha))
        return MultiGraph(n, rng.integers(0, n, size=(m, 2)), meta)
    if variant == "binomial":
        if n < 2:
            return MultiGraph(n, None, meta)
        p = min(1.0, 2.0 * alpha / (n - 1))
        n_pairs = n * (n - 1) // 2
        m = int(rng.binomial(n_pairs, p))
        idx = np.sort(rng.choice(n_pairs, size=m, replace=False))
        return MultiGraph(n, _pair_from_index(idx, n), meta)
    raise ValidationError(f"unknown Erdos-Renyi variant {variant!r}")


def _pair_from_index(idx: np.ndarray, n: int) -> np.ndarray:
    # row-major enumeration of pairs i < j
    i_all = np.arange(n, dtype=np.int64)
    starts = i_all * (2 * n - i_all - 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return np.stack([i, j], axis=1)


def sample_factor_ensemble(kind: str, n: int, m: int, l: int, k: int | None = None, seed=None) -> FactorGraph:
    """Factor-graph ensembles with ``n`` v-nodes of degree ``l`` and ``m`` c-nodes.

    ``regular``: every c-node has degree ``k`` (requires n l = m k), sockets
    matched by a uniform permutation. ``poisson``: each v-socket picks a
    uniform c-node independently (requires l >= 3).
    """
    rng = make_rng(seed)
    meta = {"ensemble": kind, "n": n, "m": m, "l": l, "k": k, "seed": _seed_meta(seed)}
    if n < 0 or m < 1 and n > 0:
        raise ValidationError("need n >= 0 and m >= 1")
    vs = np.repeat(np.arange(n), l)
    if kind == "regular":
        if k is None or n * l != m * k:
            raise ValidationError(f"regular ensemble needs n*l == m*k (got {n}*{l} vs {m}*{k})")
        cs = np.repeat(np.arange(m), k)
        perm = rng.permutation(n * l)
        return FactorGraph(n, m, np.stack([vs, cs[perm]], axis=1), meta)
    if kind == "poisson":
        if l < 3:
            raise ValidationError("poisson_l ensemble requires l >= 3")
        return FactorGraph(n, m, np.stack([vs, rng.integers(0, m, size=n * l)], axis=1), meta)
    raise ValidationError(f"unknown factor ensemble {kind!r}")


def sample_galton_watson_tree(root_dist: DegreeDistribution, offspring_dist: DegreeDistribution,
                              depth: int, seed=None, max_vertices: int = 10**7) -> RootedTree:
    """Galton-Watson tree truncated at generation ``depth``."""
    if depth < 0:
        raise ValidationError("depth must be >= 0")
    rng = make_rng(seed)
    parent, gen = [np.array([-1])], [np.array([0])]
    frontier = np.array([0])
    total = 1
    for t in range(depth):
        law = root_dist if t == 0 else offspring_dist
        k = law.sample(rng, len(frontier))
        kids = int(k.sum())
        if kids == 0:
            break
        if total + kids > max_vertices:
            raise ValidationError("tree exceeds max_vertices")
        par = np.repeat(frontier, k)
        parent.append(par)
        gen.append(np.full(kids, t + 1))
        frontier = np.arange(total, total + kids)
        total += kids
    parent = np.concatenate(parent)
    gen = np.concatenate(gen)
    children = [[] for _ in range(total)]
    for v in range(1, total):
        children[parent[v]].append(v)
    return RootedTree(parent, gen, children)


def regular_tree(k: int, depth: int) -> RootedTree:
    """Deterministic tree T_k(depth): root has k children, others k-1."""
    return sample_galton_watson_tree(DegreeDistribution.delta(k), DegreeDistribution.delta(max(k - 1, 0)), depth, 0)


def grid_graph(rows: int, cols: int) -> MultiGraph:
    """Nearest-neighbour rows x cols grid; vertex ``r*cols + c``."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return MultiGraph(rows * cols, np.array(edges, dtype=np.int64).reshape(-1, 2))


# --------------------------------------------------------- local balls


@dataclass
class Ball:
    center: int
    radius: int
    vertices: np.ndarray     # original ids in BFS order, center first
    distance: np.ndarray     # distance of each listed vertex
    edges: np.ndarray        # original edge ids kept in the ball
    is_tree: bool
    boundary: np.ndarray     # vertices at distance exactly radius
    graph: MultiGraph        # relabelled ball, local id k <-> vertices[k]


def bfs_distances(g: MultiGraph, source: int, radius: int | None = None) -> dict:
    dist = {int(source): 0}
    q = deque([int(source)])
    ptr, nb, _ = g.csr
    while q:
        v = q.popleft()
        if radius is not None and dist[v] >= radius:
            continue
        for w in nb[ptr[v]:ptr[v + 1]].tolist():
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def local_ball(g: MultiGraph, i: int, t: int) -> Ball:
    """Ball of radius ``t`` around ``i``.

    Edges joining two vertices at distance exactly ``t`` are left out, so the
    ball is a tree whenever the graph looks like one up to depth ``t``.
    """
    if not 0 <= i < g.n:
        raise ValidationError("vertex out of range")
    dist = bfs_distances(g, i, t)
    verts = np.array(sorted(dist, key=lambda v: (dist[v], v)), dtype=np.int64)
    d = np.array([dist[v] for v in verts.tolist()], dtype=np.int64)
    ptr, nb, eid = g.csr
    keep = set()
    for v in verts.tolist():
        for w, e in zip(nb[ptr[v]:ptr[v + 1]].tolist(), eid[ptr[v]:ptr[v + 1]].tolist()):
            if w in dist and not (dist[v] == t and dist[w] == t):
                keep.add(e)
    kept = np.array(sorted(keep), dtype=np.int64)
    n_b = len(verts)
    is_tree = len(kept) == n_b - 1  # ball is connected, so acyclic iff m = n - 1
    loc = {int(v): k for k, v in enumerate(verts.tolist())}
    sub_edges = np.array([[loc[int(g.edges[e, 0])], loc[int(g.edges[e, 1])]] for e in kept.tolist()],
                         dtype=np.int64).reshape(-1, 2)
    return Ball(i, t, verts, d, kept, bool(is_tree), verts[d == t], MultiGraph(n_b, sub_edges))


CYCLIC = "cyclic"


def canonical_tree_code(g: MultiGraph, root: int = 0) -> str:
    """Canonical BFS offspring code of a rooted tree.

    Siblings are ordered by the canonical code of their subtrees, so two
    rooted trees get the same code iff they are isomorphic.
    """
    n = g.n
    if g.n_edges != n - 1 or (n > 1 and len(bfs_distances(g, root)) != n):
        return CYCLIC
    ptr, nb, _ = g.csr
    par = {root: -1}
    order = [root]
    for v in order:
        for w in nb[ptr[v]:ptr[v + 1]].tolist():
            if w != par[v] and w not in par:
                par[w] = v
                order.append(w)
    kids = {v: [] for v in order}
    for v in order[1:]:
        kids[par[v]].append(v)
    sig = {}
    for v in reversed(order):
        kids[v].sort(key=lambda w: sig[w])
        sig[v] = "(" + "".join(sig[w] for w in kids[v]) + ")"
    out, q = [], deque([root])
    while q:
        v = q.popleft()
        out.append(len(kids[v]))
        q.extend(kids[v])
    return ",".join(map(str, out))


def empirical_local_profile(sampler, t: int, n: int, n_samples: int, seed=None,
                            roots_per_sample: int | None = None, max_ball: int = 10**4) -> dict:
    """Empirical law of the depth-``t`` ball around uniform roots.

    ``sampler(n, seed)`` must return a MultiGraph. Returns
    ``{"pmf": {code: prob}, "counts": {code: count}, "total": N}``.
    """
    rng = make_rng(seed)
    counts: Counter = Counter()
    for s in range(n_samples):
        g = sampler(n, int(rng.integers(2**62)))
        roots = np.arange(g.n) if roots_per_sample is None else rng.integers(0, g.n, roots_per_sample)
        for r in roots.tolist():
            ball = local_ball(g, r, t)
            if len(ball.vertices) > max_ball:
                raise ValidationError("ball exceeds the enumerable size guard")
            code = canonical_tree_code(ball.graph, 0) if ball.is_tree else CYCLIC
            counts[code] += 1
    total = sum(counts.values())
    return {"pmf": {c: k / total for c, k in sorted(counts.items())},
            "counts": dict(sorted(counts.items())), "total": total}


def sparsity_profile(g: MultiGraph, L_values) -> np.ndarray:
    """n^{-1} sum_i deg(i) 1(deg(i) >= L) for each L."""
    d = g.degrees()
    return np.array([d[d >= L].sum() / g.n for L in L_values])


def _seed_meta(seed):
    return int(seed) if isinstance(seed, (int, np.integer)) else None
