"""Proper q-colorings of sparse random graphs.

Threshold formulas, q-core peeling, the tree-reconstruction recursion run
as population dynamics, the cluster complexity and two-replica types.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import gammainc, logsumexp

from ._common import ValidationError, make_rng
from .graph_ensembles import MultiGraph


def threshold_formulas(q: int) -> tuple[float, float]:
    """First-moment upper bound log q / |log(1-1/q)| and lower bound (q-1) log(q-1)."""
    if q < 3:
        raise ValidationError("q must be >= 3")
    return float(np.log(q) / -np.log1p(-1.0 / q)), float((q - 1) * np.log(q - 1))


# ------------------------------------------------------------ q-core


@dataclass
class CoreResult:
    vertices: np.ndarray     # surviving vertices, sorted
    order: list              # vertices in peeling order
    graph: MultiGraph        # induced core, relabelled 0..|core|-1

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0


def q_core(g: MultiGraph, q: int, seed=None) -> CoreResult:
    """Peel vertices of degree < q until none is left.

    Degrees count edge multiplicity and self-loops twice. With ``seed``
    the initial queue is shuffled, giving a random peeling order; the core
    does not depend on it.
    """
    if q < 1:
        raise ValidationError("q must be >= 1")
    deg = g.degrees().copy()
    ptr, nb, _ = g.csr
    alive = np.ones(g.n, dtype=bool)
    start = np.flatnonzero(deg < q)
    if seed is not None:
        start = make_rng(seed).permutation(start)
    queue = deque(start.tolist())
    queued = np.zeros(g.n, dtype=bool)
    queued[start] = True
    order = []
    while queue:
        v = queue.popleft()
        alive[v] = False
        order.append(v)
        for w in nb[ptr[v]:ptr[v + 1]].tolist():
            if alive[w] and w != v:
                deg[w] -= 1
                if deg[w] < q and not queued[w]:
                    queued[w] = True
                    queue.append(w)
    keep = np.flatnonzero(alive)
    relabel = -np.ones(g.n, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    e = g.edges
    mask = alive[e[:, 0]] & alive[e[:, 1]] if len(e) else np.zeros(0, dtype=bool)
    sub = MultiGraph(len(keep), relabel[e[mask]] if mask.any() else np.zeros((0, 2), dtype=np.int64))
    return CoreResult(keep, order, sub)


def alpha_core(q: int, tol: float = 1e-10) -> float:
    """sup{alpha : P(Poisson(2 alpha u) >= q-1) <= u for all u in [0, 1]}."""
    if q < 3:
        raise ValidationError("q must be >= 3")
    u = np.linspace(1e-4, 1.0, 4001)

    def excess(alpha):
        v = gammainc(q - 1, 2 * alpha * u) - u
        i = int(np.argmax(v))
        lo, hi = u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)]
        r = optimize.minimize_scalar(lambda x: -(gammainc(q - 1, 2 * alpha * x) - x),
                                     bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        return max(v[i], -r.fun)

    lo, hi = 0.0, float(q * np.log(q) + 10)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo


def greedy_coloring(g: MultiGraph, q: int, seed=None) -> np.ndarray:
    """Proper q-coloring built in reverse q-core peeling order.

    Succeeds whenever the q-core is empty (each vertex then has fewer than
    q neighbours colored before it); otherwise a smallest-last greedy pass
    is tried and a ValidationError raised on failure.
    """
    if len(g.edges) and np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValidationError("graph has a self-loop, so no proper coloring exists")
    core = q_core(g, q, seed)
    order = core.order[::-1] if core.empty else _smallest_last(g)
    ptr, nb, _ = g.csr
    col = -np.ones(g.n, dtype=np.int64)
    rng = make_rng(seed, 7)
    for v in order:
        used = set(col[nb[ptr[v]:ptr[v + 1]]].tolist())
        free = [c for c in range(q) if c not in used]
        if not free:
            raise ValidationError("greedy coloring failed; the graph may not be q-colorable")
        col[v] = free[int(rng.integers(len(free)))]
    return col


def _smallest_last(g: MultiGraph):
    """Repeatedly remove a minimum-degree vertex; color in reverse removal order."""
    deg = g.degrees().copy()
    ptr, nb, _ = g.csr
    heap = [(int(d), v) for v, d in enumerate(deg)]
    heapq.heapify(heap)
    gone = np.zeros(g.n, dtype=bool)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if gone[v] or d != deg[v]:
            continue
        gone[v] = True
        order.append(v)
        for w in nb[ptr[v]:ptr[v + 1]].tolist():
            if not gone[w]:
                deg[w] -= 1
                heapq.heappush(heap, (int(deg[w]), w))
    return order[::-1]


def is_proper(g: MultiGraph, colors: np.ndarray) -> bool:
    e = g.edges
    return bool(np.all(colors[e[:, 0]] != colors[e[:, 1]])) if len(e) else True


# ------------------------------------------------------------ reconstruction


@dataclass
class SimplexPopulation:
    nu: np.ndarray           # (N, q) rows in the simplex
    generation: int = 0
    ess: float = float("nan")

    def overlap(self) -> tuple[float, float]:
        """Mean TV distance to the uniform vector, with its standard error."""
        q = self.nu.shape[1]
        d = 0.5 * np.abs(self.nu - 1.0 / q).sum(axis=1)
        return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))


def _offspring_sampler(offspring):
    """``('kary', k)`` or ``('poisson', gamma)`` with mean 2 gamma."""
    kind, par = offspring
    if kind == "kary":
        k = int(par)
        return lambda rng, n: np.full(n, k, dtype=np.int64)
    if kind == "poisson":
        return lambda rng, n: rng.poisson(2.0 * par, n)
    raise ValidationError("offspring is ('kary', k) or ('poisson', gamma)")


def color_reconstruction_de(q: int, offspring, population: int = 10**4, iters: int = 100,
                            seed=None, stream: int = 0, symmetrize: bool = True) -> tuple[SimplexPopulation, float]:
    """Population dynamics for the law of the root posterior nu^{(t)}.

    Candidates F_0(nu_1..nu_K)(x) propto prod_i (1 - nu_i(x)) are weighted by
    z / z(uniform) = sum_x prod_i (1 - nu_i(x)) / (q (1-1/q)^K) and resampled
    multinomially. The start is the mixture of point masses q^-1 sum_x delta_x.

    The color-asymmetric mode of a finite population is not contracted by
    the recursion once k >= q-1, so by default every entry gets an
    independent uniform color permutation after each sweep. This leaves a
    color-symmetric law unchanged.
    """
    if q < 2 or population < 2:
        raise ValidationError("need q >= 2 and population >= 2")
    rng = make_rng(seed, stream)
    draw_k = _offspring_sampler(offspring)
    N = population
    nu = np.eye(q)[rng.integers(0, q, N)]
    ess = float(N)
    rows = np.arange(N)
    for _ in range(iters):
        K = draw_k(rng, N)
        idx = rng.integers(0, N, size=int(K.sum()))
        owner = np.repeat(rows, K)
        with np.errstate(divide="ignore"):
            lc = np.log1p(-nu[idx])
        S = np.zeros((N, q))
        np.add.at(S, owner, lc)
        with np.errstate(invalid="ignore"):
            lz = logsumexp(S, axis=1)
        logw = lz - np.log(q) - K * np.log1p(-1.0 / q)
        ok = np.isfinite(logw)
        cand = np.full((N, q), 1.0 / q)
        cand[ok] = np.exp(S[ok] - lz[ok, None])
        w = np.where(ok, np.exp(logw - logw[ok].max()), 0.0)
        w /= w.sum()
        ess = float(1.0 / np.sum(w**2))
        nu = cand[rng.choice(N, size=N, p=w)]
        if symmetrize:
            perm = np.argsort(rng.random((N, q)), axis=1)
            nu = np.take_along_axis(nu, perm, axis=1)
    return SimplexPopulation(nu, iters, ess), SimplexPopulation(nu).overlap()[0]


def tree_solvable(q: int, offspring, population: int = 10**4, iters: int = 100, seed=None,
                  floor: float = 1e-2) -> tuple[bool, float, float]:
    """Indicator overlap > max(3 SE, floor), with the overlap and its SE."""
    pop, _ = color_reconstruction_de(q, offspring, population, iters, seed)
    ov, se = pop.overlap()
    return bool(ov > max(3 * se, floor)), ov, se


def gamma_r_estimate(q: int, bracket=(0.5, 4.0), population: int = 10**4, iters: int = 100,
                     seeds=range(5), tol: float = 0.02, floor: float = 1e-2) -> dict:
    """Bisection on gamma of the Poisson(2 gamma) tree-solvability indicator.

    One bisection per seed; the CI is a t-interval over seeds.
    """
    lo0, hi0 = bracket
    ests = []
    for s in seeds:
        lo, hi = lo0, hi0
        if tree_solvable(q, ("poisson", lo), population, iters, s, floor)[0]:
            raise ValidationError(f"indicator already 1 at the lower end {lo}")
        if not tree_solvable(q, ("poisson", hi), population, iters, s, floor)[0]:
            raise ValidationError(f"indicator still 0 at the upper end {hi}")
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if tree_solvable(q, ("poisson", mid), population, iters, s, floor)[0]:
                hi = mid
            else:
                lo = mid
        ests.append(0.5 * (lo + hi))
    ests = np.array(ests)
    mean = float(ests.mean())
    if len(ests) > 1:
        half = float(stats.t.ppf(0.975, len(ests) - 1) * ests.std(ddof=1) / np.sqrt(len(ests)))
    else:
        half = float("nan")
    return {"estimate": mean, "ci": (mean - half, mean + half), "per_seed": ests.tolist(),
            "bracket": tuple(bracket), "tol": tol}


def complexity_sigma(k: int, q: int, Q: SimplexPopulation, n_samples: int = 10**5, seed=None) -> dict:
    """Cluster complexity Sigma(k) = ((k+1)/2) E W_e - E W_v.

    Colors of an edge are uniform over x1 != x2 and the k+1 neighbours of a
    vertex get i.i.d. colors different from the vertex color; each message
    is drawn from Q_x, i.e. Q reweighted by q nu(x).
    """
    rng = make_rng(seed, 3)
    nu = Q.nu
    N = len(nu)
    cdf = np.cumsum(nu, axis=0)
    cdf /= cdf[-1]

    def draw(colors):
        u = rng.random(len(colors))
        out = np.empty(len(colors), dtype=np.int64)
        for x in range(q):
            sel = colors == x
            out[sel] = np.searchsorted(cdf[:, x], u[sel], side="right")
        return nu[np.minimum(out, N - 1)]

    x1 = rng.integers(0, q, n_samples)
    x2 = (x1 + rng.integers(1, q, n_samples)) % q
    a, b = draw(x1), draw(x2)
    with np.errstate(divide="ignore"):
        we = np.log1p(-(a * b).sum(axis=1)) - np.log1p(-1.0 / q)
    x = rng.integers(0, q, n_samples)
    xs = (x[:, None] + rng.integers(1, q, (n_samples, k + 1))) % q
    msgs = draw(xs.ravel()).reshape(n_samples, k + 1, q)
    with np.errstate(divide="ignore"):
        lp = np.log1p(-msgs).sum(axis=1) - (k + 1) * np.log1p(-1.0 / q)
    wv = logsumexp(lp, axis=1) - np.log(q)
    per_e, per_v = 0.5 * (k + 1) * we, wv
    sigma = float(per_e.mean() - per_v.mean())
    se = float(np.sqrt(per_e.var(ddof=1) / n_samples + per_v.var(ddof=1) / n_samples))
    return {"sigma": sigma, "se": se, "E_We": float(we.mean()), "E_Wv": float(wv.mean())}


def uniform_bethe_density(k: int, q: int) -> float:
    """Phi(uniform)/n = log q + ((k+1)/2) log(1 - 1/q) on (k+1)-regular graphs."""
    return float(np.log(q) + 0.5 * (k + 1) * np.log1p(-1.0 / q))


# ------------------------------------------------------------ replicas


@dataclass
class ReplicaType:
    nu: np.ndarray
    n: int

    @property
    def delta(self) -> np.ndarray:
        q = self.nu.shape[0]
        return self.nu - 1.0 / q**2

    def sphericity(self) -> float:
        """Frobenius distance to the uniform joint type."""
        return float(np.linalg.norm(self.delta))

    def condition_terms(self) -> np.ndarray:
        """[Delta(x,x) - (2/q) sum_x' Delta(x,x')]^2 for each color x."""
        d = self.delta
        q = d.shape[0]
        return (np.diag(d) - 2.0 / q * d.sum(axis=1)) ** 2


def joint_type(x1: np.ndarray, x2: np.ndarray, q: int) -> ReplicaType:
    x1, x2 = np.asarray(x1), np.asarray(x2)
    if x1.shape != x2.shape:
        raise ValidationError("replicas must have equal length")
    n = len(x1)
    nu = np.bincount(x1 * q + x2, minlength=q * q).reshape(q, q) / max(n, 1)
    return ReplicaType(nu, n)


def two_replica_type(pairs, q: int) -> dict:
    """Average joint type, sphericity and condition statistic over replica pairs.

    ``stat`` is the mean over pairs and colors of the condition terms, and
    ``stat_max`` the largest per-color mean.
    """
    types = [joint_type(a, b, q) for a, b in pairs]
    if not types:
        raise ValidationError("no replica pairs given")
    terms = np.array([t.condition_terms() for t in types])
    sph = np.array([t.sphericity() for t in types])
    return {
        "nu": np.mean([t.nu for t in types], axis=0),
        "sphericity": float(sph.mean()),
        "stat": float(terms.mean()),
        "stat_max": float(terms.mean(axis=0).max()),
        "stat_se": float(terms.mean(axis=1).std(ddof=1) / np.sqrt(len(types))) if len(types) > 1 else float("nan"),
        "n_pairs": len(types),
    }
