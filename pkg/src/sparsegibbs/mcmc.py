"""Markov chain samplers used as empirical oracles.

Curie-Weiss opinion dynamics with the exact single-site Metropolis rule,
heat-bath sampling of pairwise Ising models and single-site dynamics for
uniform proper colorings. Graph samplers sweep over a fixed partition of
the vertices into independent sets, updating each set in one vectorized
step; every block update leaves the target measure invariant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._common import NumericalError, ValidationError, make_rng
from .coloring import greedy_coloring, is_proper
from .graph_ensembles import MultiGraph


@dataclass
class ChainState:
    x: np.ndarray
    model: str
    sweeps: int = 0
    steps: int = 0


# ------------------------------------------------------------ Curie-Weiss


def cw_flip_probability(x: np.ndarray, i: int, beta: float) -> float:
    """exp(-2 beta |M^(i)| / n) if M^(i) x_i > 0, and 1 otherwise."""
    n = len(x)
    Mi = int(x.sum()) - int(x[i])
    return float(np.exp(-2.0 * beta * abs(Mi) / n)) if Mi * x[i] > 0 else 1.0


def cw_glauber_step(state: ChainState, beta: float, rng) -> ChainState:
    """One update: a uniformly chosen individual flips with the Metropolis probability."""
    if state.model != "curie-weiss":
        raise ValidationError("state is not bound to the Curie-Weiss model")
    rng = make_rng(rng)
    i = int(rng.integers(len(state.x)))
    if rng.random() < cw_flip_probability(state.x, i, beta):
        state.x[i] = -state.x[i]
    state.steps += 1
    return state


def cw_initial_state(n: int, seed=None) -> ChainState:
    """i.i.d. uniform opinions."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = make_rng(seed, 21)
    return ChainState(rng.choice(np.array([1, -1], dtype=np.int64), size=n), "curie-weiss")


def cw_glauber_run(n: int, beta: float, steps: int, seed=None, burn_in: int = 0,
                   state: ChainState | None = None) -> dict:
    """Run the opinion dynamics and record the imbalance M after every step past burn-in.

    Returns {'M': array, 'state': ChainState}; M is kept incrementally.
    """
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    state = state or cw_initial_state(n, seed)
    x = state.x
    rng = make_rng(seed, 22)
    idx = rng.integers(0, n, size=steps).tolist()
    U = rng.random(steps).tolist()
    M = int(x.sum())
    xs = x.tolist()
    out = np.empty(max(steps - burn_in, 0), dtype=np.int64)
    c = 2.0 * beta / n
    for t in range(steps):
        i = idx[t]
        xi = xs[i]
        Mi = M - xi
        if Mi * xi <= 0 or U[t] < math.exp(-c * abs(Mi)):
            xs[i] = -xi
            M -= 2 * xi
        if t >= burn_in:
            out[t - burn_in] = M
    state.x = np.array(xs, dtype=np.int64)
    state.steps += steps
    return {"M": out, "state": state}


def _spin_configs(n: int) -> np.ndarray:
    # row s: bit i set <=> x_i = -1 (state 1)
    s = np.arange(2**n)[:, None]
    return 1 - 2 * ((s >> np.arange(n)) & 1)


def cw_transition_matrix(n: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """(P, mu) for the random-scan opinion dynamics on {+1,-1}^n, n <= 12."""
    if n > 12:
        raise ValidationError("transition matrix limited to n <= 12")
    X = _spin_configs(n)
    N = len(X)
    P = np.zeros((N, N))
    for s in range(N):
        for i in range(n):
            p = cw_flip_probability(X[s], i, beta)
            t = s ^ (1 << i)
            P[s, t] += p / n
            P[s, s] += (1 - p) / n
    M = X.sum(axis=1)
    logw = beta / n * (M * M - n) / 2.0
    mu = np.exp(logw - logw.max())
    return P, mu / mu.sum()


# ------------------------------------------------------------ block structure


@dataclass
class _Blocks:
    members: list          # vertex arrays, one per independent set
    src: list              # per block: local index of the owner of each directed edge
    dst: list              # per block: neighbor vertex of each directed edge
    eid: list              # per block: edge id of each directed edge


def _independent_blocks(g: MultiGraph) -> _Blocks:
    """Greedy partition into independent sets, ignoring self-loops."""
    ptr, nb, eid = g.csr
    col = -np.ones(g.n, dtype=np.int64)
    for v in range(g.n):
        used = {int(c) for w, c in zip(nb[ptr[v]:ptr[v + 1]], col[nb[ptr[v]:ptr[v + 1]]]) if w != v}
        c = 0
        while c in used:
            c += 1
        col[v] = c
    owner = np.repeat(np.arange(g.n), np.diff(ptr))
    keep = owner != nb
    owner, dstv, eidv = owner[keep], nb[keep], eid[keep]
    members, src, dst, eids = [], [], [], []
    local = np.empty(g.n, dtype=np.int64)
    for c in range(int(col.max()) + 1 if g.n else 0):
        mem = np.flatnonzero(col == c)
        local[mem] = np.arange(len(mem))
        sel = col[owner] == c
        members.append(mem)
        src.append(local[owner[sel]])
        dst.append(dstv[sel])
        eids.append(eidv[sel])
    return _Blocks(members, src, dst, eids)


def _autocorr(series: np.ndarray, max_lag: int = 50) -> list:
    s = np.asarray(series, float) - np.mean(series)
    v = float(s @ s)
    if v == 0 or len(s) < 2:
        return [1.0]
    L = min(max_lag, len(s) - 1)
    return [float(s[: len(s) - k] @ s[k:] / v) for k in range(L + 1)]


# ------------------------------------------------------------ Ising heat-bath


@dataclass
class HeatbathResult:
    mean_spin: np.ndarray            # X-bar at every recorded sweep
    site_means: np.ndarray           # per-site average of x_i over recorded sweeps
    autocorrelation: list
    final: ChainState
    samples: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"mean_spin": self.mean_spin.tolist(), "site_means": self.site_means.tolist(),
                "autocorrelation": self.autocorrelation, "sweeps": self.final.sweeps}


def ising_heatbath_run(g: MultiGraph, beta: float, B=0.0, J=1.0, sweeps: int = 100, burn_in: int = 0,
                       seed=None, stride: int = 1, init="random", keep_samples: bool = False) -> HeatbathResult:
    """Heat-bath sweeps for mu(x) propto exp(beta sum_e J_e x_i x_j + sum_i B_i x_i).

    Each site is resampled from its conditional law
    P(x_i = +1 | rest) = 1 / (1 + exp(-2 (B_i + beta sum_j J_ij x_j))).
    """
    if not np.isfinite(beta) or not np.all(np.isfinite(np.asarray(B, float))) \
            or not np.all(np.isfinite(np.asarray(J, float))):
        raise ValidationError("beta, B and J must be finite")
    if sweeps < 1 or burn_in < 0 or stride < 1:
        raise ValidationError("need sweeps >= 1, burn_in >= 0, stride >= 1")
    rng = make_rng(seed, 31)
    Bv = np.broadcast_to(np.asarray(B, float), (g.n,))
    Je = np.broadcast_to(np.asarray(J, float), (g.n_edges,))
    if isinstance(init, str):
        if init == "random":
            x = rng.choice(np.array([1, -1]), size=g.n)
        elif init == "plus":
            x = np.ones(g.n, dtype=np.int64)
        elif init == "minus":
            x = -np.ones(g.n, dtype=np.int64)
        else:
            raise ValidationError("init is 'random', 'plus', 'minus' or an array")
    else:
        x = np.asarray(init, dtype=np.int64).copy()
    blocks = _independent_blocks(g)
    wts = [beta * Je[e] for e in blocks.eid]
    rec, sums, kept = [], np.zeros(g.n), []
    for s in range(sweeps):
        for mem, src, dst, w in zip(blocks.members, blocks.src, blocks.dst, wts):
            h = Bv[mem] + np.bincount(src, weights=w * x[dst], minlength=len(mem))
            p_plus = 0.5 * (1.0 + np.tanh(h))
            x[mem] = np.where(rng.random(len(mem)) < p_plus, 1, -1)
        if s >= burn_in and (s - burn_in) % stride == 0:
            rec.append(x.mean())
            sums += x
            if keep_samples:
                kept.append(x.copy())
    rec = np.array(rec)
    if not np.all(np.isfinite(rec)):
        raise NumericalError("non-finite magnetization")
    return HeatbathResult(rec, sums / max(len(rec), 1), _autocorr(rec),
                          ChainState(x, "ising", sweeps), kept)


def ising_transition_matrix(g: MultiGraph, beta: float, B=0.0, J=1.0) -> tuple[np.ndarray, np.ndarray]:
    """(P, mu) for random-scan single-site heat-bath, n <= 12."""
    if g.n > 12:
        raise ValidationError("transition matrix limited to n <= 12")
    n = g.n
    Bv = np.broadcast_to(np.asarray(B, float), (n,))
    Je = np.broadcast_to(np.asarray(J, float), (g.n_edges,))
    X = _spin_configs(n)
    e = g.edges
    logw = beta * (X[:, e[:, 0]] * X[:, e[:, 1]]) @ Je + X @ Bv
    mu = np.exp(logw - logw.max())
    mu /= mu.sum()
    N = len(X)
    P = np.zeros((N, N))
    for s in range(N):
        for i in range(n):
            t = s ^ (1 << i)
            # conditional law of x_i given the rest, from the two weights
            pt = 1.0 / (1.0 + np.exp(logw[s] - logw[t]))
            P[s, t] += pt / n
            P[s, s] += (1 - pt) / n
    return P, mu


# ------------------------------------------------------------ colorings


@dataclass
class ColoringRun:
    samples: list
    final: ChainState
    init: np.ndarray
    restarts: int

    def as_dict(self) -> dict:
        return {"samples": [s.tolist() for s in self.samples], "sweeps": self.final.sweeps,
                "restarts": self.restarts}


def _greedy_with_restarts(g: MultiGraph, q: int, seed, restarts: int):
    last = None
    for r in range(restarts):
        try:
            return greedy_coloring(g, q, seed=(0 if seed is None else int(seed)) * 1009 + r), r
        except ValidationError as exc:
            last = exc
    raise ValidationError(f"no proper {q}-coloring found by greedy after {restarts} restarts "
                          f"({last}); try a larger q")


def coloring_glauber_run(g: MultiGraph, q: int, sweeps: int = 100, burn_in: int = 0, seed=None,
                         stride: int = 1, init=None, restarts: int = 5, relabel: bool = True) -> ColoringRun:
    """Single-site dynamics for the uniform measure on proper q-colorings.

    Each site gets a color drawn uniformly among those not used by its
    neighbours. With ``relabel`` every sweep ends with a uniformly random
    permutation of the colors, which also preserves the uniform measure
    and connects colorings that single-site moves cannot (a triangle with
    q = 3 is frozen under single-site moves alone).
    """
    if q < 1 or sweeps < 1 or burn_in < 0 or stride < 1:
        raise ValidationError("need q >= 1, sweeps >= 1, burn_in >= 0, stride >= 1")
    if init is None:
        x, used = _greedy_with_restarts(g, q, seed, restarts)
    else:
        x, used = np.asarray(init, dtype=np.int64).copy(), 0
        if not is_proper(g, x) or x.min(initial=0) < 0 or x.max(initial=0) >= q:
            raise ValidationError("initial coloring is not a proper q-coloring")
    x0 = x.copy()
    rng = make_rng(seed, 41)
    blocks = _independent_blocks(g)
    out = []
    for s in range(sweeps):
        for mem, src, dst in zip(blocks.members, blocks.src, blocks.dst):
            forbid = np.zeros((len(mem), q), dtype=bool)
            forbid[src, x[dst]] = True
            allowed = ~forbid
            cnt = allowed.sum(axis=1)
            r = (rng.random(len(mem)) * cnt).astype(np.int64)
            x[mem] = np.argmax(np.cumsum(allowed, axis=1) > r[:, None], axis=1)
        if relabel:
            x = rng.permutation(q)[x]
        if s >= burn_in and (s - burn_in) % stride == 0:
            if not is_proper(g, x):
                raise NumericalError("coloring chain left the set of proper colorings")
            out.append(x.copy())
    return ColoringRun(out, ChainState(x, "coloring", sweeps), x0, used)


def coloring_transition_matrix(g: MultiGraph, q: int, relabel: bool = False):
    """(P, states) for random-scan single-site dynamics on proper colorings, q^n <= 2^16.

    With ``relabel`` each step is followed by a uniform color permutation.
    """
    if q ** g.n > 2**16:
        raise ValidationError("state space too large")
    states = [s for s in itertools.product(range(q), repeat=g.n) if is_proper(g, np.array(s))]
    index = {s: k for k, s in enumerate(states)}
    ptr, nb, _ = g.csr
    N = len(states)
    P = np.zeros((N, N))
    for k, s in enumerate(states):
        for i in range(g.n):
            used = {s[w] for w in nb[ptr[i]:ptr[i + 1]].tolist() if w != i}
            free = [c for c in range(q) if c not in used]
            for c in free:
                t = s[:i] + (c,) + s[i + 1:]
                P[k, index[t]] += 1.0 / (g.n * len(free))
    if relabel:
        R = np.zeros((N, N))
        perms = list(itertools.permutations(range(q)))
        for k, s in enumerate(states):
            for p in perms:
                R[k, index[tuple(p[c] for c in s)]] += 1.0 / len(perms)
        P = P @ R
    return P, states
