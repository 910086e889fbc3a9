import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegibbs import bp_engine as bp
from sparsegibbs import exact_oracles as ex
from sparsegibbs import graph_ensembles as ge
from sparsegibbs._common import ValidationError, ZeroMeasureError


def cycle(n):
    return ge.MultiGraph(n, [(i, (i + 1) % n) for i in range(n)])


def path(n):
    return ge.MultiGraph(n, [(i, i + 1) for i in range(n - 1)])


def naive_log_z(g, spec):
    total = 0.0
    for x in itertools.product(range(spec.q), repeat=g.n):
        w = np.prod([spec.vertex[i, x[i]] for i in range(g.n)])
        w *= np.prod([spec.edge[e, x[u], x[v]] for e, (u, v) in enumerate(g.edges.tolist())])
        total += w
    return math.log(total)


@st.composite
def small_specs(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(0, 7))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=m, max_size=m))
    q = draw(st.integers(2, 3))
    seed = draw(st.integers(0, 10**6))
    g = ge.MultiGraph(n, edges)
    return g, ex.random_permissive_spec(g, q, seed)


@given(small_specs())
@settings(max_examples=40, deadline=None)
def test_log_z_matches_naive_sum(gs):
    g, spec = gs
    assert abs(ex.exact_log_z(g, spec) - naive_log_z(g, spec)) < 1e-10


@given(small_specs())
@settings(max_examples=40, deadline=None)
def test_marginals_are_normalized_and_consistent(gs):
    g, spec = gs
    U = list(range(min(2, g.n)))
    mu = ex.exact_marginal(g, spec, U)
    assert abs(mu.sum() - 1) < 1e-12
    if len(U) == 2:
        assert np.allclose(mu.sum(axis=1), ex.exact_marginal(g, spec, [0]), atol=1e-12)


def test_permissive_spec_is_permissive():
    g = ge.sample_erdos_renyi(1.0, 8, "binomial", 2)
    spec = ex.random_permissive_spec(g, 3, 1, kappa=0.2)
    assert spec.is_permissive(g)


@pytest.mark.parametrize("n,q", [(3, 3), (4, 2), (5, 3), (6, 4), (7, 3)])
def test_cycle_colorings(n, q):
    # chromatic polynomial of the n-cycle
    expected = (q - 1) ** n + (-1) ** n * (q - 1)
    g = cycle(n)
    assert ex.count_proper_colorings(g, q) == expected
    if expected:
        assert abs(ex.exact_log_z(g, ex.coloring_spec(g, q)) - math.log(expected)) < 1e-12


def test_zero_measure_is_reported():
    tri = cycle(3)
    with pytest.raises(ZeroMeasureError):
        ex.exact_marginal(tri, ex.coloring_spec(tri, 2), [0])


def test_independent_sets_of_a_path_are_fibonacci():
    fib = [1, 1]
    for _ in range(20):
        fib.append(fib[-1] + fib[-2])
    for n in range(1, 12):
        g = path(n)
        assert abs(ex.exact_log_z(g, ex.independent_set_spec(g, 1.0)) - math.log(fib[n + 1])) < 1e-12


@pytest.mark.parametrize("beta", [0.2, 0.7, -0.5])
def test_path_reconstruction_is_tanh_power(beta):
    g = path(5)
    for t in range(1, 5):
        tv = ex.exact_reconstruction_tv(g, ex.ising_spec(g, beta), 0, t)
        assert abs(tv - abs(math.tanh(beta)) ** t / 2) < 1e-12


def test_conditional_marginal():
    g = path(3)
    spec = ex.ising_spec(g, 0.8)
    cond = ex.exact_marginal(g, spec, [1], given={0: 0})
    # the middle spin given x_0 = +1 on a free path
    p = (1 + math.tanh(0.8)) / 2
    assert abs(cond[0] - p) < 1e-12


def test_cycle_hyperloops():
    for L in (3, 4, 7):
        counts = ex.hyperloop_counts(ex.pairwise_as_factor_graph(cycle(L)))
        expected = np.zeros(L + 1, dtype=int)
        expected[0] = expected[L] = 1
        assert np.array_equal(counts, expected)


def test_hyperloop_guard():
    fg = ge.FactorGraph(2, 25, [(0, a) for a in range(25)])
    with pytest.raises(ValidationError):
        ex.hyperloop_counts(fg)


def test_bethe_error_vanishes_on_trees():
    g = ge.regular_tree(3, 2).to_multigraph()
    spec = ex.random_permissive_spec(g, 2, 5)
    nu, rep = bp.bp_fixed_point(g, spec, tol=1e-14)
    res = ex.bethe_approximation_error(g, spec, nu, r=1)
    assert rep.converged and res["epsilon"] < 1e-12 and res["n_patches"] > g.n


def test_bethe_error_positive_on_a_cycle():
    g = cycle(4)
    spec = ex.ising_spec(g, 1.0, 0.2)
    nu, _ = bp.bp_fixed_point(g, spec, tol=1e-14)
    assert ex.bethe_approximation_error(g, spec, nu, r=0)["epsilon"] > 1e-4


def test_spin_correlation_on_an_edge():
    g = path(2)
    assert abs(ex.exact_spin_correlation(g, 0.9, 0, 1) - math.tanh(0.9)) < 1e-12
