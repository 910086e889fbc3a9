import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegibbs import coloring as col
from sparsegibbs import graph_ensembles as ge
from sparsegibbs._common import ValidationError


def test_threshold_formulas():
    up, lo = col.threshold_formulas(3)
    assert abs(up - math.log(3) / math.log(1.5)) < 1e-15
    assert abs(lo - 2 * math.log(2)) < 1e-15
    with pytest.raises(ValidationError):
        col.threshold_formulas(2)


def test_alpha_core_matches_known_core_thresholds():
    # mean-degree thresholds of the 3- and 4-core of Erdos-Renyi graphs
    assert abs(2 * col.alpha_core(3) - 3.35091887) < 1e-7
    assert abs(2 * col.alpha_core(4) - 5.14940275) < 1e-7


@given(st.integers(1, 40), st.floats(0.1, 3.0), st.integers(2, 5), st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_core_has_min_degree_and_is_order_free(n, alpha, q, seed):
    g = ge.sample_erdos_renyi(alpha, n, "binomial", seed)
    core = col.q_core(g, q)
    if not core.empty:
        assert core.graph.degrees().min() >= q
    assert np.array_equal(col.q_core(g, q, seed=seed).vertices, core.vertices)
    assert len(core.order) + len(core.vertices) == g.n


@given(st.integers(1, 60), st.floats(0.1, 1.5), st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_greedy_coloring_is_proper_without_core(n, alpha, seed):
    g = ge.sample_erdos_renyi(alpha, n, "binomial", seed)
    if col.q_core(g, 3).empty:
        assert col.is_proper(g, col.greedy_coloring(g, 3, seed))


def test_greedy_rejects_self_loops():
    with pytest.raises(ValidationError):
        col.greedy_coloring(ge.MultiGraph(2, [(0, 0), (0, 1)]), 3)


def test_de_small_and_large_gamma():
    pop, ov = col.color_reconstruction_de(3, ("poisson", 0.5), 5000, 60, seed=0)
    assert ov == 0.0
    pop, ov = col.color_reconstruction_de(3, ("poisson", 4.0), 5000, 60, seed=0)
    assert ov > 0.5
    assert np.allclose(pop.nu.sum(axis=1), 1.0)


def test_de_reproducible():
    a, _ = col.color_reconstruction_de(4, ("kary", 3), 2000, 20, seed=7)
    b, _ = col.color_reconstruction_de(4, ("kary", 3), 2000, 20, seed=7)
    assert np.array_equal(a.nu, b.nu)


def test_complexity_vanishes_at_uniform_population():
    Q = col.SimplexPopulation(np.full((1000, 3), 1 / 3))
    res = col.complexity_sigma(4, 3, Q, 5000, seed=1)
    assert abs(res["sigma"]) < 1e-12


def test_uniform_bethe_density():
    assert abs(col.uniform_bethe_density(2, 3) - (math.log(3) + 1.5 * math.log(2 / 3))) < 1e-15


@given(st.integers(2, 5), st.integers(1, 200), st.integers(0, 10**6))
@settings(max_examples=50)
def test_joint_type_properties(q, n, seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.integers(0, q, n), rng.integers(0, q, n)
    t = col.joint_type(x1, x2, q)
    assert abs(t.nu.sum() - 1) < 1e-12
    assert np.allclose(col.joint_type(x2, x1, q).nu, t.nu.T)
    assert t.sphericity() >= 0 and np.all(t.condition_terms() >= 0)


def test_uniform_type_is_spherical():
    q = 3
    x1 = np.repeat(np.arange(q), q)
    x2 = np.tile(np.arange(q), q)
    res = col.two_replica_type([(x1, x2)], q)
    assert res["sphericity"] < 1e-15 and res["stat"] < 1e-30
    with pytest.raises(ValidationError):
        col.two_replica_type([], q)
