import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegibbs import curie_weiss as cw
from sparsegibbs import exact_oracles as ex
from sparsegibbs import graph_ensembles as ge
from sparsegibbs import mcmc
from sparsegibbs._common import ValidationError


def cycle(n):
    return ge.MultiGraph(n, [(i, (i + 1) % n) for i in range(n)])


def assert_reversible(P, mu):
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-13)
    F = mu[:, None] * P
    assert np.allclose(F, F.T, atol=1e-15)
    assert np.allclose(mu @ P, mu, atol=1e-14)


@given(st.integers(1, 8), st.floats(0.0, 3.0))
@settings(max_examples=30, deadline=None)
def test_cw_chain_is_reversible_for_the_cw_law(n, beta):
    P, mu = mcmc.cw_transition_matrix(n, beta)
    assert_reversible(P, mu)
    # pushing mu forward to the mean spin gives the exact law
    M = mcmc._spin_configs(n).sum(axis=1)
    push = np.bincount((M + n) // 2, weights=mu, minlength=n + 1)[::-1]
    _, pmf, _ = cw.magnetization_pmf(n, beta, 0.0)
    assert np.allclose(push, pmf, atol=1e-13)


@given(st.integers(2, 6), st.floats(-1.5, 1.5), st.floats(-1.0, 1.0), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_heatbath_is_reversible_for_the_ising_law(n, beta, B, seed):
    g = ge.sample_erdos_renyi(1.2, n, "binomial", seed)
    P, mu = mcmc.ising_transition_matrix(g, beta, B)
    assert_reversible(P, mu)
    assert abs(mu.sum() - 1) < 1e-12


def test_cw_run_matches_exact_law():
    n, beta = 6, 1.5
    out = mcmc.cw_glauber_run(n, beta, 200000, seed=1, burn_in=1000)
    emp = np.bincount((out["M"] + n) // 2, minlength=n + 1)[::-1] / len(out["M"])
    _, pmf, _ = cw.magnetization_pmf(n, beta, 0.0)
    assert np.abs(emp - pmf).max() < 0.02
    assert out["state"].steps == 200000 and out["M"][-1] == out["state"].x.sum()


def test_cw_step_agrees_with_flip_probability():
    st_ = mcmc.cw_initial_state(5, seed=0)
    st_.x[:] = [1, 1, 1, 1, -1]
    # the minority holder always flips; a majority holder flips with exp(-2 beta |M_i| / n)
    assert mcmc.cw_flip_probability(st_.x, 4, 1.0) == 1.0
    assert abs(mcmc.cw_flip_probability(st_.x, 0, 1.0) - np.exp(-2 * 2 / 5)) < 1e-15
    mcmc.cw_glauber_step(st_, 1.0, 3)
    assert st_.steps == 1 and abs(st_.x.sum()) in (1, 3, 5)


def test_heatbath_site_means_match_enumeration():
    g = cycle(6)
    beta, B = 0.4, 0.2
    res = mcmc.ising_heatbath_run(g, beta, B, sweeps=20000, burn_in=200, seed=5)
    spec = ex.ising_spec(g, beta, B)
    exact = np.array([ex.exact_marginal(g, spec, [i]) @ [1, -1] for i in range(g.n)])
    assert np.abs(res.site_means - exact).max() < 0.03
    assert len(res.mean_spin) == 19800 and abs(res.autocorrelation[0] - 1) < 1e-12


def test_heatbath_is_reproducible_and_validates():
    g = ge.grid_graph(3, 4)
    a = mcmc.ising_heatbath_run(g, 0.5, sweeps=50, seed=2)
    b = mcmc.ising_heatbath_run(g, 0.5, sweeps=50, seed=2)
    assert np.array_equal(a.mean_spin, b.mean_spin)
    with pytest.raises(ValidationError):
        mcmc.ising_heatbath_run(g, float("nan"))
    with pytest.raises(ValidationError):
        mcmc.ising_heatbath_run(g, 0.5, init="up")
    with pytest.raises(ValidationError):
        mcmc.ising_transition_matrix(ge.grid_graph(4, 4), 0.5)


def test_coloring_chain_needs_relabel_on_the_triangle():
    g = cycle(3)
    P, states = mcmc.coloring_transition_matrix(g, 3)
    # single-site moves alone freeze every proper 3-coloring of a triangle
    assert np.allclose(P, np.eye(len(states)))
    P, states = mcmc.coloring_transition_matrix(g, 3, relabel=True)
    u = np.full(len(states), 1 / len(states))
    assert len(states) == 6 and np.allclose(u @ P, u)
    assert np.all(np.linalg.matrix_power(P, 3) > 0)


@pytest.mark.parametrize("n,q", [(4, 3), (5, 3), (4, 4)])
def test_coloring_chain_preserves_the_uniform_law(n, q):
    g = cycle(n)
    for relabel in (False, True):
        P, states = mcmc.coloring_transition_matrix(g, q, relabel)
        assert len(states) == ex.count_proper_colorings(g, q)
        u = np.full(len(states), 1 / len(states))
        assert np.allclose(P.sum(axis=1), 1) and np.allclose(u @ P, u)


def test_coloring_run_is_uniform_on_a_small_cycle():
    g, q = cycle(4), 3
    run = mcmc.coloring_glauber_run(g, q, sweeps=30000, burn_in=100, seed=3)
    _, states = mcmc.coloring_transition_matrix(g, q)
    index = {s: k for k, s in enumerate(states)}
    counts = np.bincount([index[tuple(s.tolist())] for s in run.samples], minlength=len(states))
    assert np.abs(counts / counts.sum() - 1 / len(states)).max() < 0.02


def test_coloring_run_rejects_bad_init():
    g = cycle(4)
    with pytest.raises(ValidationError):
        mcmc.coloring_glauber_run(g, 3, init=[0, 0, 1, 2])
    with pytest.raises(ValidationError):
        mcmc.coloring_glauber_run(ge.MultiGraph(3, [(0, 1), (1, 2), (0, 2)]), 2)
