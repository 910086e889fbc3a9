
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegibbs import xorsat_core as xs
from sparsegibbs._common import ValidationError


def int_rank(H):
    """Rank over GF(2) with rows as Python integers."""
    rows = [int("".join(map(str, r[::-1])), 2) if len(r) else 0 for r in H.tolist()]
    rank = 0
    while rows:
        piv = rows.pop()
        if piv:
            rank += 1
            low = piv & -piv
            rows = [r ^ piv if r & low else r for r in rows]
    return rank


@st.composite
def systems(draw, max_m=12, max_n=70):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 10**6))
    dens = draw(st.floats(0.05, 0.7))
    rng = np.random.default_rng(seed)
    H = (rng.random((m, n)) < dens).astype(np.uint8)
    b = rng.integers(0, 2, m).astype(np.uint8)
    return H, b


@given(systems())
@settings(max_examples=80, deadline=None)
def test_rank_and_solution(hb):
    H, b = hb
    sys_ = xs.Gf2System.from_dense(H, b)
    sol = xs.gf2_solve(sys_, weights=False)
    assert sol.rank == int_rank(H)
    aug = np.concatenate([H, b[:, None]], axis=1)
    assert sol.satisfiable == (int_rank(aug) == sol.rank)
    if sol.satisfiable:
        assert np.array_equal(xs.gf2_apply(sys_, sol.solution), b)
        assert sol.log2_count == H.shape[1] - sol.rank


@given(systems())
@settings(max_examples=50, deadline=None)
def test_text_and_dense_round_trips(hb):
    H, b = hb
    sys_ = xs.Gf2System.from_dense(H, b)
    assert np.array_equal(sys_.to_dense(), H)
    assert xs.Gf2System.from_text(sys_.to_text()) == sys_
    assert np.array_equal(sys_.row_weights(), H.sum(axis=1))
    assert xs.gf2_rank(sys_.transpose()) == xs.gf2_rank(sys_)


@given(systems(max_m=8, max_n=12))
@settings(max_examples=40, deadline=None)
def test_weight_enumerator_by_enumeration(hb):
    H, _ = hb
    n = H.shape[1]
    X = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(np.int64)
    ok = np.all((X @ H.T.astype(np.int64)) % 2 == 0, axis=1)
    expected = np.bincount(X[ok].sum(axis=1), minlength=n + 1)
    assert np.array_equal(xs.gf2_solve(xs.Gf2System.from_dense(H)).weight_enumerator, expected)


def test_text_format_errors():
    with pytest.raises(ValidationError):
        xs.Gf2System.from_text("2 3\n0 1\n2 1\n01\n")
    with pytest.raises(ValidationError):
        xs.Gf2System.from_text("1 3\n0 5\n1\n")
    with pytest.raises(ValidationError):
        xs.Gf2System.from_text("1 3\n0 1\n2\n")


def test_identity_monte_carlo():
    def sampler(rng):
        return xs.Gf2System.from_dense((rng.random((8, 10)) < 0.3).astype(np.uint8))

    res = xs.satisfiability_identity_check(sampler, 400, seed=1)
    assert res["equality_within_ci"] and res["inequality_holds"]


@given(st.floats(2.0001, 200.0))
@settings(max_examples=80)
def test_lambda_solves_its_equation(R):
    lam = float(xs.solve_lambda(R))
    f, _ = xs._f_lambda(lam)
    assert abs(float(f) - R) <= 1e-12 * R
    assert abs(xs._lambda_scalar(R) - lam) <= 1e-10 * max(1.0, lam)


@given(st.integers(3, 6), st.floats(0.0, 0.95), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=80)
def test_kernel_is_a_law_on_its_support(l, theta, a, c):
    s = l * (1 - theta)
    x1 = a * s * 0.5
    x2 = c * (s - x1) / 2
    params, pmf = xs.kernel_hat(x1, x2, theta, l)
    assert abs(sum(pmf.values()) - 1) < 1e-12
    assert all(p >= 0 for p in pmf.values())
    support = {(q1 - q0, -q1) for q0, q1, _ in xs.kernel_support(l)}
    assert set(pmf) <= support
    assert abs(params.p0 + params.p1 + params.p2 - 1) < 1e-12


def test_kernel_validation():
    with pytest.raises(ValidationError):
        xs.kernel_hat(0.0, 0.5, 0.1, 3)
    with pytest.raises(ValidationError):
        xs.kernel_hat(0.5, 0.5, 1.0, 3)
    with pytest.raises(ValidationError):
        xs.kernel_hat(2.0, 1.0, 0.5, 3)


@pytest.mark.parametrize("l,rho", [(3, 1.4), (4, 1.8)])
def test_mean_ode_against_closed_forms(l, rho):
    tr = xs.mean_ode_solve(l, rho, step=1e-4, stop_at_zero=False, theta_end=0.9)
    assert np.max(np.abs(tr.y1 - xs.y1_closed_form(tr.theta, l, rho))) < 1e-8
    assert np.max(np.abs(tr.y2 - xs.y2_closed_form(tr.theta, l, rho))) < 1e-8
    assert np.allclose((tr.y1[0], tr.y2[0]), xs.initial_state(l, rho))


def test_mean_ode_step_guard():
    with pytest.raises(ValidationError):
        xs.mean_ode_solve(2, 1.4)
    with pytest.raises(ValidationError):
        xs.mean_ode_solve(3, 1.4, step=0.01)


def test_covariance_ode_stays_psd():
    tr = xs.covariance_ode_solve(3, 1.4, step=1e-3, theta_end=0.6)
    Q = np.stack([[tr.Q11, tr.Q12], [tr.Q12, tr.Q22]]).transpose(2, 0, 1)
    assert np.all(np.linalg.eigvalsh(Q)[:, 0] > -1e-10)
    assert np.allclose(Q[0], xs.initial_covariance(3, 1.4))


def test_initial_covariance_matches_sampling():
    # c-node degrees are Poisson(gamma) conditioned on the socket total
    l, n, rho = 3, 4000, 1.4
    m = int(n * rho)
    rng = np.random.default_rng(0)
    z = []
    for _ in range(3000):
        d = np.bincount(xs.sample_core_sockets(l, n, m, rng), minlength=m)
        z.append(((d == 1).sum(), (d >= 2).sum()))
    z = np.array(z, float)
    emp = np.cov(z.T) / n
    # sampling error of the empirical covariance is about 0.006
    assert np.allclose(emp, xs.initial_covariance(l, rho), atol=0.02)
    assert np.allclose(z.mean(axis=0) / n, xs.initial_state(l, rho), atol=0.01)


def test_peeling_trajectory_bookkeeping():
    fg = xs.sample_core_graph(3, 500, 1.4, seed=3)
    tr = xs.peel_core(fg, seed=1)
    assert tr.tau[0] == 0 and np.all(np.diff(tr.tau) == 1)
    d = fg.cnode_degrees()
    assert tr.z1[0] == (d == 1).sum() and tr.z2[0] == (d >= 2).sum()
    assert tr.z1[-1] == 0
    assert tr.tau_hat + len(tr.core_vnodes) == fg.n_vnodes
    assert np.array_equal(np.sort(tr.core_vnodes), np.flatnonzero(xs.two_core(fg)))


def test_rho_d_and_theta_d():
    assert abs(xs.rho_d(3) - 1.2217931327672213) < 1e-12
    assert abs(xs.theta_d(3) - 0.6339649188) < 1e-9
    # at rho_d the closed-form y1 touches zero at theta_d
    assert abs(float(xs.y1_closed_form(xs.theta_d(3), 3, xs.rho_d(3)))) < 1e-9


def test_fss_prediction_shape():
    c = xs.fss_constants(3, mc_paths=20000, seed=1)
    r = np.linspace(-3, 3, 13)
    p = np.array([xs.fss_prediction(3, 1000, x, c) for x in r])
    assert np.all(np.diff(p) <= 1e-12) and np.all((p >= 0) & (p <= 1))
    # the n^{-1/6} correction vanishes only slowly
    assert abs(xs.fss_prediction(3, 1e36, 0.0, c) - 0.5) < 1e-5
    assert c.a > 0 and c.b > 0


def test_core_probability_is_reproducible():
    a = xs.core_probability_mc(3, 200, 1.25, 50, seed=4)
    b = xs.core_probability_mc(3, 200, 1.25, 50, seed=4)
    assert a == b and a["ci_low"] <= a["p_hat"] <= a["ci_high"]


def test_brownian_minimum_against_frozen_kappa():
    # kappa = -E inf_t(t^2/2 + W(t)) = 0.99739 +- 0.0018, frozen from 1e5
    # exact-bridge paths at dt = 0.02; the cell minima make the estimate
    # nearly insensitive to the grid
    z1 = xs.brownian_parabola_min(20000, step=0.02, seed=3)
    z2 = xs.brownian_parabola_min(20000, step=0.1, seed=4)
    assert np.array_equal(z1, xs.brownian_parabola_min(20000, step=0.02, seed=3))
    for z in (z1, z2):
        se = z.std(ddof=1) / np.sqrt(len(z))
        assert abs(-z.mean() - 0.99739) < 4 * se + 0.0072
    assert np.all(z1 <= 0)


def test_kernel_consistency_small():
    res = xs.kernel_consistency(3, 2000, 1.4, 10, seed=2)
    assert res["pass_fraction"] >= 0.9
