import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegibbs import curie_weiss as cw
from sparsegibbs._common import ValidationError


@given(st.integers(1, 300), st.floats(0.0, 4.0), st.floats(-1.0, 1.0))
@settings(max_examples=60)
def test_pmf_is_a_law_and_flips_with_the_field(n, beta, B):
    m, p, _ = cw.magnetization_pmf(n, beta, B)
    assert len(m) == n + 1 and abs(p.sum() - 1) < 1e-12
    _, q, _ = cw.magnetization_pmf(n, beta, -B)
    assert np.allclose(p, q[::-1], atol=1e-14)


@given(st.integers(1, 100), st.floats(0.0, 3.0), st.floats(-0.5, 0.5))
@settings(max_examples=60)
def test_sandwich(n, beta, B):
    _, p, lo, hi = cw.sandwich_bounds(n, beta, B)
    assert np.all(lo <= p * (1 + 1e-12)) and np.all(p <= hi * (1 + 1e-12))


@given(st.integers(2, 400), st.floats(0.0, 3.0), st.floats(-0.5, 0.5))
@settings(max_examples=60)
def test_free_entropy_window(n, beta, B):
    lo, phi_n, hi = cw.free_entropy_window(n, beta, B)
    assert lo <= phi_n + 1e-12 and phi_n <= hi + 1e-12


@given(st.floats(0.0, 4.0), st.floats(-1.0, 1.0))
@settings(max_examples=80)
def test_fixed_points_solve_the_mean_field_equation(beta, B):
    fp = cw.cw_fixed_points(beta, B)
    for r in fp.roots:
        assert abs(math.tanh(beta * r + B) - r) < 1e-12
    assert fp.roots == sorted(fp.roots)
    if beta <= 1:
        assert len(fp.roots) == 1


def test_labels_and_b_star():
    fp = cw.cw_fixed_points(2.0, 0.0)
    assert fp.labels == ["m_-", "m_0", "m_+"]
    assert abs(fp.roots[2] - 0.9575040240772693) < 1e-12
    bs = fp.B_star
    assert len(cw.cw_fixed_points(2.0, bs * 1.01).roots) == 1
    assert len(cw.cw_fixed_points(2.0, bs * 0.99).roots) == 3
    neg = cw.cw_fixed_points(2.0, -0.1)
    pos = cw.cw_fixed_points(2.0, 0.1)
    assert np.allclose(neg.roots, [-r for r in reversed(pos.roots)])


def test_symmetric_maximizers_at_zero_field():
    phi, arg = cw.cw_free_entropy(1.5, 0.0)
    assert len(arg) == 2 and abs(arg[0] + arg[1]) < 1e-12
    phi_lo, _ = cw.cw_free_entropy(0.5, 0.0)
    assert abs(phi_lo - math.log(2)) < 1e-15


@pytest.mark.parametrize("n", [3, 8, 12])
def test_tilted_expectation_identity(n):
    lhs, rhs = cw.tilted_expectation(n, 1.3, 0.2, lambda m: m**3 + m)
    assert abs(lhs - rhs) < 1e-12


def test_mean_field_bound():
    for n in (10, 100, 1000):
        lhs, rhs = cw.mean_field_check(n, 0.7, 0.1)
        assert lhs <= rhs


def test_concentration_at_large_n():
    phi, arg = cw.cw_free_entropy(2.0, 0.1)
    assert cw.window_mass(2000, 2.0, 0.1, arg[0], 0.05) >= 0.999


def test_validation():
    with pytest.raises(ValidationError):
        cw.magnetization_pmf(0, 1.0)
    with pytest.raises(ValidationError):
        cw.cw_fixed_points(-1.0)
