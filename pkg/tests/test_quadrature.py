from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpvolterra.quadrature import (
    MAX_DEGREE,
    LegendreSeries,
    QuadratureRule,
    discrete_inner,
    forward_transform,
    gauss_legendre,
    interpolate,
    legendre_eval,
    legendre_table,
)


def exact_monomial_integral(k: int) -> float:
    return 0.0 if k % 2 else 2.0 / (k + 1)


# ---------------------------------------------------------------- legendre_eval

def test_legendre_low_degrees():
    assert legendre_eval(0, 0.7) == 1.0
    assert legendre_eval(2, 0.5) == pytest.approx(-0.125, abs=1e-16)
    assert legendre_eval(5, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_legendre_matches_numpy_basis():
    x = np.linspace(-1, 1, 101)
    for p in (0, 1, 3, 7, 20):
        ref = np.polynomial.legendre.Legendre.basis(p)(x)
        np.testing.assert_allclose(legendre_eval(p, x), ref, atol=1e-13)


def test_legendre_table_rows_match_eval():
    x = np.linspace(-1, 1, 17)
    table = legendre_table(9, x)
    assert table.shape == (10, 17)
    for p in range(10):
        np.testing.assert_allclose(table[p], legendre_eval(p, x), atol=1e-15)


def test_legendre_negative_degree_rejected():
    with pytest.raises(ValueError):
        legendre_eval(-1, 0.0)


@pytest.mark.parametrize("p", [0, 1, 5, 17, 32, 64])
def test_legendre_bounded_by_one(p):
    x = np.linspace(-1, 1, 2001)
    assert np.max(np.abs(legendre_eval(p, x))) <= 1.0 + 1e-13


# ---------------------------------------------------------------- gauss_legendre

def test_midpoint_rule():
    rule = gauss_legendre(0)
    np.testing.assert_array_equal(rule.nodes, [0.0])
    np.testing.assert_allclose(rule.weights, [2.0], atol=1e-15)


def test_two_point_rule():
    rule = gauss_legendre(1)
    np.testing.assert_allclose(rule.nodes, [-0.5773502691896257, 0.5773502691896257], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [1.0, 1.0], atol=1e-15)
    assert rule.integrate(rule.nodes**3 + rule.nodes**2) == pytest.approx(2 / 3, abs=1e-14)


@pytest.mark.parametrize("M", [0, 1, 2, 5, 10, 31, 64, 100, MAX_DEGREE])
def test_rule_invariants(M):
    rule = gauss_legendre(M)
    assert isinstance(rule, QuadratureRule)
    assert len(rule) == M + 1
    assert np.all(np.diff(rule.nodes) > 0)
    assert np.all(np.abs(rule.nodes) < 1)
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 2.0) <= 1e-14 * max(1, M / 8)
    np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-14)
    # a root perturbed by one ulp moves L_{M+1} by about eps |L'_{M+1}|; that
    # exceeds 1e-14 near the ends once M is large
    dL = np.sqrt(2.0 / ((1.0 - rule.nodes**2) * rule.weights))
    bound = np.maximum(1e-14, 4 * np.finfo(float).eps * dL)
    assert np.all(np.abs(legendre_eval(M + 1, rule.nodes)) <= bound)


@pytest.mark.parametrize("M", [1, 4, 16, 40])
def test_rule_agrees_with_numpy_leggauss(M):
    x, w = np.polynomial.legendre.leggauss(M + 1)
    rule = gauss_legendre(M)
    np.testing.assert_allclose(rule.nodes, x, atol=1e-14)
    np.testing.assert_allclose(rule.weights, w, atol=1e-14)


def test_degree_cap():
    with pytest.raises(ValueError):
        gauss_legendre(MAX_DEGREE + 1)
    with pytest.raises(ValueError):
        gauss_legendre(-1)


def test_rule_arrays_are_read_only():
    rule = gauss_legendre(3)
    with pytest.raises(ValueError):
        rule.nodes[0] = 0.0


def test_on_interval_scales_weights():
    s, w = gauss_legendre(4).on_interval(2.0, 5.0)
    assert np.all((s > 2) & (s < 5))
    assert w.sum() == pytest.approx(3.0, abs=1e-14)
    assert np.dot(w, s**2) == pytest.approx((125 - 8) / 3, rel=1e-14)


@pytest.mark.parametrize("M", range(0, 33, 4))
def test_monomial_exactness(M):
    rule = gauss_legendre(M)
    for k in range(2 * M + 2):
        got = rule.integrate(rule.nodes**k)
        assert got == pytest.approx(exact_monomial_integral(k), rel=1e-13, abs=1e-14)


# ---------------------------------------------------------------- discrete_inner

def test_discrete_inner_examples():
    for M in (0, 3, 8):
        rule = gauss_legendre(M)
        ones = np.ones(M + 1)
        assert discrete_inner(ones, ones, rule) == pytest.approx(2.0, abs=1e-14)
    rule = gauss_legendre(2)
    assert abs(discrete_inner(legendre_eval(1, rule.nodes), legendre_eval(2, rule.nodes), rule)) <= 1e-14
    rule = gauss_legendre(1)
    l1 = legendre_eval(1, rule.nodes)
    assert discrete_inner(l1, l1, rule) == pytest.approx(2 / 3, abs=1e-14)


def test_discrete_inner_length_mismatch():
    with pytest.raises(ValueError):
        discrete_inner(np.ones(3), np.ones(4), gauss_legendre(2))


# ---------------------------------------------------------------- interpolate

def test_interpolate_reproduces_l1():
    for M in (1, 2, 6):
        c = interpolate(lambda x: x, gauss_legendre(M)).coeffs
        expected = np.zeros(M + 1)
        expected[1] = 1.0
        np.testing.assert_allclose(c, expected, atol=1e-14)


def test_interpolate_constant():
    c = interpolate(lambda x: 5.0, gauss_legendre(3)).coeffs
    np.testing.assert_allclose(c, [5, 0, 0, 0], atol=1e-14)


def test_interpolate_exp_degree_8():
    rule = gauss_legendre(8)
    series = interpolate(np.exp, rule)
    assert np.max(np.abs(series(rule.nodes) - np.exp(rule.nodes))) <= 1e-12
    x = np.linspace(-1, 1, 1000)
    err = np.max(np.abs(series(x) - np.exp(x)))
    # oracle: numpy's Legendre fit through the same nine nodes
    nodes, _ = np.polynomial.legendre.leggauss(9)
    ref = np.polynomial.Legendre.fit(nodes, np.exp(nodes), 8, domain=[-1, 1])
    ref_err = np.max(np.abs(ref(x) - np.exp(x)))
    assert err == pytest.approx(ref_err, rel=1e-4)
    # nodal error bound max|w(x)| e / 9! with w the monic node polynomial
    assert err <= 2 * math.e / math.factorial(9) / 2**8
    assert err == pytest.approx(3.2823787e-08, rel=1e-6)


def test_interpolate_rejects_nonfinite():
    with pytest.raises(ValueError):
        interpolate(lambda x: np.where(x == 0, np.nan, x), gauss_legendre(2))


def test_series_value_at_one_is_coefficient_sum():
    c = np.array([0.3, -1.2, 2.5, 0.7])
    assert LegendreSeries(c)(1.0) == pytest.approx(c.sum(), abs=1e-15)


def test_series_rejects_empty():
    with pytest.raises(ValueError):
        LegendreSeries(np.array([]))


def test_forward_transform_inverts_synthesis():
    rule = gauss_legendre(12)
    synth = legendre_table(12, rule.nodes).T
    np.testing.assert_allclose(forward_transform(rule) @ synth, np.eye(13), atol=1e-13)


# ---------------------------------------------------------------- properties

@settings(max_examples=60, deadline=None)
@given(M=st.integers(0, 32), seed=st.integers(0, 2**32 - 1))
def test_random_polynomial_exactness(M, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(2 * M + 2)
    poly = np.polynomial.Polynomial(coeffs)
    anti = poly.integ()
    exact = anti(1.0) - anti(-1.0)
    rule = gauss_legendre(M)
    scale = np.sum(np.abs(coeffs))
    assert abs(rule.integrate(poly(rule.nodes)) - exact) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(M=st.integers(0, 32), seed=st.integers(0, 2**32 - 1))
def test_aliasing_identity(M, seed):
    # (phi, psi) = <phi, psi>_M when deg phi <= M and deg(phi psi) <= 2M + 1
    rng = np.random.default_rng(seed)
    phi = np.polynomial.Legendre(rng.standard_normal(M + 1))
    psi = np.polynomial.Legendre(rng.standard_normal(M + 2))
    prod = (phi * psi).integ()
    continuous = prod(1.0) - prod(-1.0)
    rule = gauss_legendre(M)
    discrete = discrete_inner(phi(rule.nodes), psi(rule.nodes), rule)
    scale = max(1.0, float(np.sum(np.abs(phi.coef)) * np.sum(np.abs(psi.coef))))
    assert abs(continuous - discrete) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(M=st.integers(0, 32), a=st.floats(-2, 2), b=st.floats(0.1, 3))
def test_projection_idempotent(M, a, b):
    rule = gauss_legendre(M)
    first = interpolate(lambda x: np.sin(b * x + a) + np.exp(a * x), rule)
    second = interpolate(first, rule)
    np.testing.assert_allclose(second.coeffs, first.coeffs, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(p=st.integers(0, 64), x=st.floats(-1, 1))
def test_legendre_bounded_property(p, x):
    assert abs(legendre_eval(p, x)) <= 1.0 + 1e-13


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_series_at_one_property(coeffs):
    assert LegendreSeries(np.array(coeffs))(1.0) == pytest.approx(math.fsum(coeffs), abs=1e-12)
