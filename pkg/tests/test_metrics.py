from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import published_values as pub
from hpvolterra.mesh import Mesh, uniform_mesh
from hpvolterra.metrics import (
    DEFAULT_SAMPLES,
    MissingExactSolution,
    SweepRow,
    attach_orders,
    e1,
    e2,
    e3,
    element_samples,
    error_report,
    fitted_order,
    rho,
)
from hpvolterra.problem import make_problem
from hpvolterra.quadrature import gauss_legendre, interpolate
from hpvolterra.solver import ElementSolution, PiecewiseLegendreSolution, solve_global


def constant_solution(mesh: Mesh, value: float) -> PiecewiseLegendreSolution:
    return PiecewiseLegendreSolution(
        mesh, tuple(ElementSolution(n, [value] + [0.0] * mesh.degrees[n]) for n in range(mesh.N))
    )


def test_zero_error_representation():
    mesh = Mesh(np.array([0.0, 0.4, 1.0]), (2, 3))
    sol = constant_solution(mesh, 2.5)
    exact = lambda t: np.full_like(np.asarray(t, dtype=float), 2.5)  # noqa: E731
    assert e1(exact, sol) <= 1e-14
    assert e2(exact, sol) == 0.0
    assert e3(exact, sol) == 0.0


@pytest.mark.parametrize("T, N", [(1.0, 1), (10.0, 4), (3.0, 7)])
def test_constant_error_e1(T, N):
    eps = 1e-3
    sol = constant_solution(uniform_mesh(T, N, 3), eps)
    assert e1(lambda t: np.zeros_like(t), sol) == pytest.approx(eps * math.sqrt(T), abs=1e-12)


def test_e2_only_samples_knots():
    # error (t - 1)^2 on one element vanishes at the only knot t_1 = 1
    mesh = uniform_mesh(1, 1, 2)
    series = interpolate(lambda x: ((x - 1) / 2) ** 2, gauss_legendre(2))
    sol = PiecewiseLegendreSolution(mesh, (ElementSolution(0, series.coeffs),))
    zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731
    assert e2(zero, sol) <= 1e-15
    assert e3(zero, sol) == pytest.approx(1.0, abs=1e-12)


def test_e2_uses_left_limit_at_jump():
    mesh = uniform_mesh(1, 2, 0)
    sol = PiecewiseLegendreSolution(mesh, (ElementSolution(0, [0.0]), ElementSolution(1, [1.0])))

    def exact(t):
        return np.where(np.asarray(t) > 0.5, 1.0, 0.0)

    assert e2(exact, sol) == 0.0
    assert e3(exact, sol) == 0.0


def test_element_samples_inside():
    t = element_samples(0.5, 1.0, 5)
    assert t.size == 5
    assert 0.5 < t[0] < 0.5 + 1e-15 and 1.0 - 1e-15 < t[-1] < 1.0
    np.testing.assert_array_equal(t[1:-1], [0.625, 0.75, 0.875])


def test_missing_exact():
    p = make_problem({"problem": "ex5"})
    sol = solve_global(p, uniform_mesh(1, 2, 3))
    for fn in (e1, e2, e3):
        with pytest.raises(MissingExactSolution):
            fn(p.exact, sol)


def test_e3_needs_two_samples():
    sol = constant_solution(uniform_mesh(1, 1, 0), 0.0)
    with pytest.raises(ValueError):
        e3(lambda t: t, sol, samples_per_element=1)


def test_ex3_e1_value():
    p = make_problem({"problem": "ex3"})
    sol = solve_global(p, uniform_mesh(1, 2, 3))
    assert e1(p.exact, sol) <= 3 * pub.EX3_LONG_TIME_E1[1]


def test_ex6_e2_single_element():
    p = make_problem({"problem": "ex6"})
    sol = solve_global(p, uniform_mesh(1, 1, 4).insert_knots([0.5]))
    # frozen from this implementation; published 2.86e-08
    assert e2(p.exact, sol) == pytest.approx(1.056e-8, rel=1e-3)
    assert e2(p.exact, sol) <= 3 * pub.EX6_E2[4]


def test_ex1_e3_degree_3_frozen():
    p = make_problem({"problem": "ex1"})
    sol = solve_global(p, uniform_mesh(1, 2, 3))
    assert e3(p.exact, sol) == pytest.approx(7.060e-4, rel=1e-3)


@pytest.mark.xfail(strict=True, reason="measured degree-3 E3 is 29x the published value")
def test_ex1_e3_published():
    p = make_problem({"problem": "ex1"})
    sol = solve_global(p, uniform_mesh(1, 2, 3))
    assert e3(p.exact, sol) == pytest.approx(pub.EX1_H_E3[0], rel=1.0)


def test_ex2_e3_two_node_elements():
    p = make_problem({"problem": "ex2"})
    # with two nodes per element, N = 4 here reproduces the published N = 8 entry
    sol = solve_global(p, uniform_mesh(1, 4, pub.EX2_H_DEGREE))
    assert e3(p.exact, sol) == pytest.approx(pub.EX2_H_E3[1], rel=0.5)


@pytest.mark.xfail(strict=True, reason="published N column is offset by one doubling")
def test_ex2_e3_published_row():
    p = make_problem({"problem": "ex2"})
    sol = solve_global(p, uniform_mesh(1, 8, pub.EX2_H_DEGREE))
    assert pub.EX2_H_E3[1] / 2 <= e3(p.exact, sol) <= 2 * pub.EX2_H_E3[1]


def test_rho_examples():
    assert rho(pub.EX1_H_E3[0], pub.EX1_H_E3[1]) == pytest.approx(pub.EX1_H_RHO[1], abs=5e-4)
    assert rho(1e-5, 1e-5) == 0.0
    assert rho(8e-9, 1e-9) == pytest.approx(3.0, abs=1e-15)
    for bad in ((0.0, 1.0), (1.0, -1.0)):
        with pytest.raises(ValueError):
            rho(*bad)


def test_published_rho_column_consistent():
    # transcription check: the printed orders follow from the printed errors
    for k in range(1, len(pub.EX1_H_E3)):
        assert rho(pub.EX1_H_E3[k - 1], pub.EX1_H_E3[k]) == pytest.approx(pub.EX1_H_RHO[k], abs=6e-4)


def test_fitted_order():
    h = np.array([0.5, 0.25, 0.125])
    assert fitted_order(h, 3 * h**4) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        fitted_order([0.5], [1.0])
    with pytest.raises(ValueError):
        fitted_order([0.5, 0.25], [1.0, 0.0])


def test_attach_orders():
    rows = [SweepRow(N, 3, 4 * N, 0.0, 0.0, err, None) for N, err in ((2, 16e-6), (4, 1e-6), (5, 5e-7), (10, 5e-7))]
    out = attach_orders(rows)
    assert out[0].rho is None
    assert out[1].rho == pytest.approx(4.0)
    assert out[2].rho is None
    assert out[3].rho == 0.0


def test_error_report_and_defaults():
    assert DEFAULT_SAMPLES == 201
    p = make_problem({"problem": "ex1"})
    sol = solve_global(p, uniform_mesh(1, 4, 5))
    rep = error_report(p.exact, sol)
    assert (rep.E1, rep.E2, rep.E3) == (e1(p.exact, sol), e2(p.exact, sol), e3(p.exact, sol))


def test_reference_solution_as_exact():
    p = make_problem({"problem": "ex5"})
    ref = solve_global(p, uniform_mesh(1, 5, 20))
    errors = [e3(ref, solve_global(p, uniform_mesh(1, N, M))) for N, M in ((2, 4), (2, 8), (5, 12))]
    assert errors[0] > errors[1] > errors[2] > 0
    assert errors[2] < 1e-9
    assert e3(ref, ref) == 0.0


@settings(max_examples=20, deadline=None)
@given(name=st.sampled_from(["ex1", "ex2", "ex3", "ex6", "ex8", "ex9"]), N=st.integers(1, 6), M=st.integers(1, 7))
def test_norm_inequalities(name, N, M):
    p = make_problem({"problem": name})
    mesh = uniform_mesh(p.T, N, M).insert_knots(p.breakpoints)
    sol = solve_global(p, mesh)
    rep = error_report(p.exact, sol)
    assert rep.E1 <= math.sqrt(p.T) * rep.E3 + 1e-12
    # E3 samples one float inside each knot, E2 at the knot itself; the
    # polynomial moves by |u'| ulp between the two, which is ~1e-14 relative
    # when an unstable run (ex9) has large coefficients
    assert rep.E2 <= rep.E3 * (1 + 1e-12) + 1e-15
