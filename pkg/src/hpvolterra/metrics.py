"""
Error functionals E1, E2, E3 and the observed order of convergence.

The reference ``exact`` may be any vectorized callable on [0, T], including a
:class:`PiecewiseLegendreSolution` (used when no closed form exists).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .quadrature import gauss_legendre
from .solver import PiecewiseLegendreSolution

DEFAULT_SAMPLES = 201


class MissingExactSolution(ValueError):
    """An error functional was requested without a reference solution."""


def _require(exact: Optional[Callable]) -> Callable:
    if exact is None:
        raise MissingExactSolution("no exact or reference solution available")
    return exact


def _values(fn: Callable, t: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape)


def e1(exact: Optional[Callable], sol: PiecewiseLegendreSolution) -> float:
    """Discrete L2 error at each element's own Gauss nodes.

    ``sqrt(sum_k sum_j (h_k/2) w_kj (u(x_kj) - u_M(x_kj))^2)``.
    """
    exact = _require(exact)
    mesh = sol.mesh
    total = 0.0
    for n in range(mesh.N):
        rule = gauss_legendre(mesh.degrees[n])
        a, b = mesh.element(n)
        t = mesh.from_reference(n, rule.nodes)
        diff = _values(exact, t) - sol.elements[n].series(rule.nodes)
        total += 0.5 * (b - a) * float(np.dot(rule.weights, diff * diff))
    return math.sqrt(total)


def e2(exact: Optional[Callable], sol: PiecewiseLegendreSolution) -> float:
    """Maximum error over the knots t_1 ... t_N, each taken as a limit from the left.

    The approximation comes from the element owning the knot; the reference is
    evaluated one float to the left, so a jump at a knot compares like with like.
    """
    exact = _require(exact)
    mesh = sol.mesh
    knots = mesh.knots[1:]
    approx = np.array([sol.evaluate_on(n, knots[n]) for n in range(mesh.N)], dtype=float)
    left = np.nextafter(knots, mesh.knots[:-1])
    return float(np.max(np.abs(_values(exact, left) - approx)))


def element_samples(a: float, b: float, count: int) -> np.ndarray:
    """``count`` uniform points on [a, b] with both ends moved one float inside.

    A reference solution with a jump at a knot then reports the one-sided limit
    belonging to this element instead of the value of its neighbour.
    """
    t = np.linspace(a, b, count)
    t[0] = np.nextafter(a, b)
    t[-1] = np.nextafter(b, a)
    return t


def e3(exact: Optional[Callable], sol: PiecewiseLegendreSolution,
       samples_per_element: int = DEFAULT_SAMPLES) -> float:
    """Sampled sup-norm error, ``samples_per_element`` points per element, knots included."""
    exact = _require(exact)
    if samples_per_element < 2:
        raise ValueError("samples_per_element must be at least 2")
    worst = 0.0
    for n in range(sol.mesh.N):
        t = element_samples(*sol.mesh.element(n), samples_per_element)
        err = np.abs(_values(exact, t) - sol.evaluate_on(n, t))
        worst = max(worst, float(np.max(err)))
    return worst


def rho(err_N: float, err_2N: float) -> float:
    """Observed order ``log2(err_N / err_2N)`` under one mesh halving."""
    if not (err_N > 0 and err_2N > 0):
        raise ValueError("errors must be positive to define an order")
    return math.log2(err_N / err_2N)


def fitted_order(h: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if h.size < 2 or h.shape != errors.shape:
        raise ValueError("need at least two matching (h, error) pairs")
    if np.any(h <= 0) or np.any(errors <= 0):
        raise ValueError("h and errors must be positive")
    slope, _ = np.polyfit(np.log(h), np.log(errors), 1)
    return float(slope)


@dataclass(frozen=True)
class ErrorReport:
    E1: float
    E2: float
    E3: float


def error_report(exact: Optional[Callable], sol: PiecewiseLegendreSolution,
                 samples_per_element: int = DEFAULT_SAMPLES) -> ErrorReport:
    return ErrorReport(e1(exact, sol), e2(exact, sol), e3(exact, sol, samples_per_element))


@dataclass(frozen=True)
class SweepRow:
    """One run of a convergence sweep; ``rho`` compares with the previous row."""

    N: int
    M: int
    L: int
    E1: float
    E2: float
    E3: float
    rho: Optional[float]
    seconds: Optional[float] = None


def attach_orders(rows: Sequence[SweepRow]) -> list[SweepRow]:
    """Fill ``rho`` from consecutive E3 values when N doubles between rows."""
    out = []
    for i, row in enumerate(rows):
        r = None
        if i > 0:
            prev = rows[i - 1]
            if row.N == 2 * prev.N and prev.E3 > 0 and row.E3 > 0:
                r = rho(prev.E3, row.E3)
        out.append(SweepRow(row.N, row.M, row.L, row.E1, row.E2, row.E3, r, row.seconds))
    return out
