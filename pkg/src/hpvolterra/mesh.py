"""Partitions of [0, T] with a polynomial degree per element, and the maps onto Lambda."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quadrature import MAX_DEGREE


@dataclass(frozen=True, eq=False)
class Mesh:
    """Knots ``0 = t_0 < ... < t_N = T`` and one degree ``M_n`` per element.

    Elements are indexed from 0 in Python; element ``n`` covers the half-open
    interval ``(knots[n], knots[n + 1]]``. The point ``t = 0`` belongs to element 0.
    """

    knots: np.ndarray
    degrees: tuple[int, ...]

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        degrees = tuple(int(d) for d in self.degrees)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a mesh needs at least two knots")
        if knots[0] != 0.0:
            raise ValueError("first knot must be 0")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if len(degrees) != knots.size - 1:
            raise ValueError(
                f"need {knots.size - 1} degrees for {knots.size} knots, got {len(degrees)}"
            )
        if any(d < 0 or d > MAX_DEGREE for d in degrees):
            raise ValueError(f"degrees must lie in [0, {MAX_DEGREE}]")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "degrees", degrees)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return self.degrees == other.degrees and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash((self.knots.tobytes(), self.degrees))

    @property
    def N(self) -> int:
        return len(self.degrees)

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    @property
    def M_min(self) -> int:
        return min(self.degrees)

    @property
    def n_unknowns(self) -> int:
        """L = sum of (M_n + 1)."""
        return sum(d + 1 for d in self.degrees)

    def element(self, n: int) -> tuple[float, float]:
        return float(self.knots[n]), float(self.knots[n + 1])

    def element_of(self, t):
        """Index of the element owning ``t`` under the (t_{n-1}, t_n] convention."""
        idx = np.searchsorted(self.knots, t, side="left") - 1
        return np.clip(idx, 0, self.N - 1)

    def to_reference(self, n: int, t):
        """Map ``t`` in element ``n`` to ``x`` in [-1, 1]."""
        a, b = self.element(n)
        t_arr = np.asarray(t, dtype=float)
        # closed element: the left knot is accepted as a one-sided limit
        slack = 1e-13 * (b - a)
        if np.any(t_arr < a - slack) or np.any(t_arr > b + slack):
            raise ValueError(f"t={t} lies outside element {n} = ({a}, {b}]")
        x = (2.0 * t_arr - a - b) / (b - a)
        return x if x.ndim else float(x)

    def from_reference(self, n: int, x):
        """Map ``x`` in [-1, 1] to ``t`` in element ``n``."""
        a, b = self.element(n)
        t = ((b - a) * np.asarray(x, dtype=float) + a + b) / 2.0
        return t if t.ndim else float(t)

    def with_degrees(self, degrees: Sequence[int]) -> "Mesh":
        return Mesh(self.knots, tuple(degrees))

    def insert_knots(self, points: Sequence[float]) -> "Mesh":
        """Split elements at ``points`` (ignored when already a knot or outside (0, T)).

        Both halves keep the degree of the element they came from.
        """
        knots = list(self.knots)
        degrees = list(self.degrees)
        for p in sorted(points):
            if not (0.0 < p < self.T) or np.any(np.isclose(knots, p, rtol=0, atol=1e-14 * self.T)):
                continue
            n = int(np.searchsorted(knots, p)) - 1
            knots.insert(n + 1, p)
            degrees.insert(n, degrees[n])
        return Mesh(np.array(knots), tuple(degrees))


def uniform_mesh(T: float, N: int, M_star: int) -> Mesh:
    """``N`` equal elements on [0, T], all of degree ``M_star``."""
    if T <= 0:
        raise ValueError("T must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    knots = T * np.arange(N + 1) / N
    return Mesh(knots, (M_star,) * N)


def split_degree_mesh(T: float, N: int, M_low: int, M_star: int) -> Mesh:
    """Uniform mesh with degree ``M_low`` on the first N/2 elements and ``M_star`` after."""
    if N % 2:
        raise ValueError("split-degree layout needs an even N")
    return uniform_mesh(T, N, M_star).with_degrees((M_low,) * (N // 2) + (M_star,) * (N // 2))


def sigma(x, theta):
    """Affine map of theta in [-1, 1] onto tau in [-1, x]: sigma(x, -1) = -1, sigma(x, 1) = x."""
    return ((1.0 + x) * theta + x - 1.0) / 2.0
