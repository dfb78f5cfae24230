"""
Legendre polynomials and Gauss-Legendre rules on the reference interval (-1, 1].

All inner products in the collocation scheme go through the rules built here.
Node computation is self-contained (Newton on L_{M+1} from Chebyshev-angle
seeds), so the solver does not depend on any external quadrature table.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

MAX_DEGREE = 128
_NEWTON_BUDGET = 100
_NEWTON_STOP = 1e-15


class QuadratureError(RuntimeError):
    """Node iteration failed to converge (an implementation fault, not user error)."""


def legendre_eval(p: int, x):
    """Evaluate the Legendre polynomial L_p at ``x`` by the three-term recurrence.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    if p < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if p == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for k in range(1, p):
        prev, cur = cur, ((2 * k + 1) * x * cur - k * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


def legendre_table(M: int, x) -> np.ndarray:
    """Values of L_0 ... L_M at ``x``, stacked along a new leading axis.

    Returns an array of shape ``(M + 1,) + np.shape(x)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((M + 1,) + x.shape)
    out[0] = 1.0
    if M >= 1:
        out[1] = x
    for k in range(1, M):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _legendre_with_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # L_n and L'_n; derivative from (x^2 - 1) L'_n = n (x L_n - L_{n-1}), valid off +-1
    prev = np.ones_like(x)
    cur = x.copy()
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1) * x * cur - k * prev) / (k + 1)
    deriv = n * (x * cur - prev) / (x * x - 1.0)
    return cur, deriv


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule of degree ``M``: ``M + 1`` nodes, exact up to degree ``2M + 1``."""

    degree: int
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.degree + 1

    def integrate(self, values) -> float:
        """Sum of ``weights * values`` over the nodes."""
        return float(np.dot(self.weights, values))

    def on_interval(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights mapped affinely onto ``[a, b]``."""
        half = 0.5 * (b - a)
        return half * self.nodes + 0.5 * (a + b), half * self.weights


@lru_cache(maxsize=None)
def gauss_legendre(M: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``M + 1`` nodes (roots of L_{M+1}).

    Only the nonnegative half of the roots is iterated; the other half is the
    mirror image, so the rule is exactly symmetric.
    """
    if M < 0:
        raise ValueError("degree must be nonnegative")
    if M > MAX_DEGREE:
        raise ValueError(f"degree {M} exceeds the supported maximum {MAX_DEGREE}")
    n = M + 1
    half = n // 2
    idx = np.arange(half)
    # Chebyshev-angle seeds for the largest roots, descending
    x = np.cos(np.pi * (idx + 0.75) / (n + 0.5))
    for _ in range(_NEWTON_BUDGET):
        val, der = _legendre_with_derivative(n, x)
        dx = val / der
        x = x - dx
        if np.max(np.abs(dx), initial=0.0) <= _NEWTON_STOP:
            break
    else:
        raise QuadratureError(f"Gauss-Legendre root iteration did not converge for M={M}")
    _, der = _legendre_with_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * der * der)

    pos_x, pos_w = x[::-1], w[::-1]  # ascending positive roots
    if n % 2:
        _, der0 = _legendre_with_derivative(n, np.zeros(1))
        mid_x, mid_w = np.zeros(1), 2.0 / der0**2
    else:
        mid_x, mid_w = np.empty(0), np.empty(0)
    nodes = np.concatenate([-pos_x[::-1], mid_x, pos_x])
    weights = np.concatenate([pos_w[::-1], mid_w, pos_w])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(M, nodes, weights)


def discrete_inner(u_vals, v_vals, rule: QuadratureRule) -> float:
    """Discrete inner product <u, v>_M from values at the rule's nodes."""
    u_vals = np.asarray(u_vals, dtype=float)
    v_vals = np.asarray(v_vals, dtype=float)
    if u_vals.shape != (len(rule),) or v_vals.shape != (len(rule),):
        raise ValueError(
            f"expected {len(rule)} node values, got {u_vals.shape} and {v_vals.shape}"
        )
    return float(np.sum(rule.weights * u_vals * v_vals))


@dataclass(frozen=True)
class LegendreSeries:
    """Finite Legendre expansion sum_p coeffs[p] L_p(x) on [-1, 1]."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a nonempty vector")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        # Clenshaw recurrence for Legendre series
        b1 = np.zeros_like(x)
        b2 = np.zeros_like(x)
        for k in range(self.degree, 0, -1):
            alpha = (2 * k + 1) / (k + 1) * x
            beta = -(k + 1) / (k + 2)
            b1, b2 = self.coeffs[k] + alpha * b1 + beta * b2, b1
        out = self.coeffs[0] + x * b1 - 0.5 * b2
        return out if out.ndim else float(out)


def forward_transform(rule: QuadratureRule) -> np.ndarray:
    """Matrix mapping node values to Legendre coefficients of the interpolant.

    Row ``p`` is ``(2p + 1)/2 * w_j * L_p(x_j)``.
    """
    M = rule.degree
    table = legendre_table(M, rule.nodes)
    scale = (2.0 * np.arange(M + 1) + 1.0) / 2.0
    return scale[:, None] * table * rule.weights[None, :]


def interpolate(v: Callable, rule: QuadratureRule) -> LegendreSeries:
    """Legendre-Gauss interpolant of ``v`` at the rule's nodes."""
    vals = np.asarray(v(rule.nodes), dtype=float)
    if vals.shape == ():
        vals = np.full(len(rule), float(vals))
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite at every quadrature node")
    return LegendreSeries(forward_transform(rule) @ vals)
