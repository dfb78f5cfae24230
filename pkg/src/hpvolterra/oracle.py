"""
Independent checks on computed solutions.

Two paths, deliberately disjoint from the collocation solver:

* :func:`residual_check` integrates ``g(s, t, u(s))`` over [0, t] with a
  composite Gauss rule on its own panels and compares with ``f(t)``.
* :func:`picard_reference` differentiates the equation into second-kind form
  and runs the successive substitution sequence on a uniform grid, using only
  trapezoid sums and finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .problem import ProblemSpec, rhs_derivative


class OracleError(ValueError):
    """A precondition of an oracle path does not hold."""


class NotHammerstein(OracleError):
    pass


class DiagonalVanishes(OracleError):
    pass


class InversionFailed(OracleError):
    pass


class NonFiniteResidual(OracleError):
    pass


@dataclass(frozen=True)
class ResidualProfile:
    """Absolute residuals ``|K u(t) - f(t)|`` at the probe points."""

    probes: np.ndarray
    residuals: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


def residual_check(p: ProblemSpec, u: Callable, probes: Sequence[float], panels: int = 32,
                   degree: int = 16, breaks: Sequence[float] = ()) -> ResidualProfile:
    """Residual of the integral equation for a candidate solution ``u``.

    For each probe ``t``, [0, t] is cut at the uniform panel boundaries of
    [0, T], at the problem's breakpoints, at ``breaks`` and at ``u.breakpoints``
    when ``u`` provides them; each piece gets a ``degree``-point Gauss rule.

    Parameters
    ----------
    p : ProblemSpec
    u : callable
        Vectorized candidate solution on [0, T].
    probes : sequence of float
        Points in (0, T].
    panels, degree : int
        Panel count on [0, T] and Gauss points per piece.
    breaks : sequence of float
        Extra discontinuities of ``u`` or the kernel.
    """
    if panels < 1 or degree < 1:
        raise ValueError("panels and degree must be at least 1")
    probes = np.asarray(probes, dtype=float).ravel()
    if np.any(probes <= 0) or np.any(probes > p.T * (1 + 1e-14)):
        raise ValueError("probe points must lie in (0, T]")
    x, w = np.polynomial.legendre.leggauss(degree)
    cuts = set(np.linspace(0.0, p.T, panels + 1)[1:-1].tolist())
    cuts.update(float(b) for b in p.breakpoints)
    cuts.update(float(b) for b in breaks)
    cuts.update(float(b) for b in getattr(u, "breakpoints", ()))
    cuts = np.array(sorted(cuts))

    out = np.empty(probes.size)
    for i, t in enumerate(probes):
        edges = np.concatenate(([0.0], cuts[(cuts > 0) & (cuts < t)], [t]))
        a, b = edges[:-1, None], edges[1:, None]
        s = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        ws = (0.5 * (b - a) * w).ravel()
        integrand = np.asarray(p.g(s, t, u(s)), dtype=float)
        value = float(np.dot(ws, integrand)) - float(p.f(t))
        if not np.isfinite(value):
            raise NonFiniteResidual(f"non-finite residual at t={t}")
        out[i] = abs(value)
    out.setflags(write=False)
    probes.setflags(write=False)
    return ResidualProfile(probes, out)


@dataclass(frozen=True)
class PicardResult:
    """Grid values of the last Picard iterate.

    ``changes[k]`` is the sup-norm difference between iterates ``k`` and ``k+1``.
    Calling the result interpolates linearly between grid points.
    """

    grid: np.ndarray
    u: np.ndarray
    changes: np.ndarray

    @property
    def last_change(self) -> float:
        return float(self.changes[-1]) if self.changes.size else 0.0

    def __call__(self, t):
        return np.interp(t, self.grid, self.u)


def _kernel_t(kernel: Callable, s: np.ndarray, t: np.ndarray, step: float) -> np.ndarray:
    # d/dt kernel(s, t), five-point central difference
    return (kernel(s, t - 2 * step) - 8 * kernel(s, t - step)
            + 8 * kernel(s, t + step) - kernel(s, t + 2 * step)) / (12 * step)


def _invert(psi: Callable, dpsi: Callable, s: np.ndarray, target: np.ndarray,
            guess: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Solve ``psi(s, v) = target`` pointwise by bracketed Newton with bisection fallback."""

    def F(v):
        return psi(s, v) - target

    scale = np.maximum(1.0, np.abs(target))
    f_guess = F(guess)
    lo = guess.copy()
    hi = guess.copy()
    found = np.abs(f_guess) <= tol * scale
    width = np.maximum(1e-3, 1e-3 * np.abs(guess))
    # grow a bracket; prefer the half on the right of the guess
    for _ in range(80):
        todo = ~found
        if not todo.any():
            break
        right = guess + width
        left = guess - width
        f_r = F(right)
        f_l = F(left)
        use_r = todo & (np.sign(f_r) != np.sign(f_guess))
        use_l = todo & ~use_r & (np.sign(f_l) != np.sign(f_guess))
        lo[use_r], hi[use_r] = guess[use_r], right[use_r]
        lo[use_l], hi[use_l] = left[use_l], guess[use_l]
        found |= use_r | use_l
        width = np.where(found, width, 2.0 * width)
    if not found.all():
        bad = s[~found][0]
        raise InversionFailed(f"no sign change of psi(s, .) - target found at s={bad}")

    f_lo = F(lo)
    v = np.where(np.abs(f_guess) <= tol * scale, guess, 0.5 * (lo + hi))
    for _ in range(200):
        fv = F(v)
        done = (np.abs(fv) <= tol * scale) | (hi - lo <= tol * np.maximum(1.0, np.abs(v)))
        if done.all():
            return v
        same = np.sign(fv) == np.sign(f_lo)
        lo = np.where(same, v, lo)
        f_lo = np.where(same, fv, f_lo)
        hi = np.where(same, hi, v)
        d = dpsi(s, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = v - fv / d
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        v = np.where(done, v, np.where(inside, newton, 0.5 * (lo + hi)))
    raise InversionFailed("scalar inversion did not reach the tolerance")


def picard_reference(p: ProblemSpec, grid_points: int = 2048, iterations: int = 40) -> PicardResult:
    """Picard sequence for the differentiated equation on a uniform grid.

    Iterates ``psi(t, u_{k+1}(t)) = f'(t)/k(t,t) - int_0^t k_t(s,t)/k(t,t) psi(s, u_k(s)) ds``
    from the constant start ``psi(0, u_0) = f'(0)/k(0,0)``. The integral is a
    trapezoid sum over the grid and ``k_t`` a five-point difference.

    Raises
    ------
    NotHammerstein
        The problem has no kernel/psi split.
    DiagonalVanishes
        ``|k(t, t)| < 1e-8`` somewhere on the grid.
    InversionFailed
        ``psi(t, .)`` could not be inverted at some grid point.
    """
    if not p.is_hammerstein:
        raise NotHammerstein(f"{p.name}: the Picard reference needs a kernel/psi split")
    if grid_points < 2 or iterations < 1:
        raise ValueError("need at least 2 grid points and 1 iteration")
    grid = np.linspace(0.0, p.T, grid_points)
    diag = np.asarray(p.kernel(grid, grid), dtype=float) * np.ones_like(grid)
    if np.min(np.abs(diag)) < 1e-8:
        at = grid[np.argmin(np.abs(diag))]
        raise DiagonalVanishes(f"{p.name}: kernel diagonal vanishes near t={at}")

    if p.dpsi_du is not None:
        dpsi = p.dpsi_du
    else:
        def dpsi(s, v):
            step = 1e-7 * np.maximum(1.0, np.abs(v))
            return (p.psi(s, v + step) - p.psi(s, v - step)) / (2 * step)

    def psi(s, v):
        return np.asarray(p.psi(s, v), dtype=float) * np.ones_like(v)

    fprime = np.array([rhs_derivative(p, float(t)) for t in grid])
    S, Tg = np.meshgrid(grid, grid)  # rows: target t, columns: s
    step = 1e-3 * p.T
    kt = _kernel_t(p.kernel, S, Tg, step) * np.ones_like(S)
    # trapezoid weights of int_0^{t_i}, row i
    h = grid[1] - grid[0]
    weights = np.tril(np.full((grid_points, grid_points), h))
    weights[:, 0] = 0.5 * h
    weights[np.arange(grid_points), np.arange(grid_points)] = 0.5 * h
    weights[0, 0] = 0.0
    A = weights * kt / diag[:, None]
    base = fprime / diag

    u0 = _invert(psi, dpsi, np.zeros(1), np.array([base[0]]), np.zeros(1))[0]
    u = np.full(grid_points, u0)
    changes = []
    for _ in range(iterations):
        target = base - A @ psi(grid, u)
        new = _invert(psi, dpsi, grid, target, u)
        changes.append(float(np.max(np.abs(new - u))))
        u = new
    u.setflags(write=False)
    grid.setflags(write=False)
    return PicardResult(grid, u, np.array(changes))
