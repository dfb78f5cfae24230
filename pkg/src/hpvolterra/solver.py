"""
hp-version Legendre-Gauss collocation for first-kind Volterra equations.

Elements are solved left to right. On element ``n`` the unknowns are the
Legendre coefficients of the local polynomial on Lambda; the equations equate
the Legendre coefficients of

    (h_n/4)(1+x) <g(s(sigma(x, .)), t(x), u(sigma(x, .))), 1>_M  +  history(x)  -  f(t(x))

with zero, where ``history`` collects the already solved elements. Linear
problems are solved directly; nonlinear ones by a steepest-descent start
followed by damped Newton iteration.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .mesh import Mesh, sigma
from .problem import ProblemSpec
from .quadrature import LegendreSeries, forward_transform, gauss_legendre, legendre_table

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


class SolverError(RuntimeError):
    """Failure on a specific element; ``element`` is its 0-based index."""

    def __init__(self, message: str, element: Optional[int] = None, residual: float = float("nan")):
        where = f"element {element}: " if element is not None else ""
        super().__init__(where + message)
        self.element = element
        self.residual = residual


class NewtonDiverged(SolverError):
    pass


class SingularJacobian(SolverError):
    pass


class NonFiniteValue(SolverError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for the per-element nonlinear solve.

    ``tol`` bounds the sup norm of the coefficient residual relative to the
    size of the terms it is made of (see :meth:`ElementSystem.scale`). With
    ``accept_stalled`` a Newton iteration that stops making progress returns its
    last iterate (flagged in the diagnostics) instead of raising; this is for
    equations whose collocation system has no exact real root.
    """

    tol: float = 1e-13
    max_newton: int = 50
    init: str = "sd"  # zero | prev | sd; prev and sd start from the continuation
    sd_steps: int = 20
    jacobian: str = "analytic"  # analytic | fd
    fd_step: float = 1e-7
    max_halvings: int = 30
    polish_steps: int = 3
    accept_stalled: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.init not in ("zero", "prev", "sd"):
            raise ValueError(f"unknown initializer {self.init!r}")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if self.max_newton < 1:
            raise ValueError("max_newton must be at least 1")


class HistoryTerm:
    """Node data of solved elements: quadrature points, scaled weights, solution values.

    Entries are appended once per element and never modified afterwards.
    """

    def __init__(self):
        self._s: list[np.ndarray] = []
        self._w: list[np.ndarray] = []
        self._u: list[np.ndarray] = []
        self._cache: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self._s)

    def append(self, s_nodes: np.ndarray, scaled_weights: np.ndarray, u_values: np.ndarray) -> None:
        s_nodes, scaled_weights, u_values = (np.array(a, dtype=float) for a in (s_nodes, scaled_weights, u_values))
        for a in (s_nodes, scaled_weights, u_values):
            a.setflags(write=False)
        self._s.append(s_nodes)
        self._w.append(scaled_weights)
        self._u.append(u_values)
        self._cache = None

    def element(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._s[k], self._w[k], self._u[k]

    def _flat(self):
        if self._cache is None:
            self._cache = (np.concatenate(self._s), np.concatenate(self._w), np.concatenate(self._u))
        return self._cache

    def contribution(self, g: Callable, t: np.ndarray) -> np.ndarray:
        """sum_k (h_k/2) sum_j w_kj g(xi_kj, t, u_kj) for each target ``t``."""
        t = np.asarray(t, dtype=float)
        if not self._s:
            return np.zeros_like(t)
        s, w, u = self._flat()
        vals = g(s[None, :], t[:, None], u[None, :])
        return np.asarray(vals, dtype=float) @ w


@dataclass(frozen=True)
class ElementSolution:
    """Legendre coefficients of the local solution on element ``n`` (mapped to Lambda)."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def series(self) -> LegendreSeries:
        return LegendreSeries(self.coeffs)


@dataclass(frozen=True)
class ElementDiagnostics:
    element: int
    iterations: int
    residual: float
    condition: float
    method: str


class ElementSystem:
    """Discrete collocation equations of one element, with history already fixed."""

    def __init__(self, problem: ProblemSpec, mesh: Mesh, n: int, history: HistoryTerm):
        if len(history) != n:
            raise ValueError(f"history holds {len(history)} elements, element {n} needs {n}")
        self.problem = problem
        self.n = n
        M = mesh.degrees[n]
        self.M = M
        rule = gauss_legendre(M)
        x, w = rule.nodes, rule.weights
        a, b = mesh.element(n)
        self.h = h = b - a
        self.a = a
        self.x = x
        self.w = w
        self.t = a + 0.5 * h * (x + 1.0)
        tau = sigma(x[:, None], x[None, :])  # [i, j]: inner node j for target i
        self.s = a + 0.5 * h * (tau + 1.0)
        self.L_tau = legendre_table(M, tau)  # [q, i, j]
        self.W = 0.25 * h * (1.0 + x)[:, None] * w[None, :]
        self.D = forward_transform(rule)
        f_vals = np.asarray(problem.f(self.t), dtype=float) * np.ones(M + 1)
        hist = history.contribution(problem.g, self.t)
        if not (np.all(np.isfinite(f_vals)) and np.all(np.isfinite(hist))):
            raise NonFiniteValue("non-finite right-hand side or history term", element=n)
        self.f_nodes = f_vals
        self.hist_nodes = hist
        self.c = self.D @ f_vals
        self.b = self.D @ hist
        self._rhs_scale = max(float(np.max(np.abs(self.c))), float(np.max(np.abs(self.b))))
        self._abs_D = np.abs(self.D)

    @property
    def size(self) -> int:
        return self.M + 1

    def u_inner(self, coeffs: np.ndarray) -> np.ndarray:
        return np.tensordot(coeffs, self.L_tau, axes=(0, 0))

    def nodal_residual(self, coeffs: np.ndarray) -> np.ndarray:
        gv = np.asarray(self.problem.g(self.s, self.t[:, None], self.u_inner(coeffs)), dtype=float)
        if not np.all(np.isfinite(gv)):
            raise NonFiniteValue("integrand is not finite at a quadrature node", element=self.n)
        return np.sum(self.W * gv, axis=1) + self.hist_nodes - self.f_nodes

    def residual(self, coeffs: np.ndarray) -> np.ndarray:
        """F_p = a~_p + b~_p - c_p for p = 0..M."""
        return self.D @ self.nodal_residual(np.asarray(coeffs, dtype=float))

    def scale(self, coeffs: np.ndarray) -> float:
        """Magnitude of the terms that make up F at ``coeffs``.

        The largest of |c|, |b~| and the coefficients of sum_j |W_ij g_ij|, so
        the tolerance follows the data even where the solution is tiny.
        """
        gv = np.asarray(self.problem.g(self.s, self.t[:, None], self.u_inner(coeffs)), dtype=float)
        terms = self._abs_D @ np.sum(np.abs(self.W * gv), axis=1)
        return max(self._rhs_scale, float(np.max(terms)), _TINY)

    def jacobian(self, coeffs: np.ndarray) -> np.ndarray:
        """dF_p/du_q from the analytic derivative of the integrand in u."""
        if self.problem.dg_du is None:
            raise ValueError(f"{self.problem.name} has no analytic dg/du; use the fd Jacobian")
        coeffs = np.asarray(coeffs, dtype=float)
        dg = np.asarray(self.problem.dg_du(self.s, self.t[:, None], self.u_inner(coeffs)), dtype=float)
        dg = np.broadcast_to(dg, self.s.shape)
        if not np.all(np.isfinite(dg)):
            raise NonFiniteValue("dg/du is not finite at a quadrature node", element=self.n)
        nodal = np.einsum("ij,qij->iq", self.W * dg, self.L_tau)
        return self.D @ nodal

    def jacobian_fd(self, coeffs: np.ndarray, step: float = 1e-7) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        J = np.empty((self.size, self.size))
        for q in range(self.size):
            e = np.zeros(self.size)
            e[q] = step
            J[:, q] = (self.residual(coeffs + e) - self.residual(coeffs - e)) / (2 * step)
        return J


def assemble_element_residual(problem: ProblemSpec, mesh: Mesh, n: int, coeffs, history: HistoryTerm) -> np.ndarray:
    return ElementSystem(problem, mesh, n, history).residual(coeffs)


def assemble_element_jacobian(problem: ProblemSpec, mesh: Mesh, n: int, coeffs, history: HistoryTerm,
                              mode: str = "analytic", step: float = 1e-7) -> np.ndarray:
    system = ElementSystem(problem, mesh, n, history)
    if mode == "fd":
        return system.jacobian_fd(coeffs, step)
    return system.jacobian(coeffs)


def _factor(J: np.ndarray, element: int):
    if not np.all(np.isfinite(J)):
        raise NonFiniteValue("Jacobian has non-finite entries", element=element)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(J, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < 1e-300:
        raise SingularJacobian("Jacobian is singular (pivot below 1e-300)", element=element)
    return lu, piv


def condition_estimate(J: np.ndarray) -> float:
    """1-norm condition number estimate from LAPACK's gecon."""
    if not np.all(np.isfinite(J)):
        return float("inf")
    anorm = float(np.max(np.sum(np.abs(J), axis=0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, _ = lu_factor(J, check_finite=False)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    return float("inf") if rcond == 0 else 1.0 / rcond


def _trial_residual(residual: Callable, coeffs: np.ndarray) -> np.ndarray:
    # an overlong trial step may overflow the integrand; it is then simply rejected
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return residual(coeffs)
    except NonFiniteValue:
        return np.full(coeffs.shape, np.inf)


def steepest_descent_init(residual: Callable, jacobian: Callable, start: np.ndarray,
                          steps: int = 20, tol: float = 0.0) -> np.ndarray:
    """Descent on Phi(u) = |F(u)|^2 / 2 along -J^T F with Armijo backtracking.

    Returns the best iterate seen (never worse than ``start``).
    """
    u = np.array(start, dtype=float)
    F = residual(u)
    if np.max(np.abs(F), initial=0.0) <= tol:
        return u
    phi = 0.5 * float(F @ F)
    for _ in range(steps):
        grad = jacobian(u).T @ F
        gg = float(grad @ grad)
        if gg == 0.0:
            break
        alpha = 1.0
        while alpha >= 1e-12:
            trial = u - alpha * grad
            F_trial = _trial_residual(residual, trial)
            phi_trial = 0.5 * float(F_trial @ F_trial)
            if phi_trial <= phi - 1e-4 * alpha * gg:
                break
            alpha *= 0.5
        else:
            break
        u, F, phi = trial, F_trial, phi_trial
    return u


def _fit_length(coeffs: Optional[np.ndarray], size: int) -> np.ndarray:
    out = np.zeros(size)
    if coeffs is not None:
        m = min(size, coeffs.size)
        out[:m] = coeffs[:m]
    return out


def solve_element(problem: ProblemSpec, mesh: Mesh, n: int, history: HistoryTerm,
                  opts: SolveOptions = SolveOptions(), start: Optional[np.ndarray] = None
                  ) -> tuple[ElementSolution, ElementDiagnostics]:
    """Solve the collocation equations of element ``n`` given the solved history.

    ``start`` holds Legendre coefficients of the initial guess (padded with
    zeros or truncated to the element's size); it is ignored for linear problems
    and when ``opts.init == "zero"``.
    """
    system = ElementSystem(problem, mesh, n, history)

    if opts.jacobian == "fd" or problem.dg_du is None:
        def jac(c):
            return system.jacobian_fd(c, opts.fd_step)
    else:
        jac = system.jacobian

    if problem.linear:
        zero = np.zeros(system.size)
        A = jac(zero)
        lu = _factor(A, n)
        coeffs = lu_solve(lu, -system.residual(zero))
        F = system.residual(coeffs)
        tol = opts.tol * system.scale(coeffs)
        refinements = 0
        while np.max(np.abs(F)) > tol and refinements < 3:
            coeffs = coeffs + lu_solve(lu, -F)
            F = system.residual(coeffs)
            refinements += 1
        res = float(np.max(np.abs(F)))
        if res > tol:
            log.warning("element %d: linear residual %.3e above tolerance %.3e", n, res, tol)
        return ElementSolution(n, coeffs), ElementDiagnostics(n, refinements, res, condition_estimate(A), "direct")

    start = _fit_length(start if opts.init != "zero" else None, system.size)
    if opts.init == "sd":
        start = _descent_start(system, jac, start, opts)
    try:
        coeffs, iterations, res, cond, method = _newton(system, jac, start, opts)
    except NewtonDiverged:
        if not opts.accept_stalled:
            raise
        # keep the best point of a plain damped Newton run from the same start
        coeffs, iterations, res, cond, method = _newton(system, jac, start, opts, stalled_ok=True)
    return ElementSolution(n, coeffs), ElementDiagnostics(n, iterations, res, cond, method)


def _descent_start(system: ElementSystem, jac, start, opts):
    # A start where the Jacobian degenerates (e.g. cos(u) or u^2 at u = 0) is a
    # stationary point of the descent too. It is replaced by constant shifts of
    # both signs over many magnitudes; the two with the smallest residual are
    # refined by descent.
    starts = [start]
    J0 = jac(start)
    if not np.all(np.isfinite(J0)) or condition_estimate(J0) > 1.0 / _EPS:
        shifted = []
        for k in range(0, 17, 2):
            for sign in (1.0, -1.0):
                cand = start.copy()
                cand[0] += sign * 10.0 ** -k
                F = system.residual(cand)
                shifted.append((float(F @ F), len(shifted), cand))
        shifted.sort(key=lambda item: item[:2])
        starts = [cand for _, _, cand in shifted[:2]]
    best, best_phi = start, np.inf
    for s in starts:
        cand = steepest_descent_init(system.residual, jac, s, opts.sd_steps,
                                     opts.tol * system.scale(s))
        F = system.residual(cand)
        phi = float(F @ F)
        if phi < best_phi:
            best, best_phi = cand, phi
    return best


def _newton(system: ElementSystem, jac, coeffs, opts, stalled_ok: bool = False):
    n = system.n
    F = system.residual(coeffs)
    res = float(np.max(np.abs(F)))
    tol = opts.tol * system.scale(coeffs)
    it = 0
    while res > tol:
        if it == opts.max_newton:
            if stalled_ok:
                return coeffs, it, res, condition_estimate(jac(coeffs)), "stalled"
            raise NewtonDiverged(
                f"no convergence in {opts.max_newton} Newton iterations, "
                f"residual {res:.3e} (tolerance {tol:.3e})", element=n, residual=res,
            )
        step = lu_solve(_factor(jac(coeffs), n), -F)
        lam = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = coeffs + lam * step
            F_trial = _trial_residual(system.residual, trial)
            res_trial = float(np.max(np.abs(F_trial)))
            if res_trial <= res:
                break
            lam *= 0.5
        else:
            if stalled_ok:
                log.warning("element %d: accepting stalled iterate, residual %.3e", n, res)
                return coeffs, it, res, condition_estimate(jac(coeffs)), "stalled"
            raise NewtonDiverged(
                f"Newton stalled at residual {res:.3e} (tolerance {tol:.3e})", element=n, residual=res
            )
        coeffs, F, res = trial, F_trial, res_trial
        tol = opts.tol * system.scale(coeffs)
        it += 1
    # Residual slack on one element is amplified through the history of all
    # later ones, so a few undamped steps push it down to roundoff.
    for _ in range(opts.polish_steps):
        if res == 0.0:
            break
        trial = coeffs + lu_solve(_factor(jac(coeffs), n), -F)
        F_trial = system.residual(trial)
        res_trial = float(np.max(np.abs(F_trial)))
        if not res_trial < res:
            break
        coeffs, F, res = trial, F_trial, res_trial
    return coeffs, it, res, condition_estimate(jac(coeffs)), "newton"


@dataclass(frozen=True)
class PiecewiseLegendreSolution:
    """Global approximation: one Legendre series per mesh element."""

    mesh: Mesh
    elements: tuple
    diagnostics: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.elements) != self.mesh.N:
            raise ValueError("need one element solution per mesh element")

    def coefficients(self, n: int) -> np.ndarray:
        return self.elements[n].coeffs

    @property
    def breakpoints(self) -> tuple:
        return tuple(float(k) for k in self.mesh.knots[1:-1])

    def evaluate_on(self, n: int, t):
        """Evaluate element ``n``'s polynomial at ``t`` (extrapolating if outside)."""
        a, b = self.mesh.element(n)
        x = (2.0 * np.asarray(t, dtype=float) - a - b) / (b - a)
        return self.elements[n].series(x)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = self.mesh.element_of(t_arr)
        if t_arr.ndim == 0:
            return float(self.evaluate_on(int(idx), t_arr))
        out = np.empty(t_arr.shape)
        for n in np.unique(idx):
            sel = idx == n
            out[sel] = self.evaluate_on(int(n), t_arr[sel])
        return out


def element_start(problem: ProblemSpec, mesh: Mesh, n: int,
                  previous: Optional[ElementSolution]) -> Optional[np.ndarray]:
    """Initial Legendre coefficients for element ``n``.

    The problem's ``guess`` wins when present (it selects a solution branch).
    Otherwise the constant equal to the previous element's right-end value is
    used; element 0 starts from zero. A constant keeps the sign of the
    solution, which matters when psi is even in u.
    """
    if problem.guess is not None:
        rule = gauss_legendre(mesh.degrees[n])
        vals = np.broadcast_to(np.asarray(problem.guess(mesh.from_reference(n, rule.nodes)), dtype=float),
                               rule.nodes.shape)
        return forward_transform(rule) @ vals
    if previous is None:
        return None
    # value at the right end of the previous element (L_p(1) = 1)
    return np.array([float(np.sum(previous.coeffs))])


def solve_global(problem: ProblemSpec, mesh: Mesh, opts: SolveOptions = SolveOptions()) -> PiecewiseLegendreSolution:
    """March over the elements in order, extending the history after each."""
    if abs(mesh.T - problem.T) > 1e-12 * problem.T:
        log.debug("mesh horizon %g differs from problem horizon %g", mesh.T, problem.T)
    history = HistoryTerm()
    elements = []
    diags = []
    previous = None
    for n in range(mesh.N):
        start = element_start(problem, mesh, n, previous)
        sol, diag = solve_element(problem, mesh, n, history, opts, start)
        elements.append(sol)
        diags.append(diag)
        previous = sol
        rule = gauss_legendre(mesh.degrees[n])
        a, b = mesh.element(n)
        h = b - a
        history.append(a + 0.5 * h * (rule.nodes + 1.0), 0.5 * h * rule.weights, sol.series(rule.nodes))
    return PiecewiseLegendreSolution(mesh, tuple(elements), tuple(diags))
