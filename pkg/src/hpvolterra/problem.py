"""
Problem definitions for first-kind Volterra equations

    int_0^t g(s, t, u(s)) ds = f(t),   0 <= t <= T,

and the registry of benchmark problems ``ex1`` ... ``ex10``.

All callables are vectorised: they accept numpy arrays (broadcasting) as well
as floats. Registry problems are written natively with numpy so that solver
results never depend on the expression parser.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.special import erf, erfc

from . import exprlang
from .quadrature import gauss_legendre

Fn = Callable[..., np.ndarray]


class ProblemConfigError(ValueError):
    """Invalid or inconsistent problem description."""


@dataclass(frozen=True)
class ProblemSpec:
    """A first-kind Volterra problem on [0, T].

    ``g(s, t, u)`` is the full integrand. Hammerstein problems additionally carry
    ``kernel(s, t)`` and ``psi(s, u)`` with ``g = kernel * psi``; only those can
    be handed to the Picard oracle. ``breakpoints`` lists interior points where
    the kernel, right-hand side or exact solution lose smoothness. ``guess``
    optionally supplies Newton starting values; it matters only when the
    equation has several solutions and one branch is wanted.
    """

    name: str
    g: Fn
    f: Fn
    T: float
    dg_du: Optional[Fn] = None
    exact: Optional[Fn] = None
    linear: bool = False
    kernel: Optional[Fn] = None
    psi: Optional[Fn] = None
    dpsi_du: Optional[Fn] = None
    breakpoints: tuple = ()
    guess: Optional[Fn] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > 0:
            raise ProblemConfigError("T must be positive")
        f0 = float(self.f(0.0))
        if not abs(f0) <= 1e-12:
            raise ProblemConfigError(f"f(0) must vanish, got {f0!r}")

    @property
    def is_hammerstein(self) -> bool:
        return self.kernel is not None and self.psi is not None

    def validate(self, samples: int = 16, seed: int = 0) -> None:
        """Check the linearity flag on random samples (homogeneity of g in u)."""
        if not self.linear:
            return
        rng = np.random.default_rng(seed)
        s = rng.uniform(0, self.T, samples)
        t = np.maximum(s, rng.uniform(0, self.T, samples))
        u = rng.uniform(-2, 2, samples)
        alpha = rng.uniform(-3, 3, samples)
        lhs = self.g(s, t, alpha * u)
        rhs = alpha * self.g(s, t, u)
        if not np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12):
            raise ProblemConfigError(f"{self.name}: marked linear but g is not homogeneous in u")


def hammerstein(name, kernel, psi, dpsi_du, f, T, **kw) -> ProblemSpec:
    """Build a problem with integrand ``kernel(s, t) * psi(s, u)``."""

    def g(s, t, u):
        return kernel(s, t) * psi(s, u)

    def dg(s, t, u):
        return kernel(s, t) * dpsi_du(s, u)

    return ProblemSpec(name=name, g=g, f=f, T=T, dg_du=None if dpsi_du is None else dg,
                       kernel=kernel, psi=psi,
                       dpsi_du=dpsi_du, **kw)


def _identity_psi(s, u):
    return np.asarray(u, dtype=float) + 0.0 * np.asarray(s, dtype=float)


def _unit_dpsi(s, u):
    return np.ones(np.broadcast(np.asarray(s), np.asarray(u)).shape)


def _ones_kernel(s, t):
    return np.ones(np.broadcast(np.asarray(s), np.asarray(t)).shape)



# ---------------------------------------------------------------- registry


def _ex1(T=1.0):
    def f(t):
        t = np.asarray(t, dtype=float)
        e = np.exp(-t * (t + 1))
        return (e * np.sin(t) - (t + 1) * np.cos(t) * e + t + 1) / (1 + (t + 1) ** 2)

    return hammerstein(
        "ex1", lambda s, t: np.exp(-np.multiply(t, s)), _identity_psi, _unit_dpsi, f, T,
        exact=lambda t: np.exp(-np.asarray(t, dtype=float)) * np.cos(t), linear=True,
    )


def _ex2(T=1.0):
    return hammerstein(
        "ex2",
        lambda s, t: np.sin(np.subtract(t, s)) + 1.0,
        lambda s, u: np.cos(u) + 0.0 * np.asarray(s),
        lambda s, u: -np.sin(u) + 0.0 * np.asarray(s),
        lambda t: np.sin(t) + 0.5 * np.asarray(t, dtype=float) * np.sin(t),
        T,
        exact=lambda t: np.asarray(t, dtype=float) + 0.0,
    )


def _ex3(T=1.0):
    return ProblemSpec(
        name="ex3",
        g=lambda s, t, u: np.sin(t - np.multiply(s, u)),
        dg_du=lambda s, t, u: -np.asarray(s) * np.cos(t - np.multiply(s, u)),
        f=lambda t: 1.0 - np.cos(t),
        T=T,
        exact=lambda t: np.ones_like(np.asarray(t, dtype=float)),
    )


def _ex4(T=10.0):
    c = math.sqrt(math.pi) / 4

    def f(t):
        # erf(10) + erf(x) = erfc(-x) - erfc(10); the erfc form keeps the
        # tiny values for t < 5 instead of cancelling them to roundoff
        x = 2.0 * (np.asarray(t, dtype=float) - 5.0)
        out = c * np.where(x < 0, erfc(-x) - erfc(10.0), erf(10.0) + erf(np.maximum(x, 0.0)))
        return out if out.ndim else float(out)

    return hammerstein(
        "ex4", _ones_kernel,
        lambda s, u: np.square(u) + 0.0 * np.asarray(s),
        lambda s, u: 2.0 * np.asarray(u) + 0.0 * np.asarray(s),
        f,
        T,
        exact=lambda t: np.exp(-2.0 * (np.asarray(t, dtype=float) - 5.0) ** 2),
    )


def _ex5(T=1.0):
    return hammerstein(
        "ex5",
        lambda s, t: (1.0 + np.subtract(t, s)) ** 2,
        lambda s, u: u + np.asarray(u) ** 3 + 0.0 * np.asarray(s),
        lambda s, u: 1.0 + 3.0 * np.asarray(u) ** 2 + 0.0 * np.asarray(s),
        lambda t: np.square(np.asarray(t, dtype=float)),
        T,
    )


def _ex6_phi(s):
    return 3.0 * s**6 / (s + 1.0) + np.sin(s**3)


def _ex6(T=1.0):
    # sin(s^3) has no elementary antiderivative; f is integrated with a 48-point rule
    rule = gauss_legendre(47)

    def f(t):
        t = np.asarray(t, dtype=float)
        tt = t[..., None]
        s = 0.5 * tt * (rule.nodes + 1.0)
        w = 0.5 * tt * rule.weights
        phi = _ex6_phi(s)
        early = np.sum(w * (s * s - tt + 5.0) * phi, axis=-1)
        late = np.sum(w * phi, axis=-1)
        out = np.where(t < 0.5, early, late)
        return out if out.ndim else float(out)

    def kernel(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return np.where(t < 0.5, s * s - t + 5.0, 1.0)

    return hammerstein(
        "ex6", kernel,
        lambda s, u: 3.0 * np.square(u) / (np.asarray(s) + 1.0) + np.sin(u),
        lambda s, u: 6.0 * np.asarray(u) / (np.asarray(s) + 1.0) + np.cos(u),
        f, T,
        exact=lambda t: np.asarray(t, dtype=float) ** 3,
        breakpoints=(0.5,),
    )


# f for t >= 0.5 is c0 + c1 t + t^4/3 + e^{-2t}(-4 - 10t) + e^{-t}(16 + 18t + 10t^2)
EX7_C0 = 7 / 64 - 26 * math.exp(-0.5) + 8 * math.exp(-1.0)
EX7_C1 = 11 / 96 - 3 * math.exp(-0.5) + 2 * math.exp(-1.0)
EX7_PRINTED = (-12.7174, -0.96925)


def _ex7(T=1.0, printed=0):
    c0, c1 = EX7_PRINTED if printed else (EX7_C0, EX7_C1)

    def f(t):
        t = np.asarray(t, dtype=float)
        late = (c0 + c1 * t + t**4 / 3.0 + np.exp(-2 * t) * (-4 - 10 * t)
                + np.exp(-t) * (16 + 18 * t + 10 * t * t))
        out = np.where(t < 0.5, 0.75 * t * t, late)
        return out if out.ndim else float(out)

    def exact(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 0.5, (t - 1.0) / 2.0, 2.0 * np.exp(-t))

    # psi depends on u only through (u - s/2)^2, so u and s - u solve the same
    # equation; the hint picks u - s/2 < 0 before the jump and > 0 after it.
    def guess(t):
        return np.where(np.asarray(t, dtype=float) < 0.5, -0.5, 1.0)

    return hammerstein(
        "ex7",
        lambda s, t: np.add(t, 4.0 * np.asarray(s)),
        lambda s, u: np.square(np.subtract(u, 0.5 * np.asarray(s))),
        lambda s, u: 2.0 * np.subtract(u, 0.5 * np.asarray(s)),
        f, T, exact=exact, breakpoints=(0.5,), guess=guess, params={"printed": printed},
    )


def _ex8(T=10.0):
    def f(t):
        t = np.asarray(t, dtype=float)
        out = np.where(t < 5.0, 0.5 * t * t, 12.5 + np.log(np.maximum(t, 5.0) / 5.0))
        return out if out.ndim else float(out)

    def exact(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 5.0, t, 1.0 / np.maximum(t, 5.0))

    return hammerstein("ex8", _ones_kernel, _identity_psi, _unit_dpsi, f, T,
                       exact=exact, linear=True, breakpoints=(5.0,))


def _ex9(T=1.0):
    root_e = math.exp(0.5)

    def f(t):
        t = np.asarray(t, dtype=float)
        early = (1.0 - t) * root_e - np.exp(0.5 - t)
        late = 2.0 * t - 1.0 + (1.0 - t) * root_e - np.exp(t - 0.5)
        out = np.where(t <= 0.5, early, late)
        return out if out.ndim else float(out)

    return hammerstein(
        "ex9",
        lambda s, t: np.subtract(s, t),
        lambda s, u: np.exp(u) + 0.0 * np.asarray(s),
        lambda s, u: np.exp(u) + 0.0 * np.asarray(s),
        f, T,
        exact=lambda t: np.abs(np.asarray(t, dtype=float) - 0.5),
        breakpoints=(0.5,),
    )


def _ex10(T=1.0, r=0.51):
    if not r > 0.5:
        raise ProblemConfigError("ex10 needs r > 1/2")
    return hammerstein(
        "ex10", _ones_kernel,
        lambda s, u: np.square(u) + 0.0 * np.asarray(s),
        lambda s, u: 2.0 * np.asarray(u) + 0.0 * np.asarray(s),
        lambda t: np.asarray(t, dtype=float) ** (2 * r + 1) / (2 * r + 1),
        T,
        exact=lambda t: np.asarray(t, dtype=float) ** r,
        params={"r": r},
    )


REGISTRY: dict[str, tuple[Callable[..., ProblemSpec], str]] = {
    "ex1": (_ex1, "linear, kernel exp(-ts), u = exp(-t)cos(t) on [0,1]"),
    "ex2": (_ex2, "(sin(t-s)+1) cos(u), u = t on [0,1]"),
    "ex3": (_ex3, "sin(t - s u), u = 1 on [0,T]"),
    "ex4": (_ex4, "u^2, Gaussian u = exp(-2(t-5)^2) on [0,10]"),
    "ex5": (_ex5, "(1+t-s)^2 (u + u^3) = t^2, exact solution unknown"),
    "ex6": (_ex6, "kernel discontinuous in t at 0.5, u = t^3 on [0,1]"),
    "ex7": (_ex7, "(t+4s)(u - s/2)^2, u jumps at 0.5"),
    "ex8": (_ex8, "linear int u = f, u jumps at 5 on [0,10]"),
    "ex9": (_ex9, "(s-t) e^u, kernel vanishes on the diagonal, u = |t-0.5|"),
    "ex10": (_ex10, "u^2, u = t^r with parameter r > 1/2"),
}


# ---------------------------------------------------------------- configs


def _compile(expr: exprlang.Expr, names: tuple[str, ...]) -> Fn:
    def fn(*args):
        env = dict(zip(names, args))
        shape = np.broadcast(*(np.asarray(a) for a in args)).shape
        val = exprlang.evaluate(expr, env)
        return np.broadcast_to(val, shape).copy() if shape else float(val)

    fn.expr = expr  # type: ignore[attr-defined]
    return fn


def _parse_field(config, key):
    try:
        return exprlang.parse(str(config[key]))
    except exprlang.ExprError as exc:
        raise ProblemConfigError(f"field {key!r}: {exc}") from exc


_FORMULA_KEYS = {"g", "kernel", "psi", "f", "exact", "guess"}
_REGISTRY_KEYS = {"problem", "name", "T", "r", "printed"}


def make_problem(config: Mapping) -> ProblemSpec:
    """Build a validated :class:`ProblemSpec` from a mapping.

    Either ``{"problem": "ex10", "r": 2.51, "T": ...}`` selects a registry entry,
    or formula strings are given: ``g`` (in s, t, u) or ``kernel`` (s, t) plus
    ``psi`` (s, u), together with ``f`` (t), ``T`` and optionally ``exact`` (t),
    ``guess`` (t), ``linear`` and ``breakpoints``.
    """
    config = dict(config)
    key = config.get("problem")
    if key is None and not (_FORMULA_KEYS & config.keys()):
        key = config.get("name")
    if key is not None:
        if key not in REGISTRY:
            raise ProblemConfigError(f"unknown problem {key!r}; known: {', '.join(REGISTRY)}")
        extra = set(config) - _REGISTRY_KEYS
        if extra:
            raise ProblemConfigError(f"unexpected field(s) for {key}: {', '.join(sorted(extra))}")
        kwargs = {k: config[k] for k in ("T", "r", "printed") if k in config}
        try:
            p = REGISTRY[key][0](**kwargs)
        except TypeError as exc:
            raise ProblemConfigError(f"{key}: {exc}") from exc
        p.validate()
        return p
    return _formula_problem(config)


def _formula_problem(config) -> ProblemSpec:
    for k in ("f", "T"):
        if k not in config:
            raise ProblemConfigError(f"missing field {k!r}")
    has_g = "g" in config
    has_split = "kernel" in config and "psi" in config
    if has_g == has_split:
        raise ProblemConfigError("give either 'g' or both 'kernel' and 'psi'")
    f_expr = _parse_field(config, "f")
    _require_vars(f_expr, {"t"}, "f")
    f = _compile(f_expr, ("t",))
    exact = None
    if "exact" in config and config["exact"] is not None:
        ex_expr = _parse_field(config, "exact")
        _require_vars(ex_expr, {"t"}, "exact")
        exact = _compile(ex_expr, ("t",))
    guess = None
    if config.get("guess") is not None:
        guess_expr = _parse_field(config, "guess")
        _require_vars(guess_expr, {"t"}, "guess")
        guess = _compile(guess_expr, ("t",))
    common = dict(
        name=str(config.get("name", "custom")),
        f=f,
        T=float(config["T"]),
        exact=exact,
        guess=guess,
        linear=bool(config.get("linear", False)),
        breakpoints=tuple(float(b) for b in config.get("breakpoints", ())),
    )
    try:
        if has_g:
            g_expr = _parse_field(config, "g")
            _require_vars(g_expr, {"s", "t", "u"}, "g")
            try:
                dg = _compile(exprlang.derivative_u(g_expr), ("s", "t", "u"))
            except exprlang.NotDifferentiableError:
                dg = None
            p = ProblemSpec(g=_compile(g_expr, ("s", "t", "u")), dg_du=dg, **common)
        else:
            k_expr = _parse_field(config, "kernel")
            psi_expr = _parse_field(config, "psi")
            _require_vars(k_expr, {"s", "t"}, "kernel")
            _require_vars(psi_expr, {"s", "u"}, "psi")
            try:
                dpsi = _compile(exprlang.derivative_u(psi_expr), ("s", "u"))
            except exprlang.NotDifferentiableError:
                dpsi = None
            p = hammerstein(kernel=_compile(k_expr, ("s", "t")), psi=_compile(psi_expr, ("s", "u")),
                            dpsi_du=dpsi, **common)
    except exprlang.ExprError as exc:
        raise ProblemConfigError(str(exc)) from exc
    p.validate()
    return p


def _require_vars(expr, allowed, field_name):
    extra = exprlang.free_variables(expr) - allowed
    if extra:
        raise ProblemConfigError(
            f"field {field_name!r} may only use {', '.join(sorted(allowed))}; found {', '.join(sorted(extra))}"
        )


def load_problem_config(path) -> ProblemSpec:
    """Read a JSON problem description from ``path``."""
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ProblemConfigError(f"cannot read problem config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ProblemConfigError("problem config must be a JSON object")
    return make_problem(config)


def rhs_derivative(p: ProblemSpec, t: float) -> float:
    """f'(t) by a five-point, fourth-order finite difference.

    Central where the stencil fits in [0, T], one-sided at the ends.
    """
    h = max(1e-6, 1e-6 * p.T)
    for b in p.breakpoints:
        if abs(t - b) < 4 * h:
            raise ValueError(f"t={t} is within one stencil of the breakpoint {b}")
    f = p.f
    if t - 2 * h >= 0 and t + 2 * h <= p.T:
        return float((f(t - 2 * h) - 8 * f(t - h) + 8 * f(t + h) - f(t + 2 * h)) / (12 * h))
    sign = 1.0 if t - 2 * h < 0 else -1.0
    hs = sign * h
    vals = [float(f(t + k * hs)) for k in range(5)]
    return (-25 * vals[0] + 48 * vals[1] - 36 * vals[2] + 16 * vals[3] - 3 * vals[4]) / (12 * hs)
