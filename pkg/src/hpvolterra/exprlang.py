"""
A small expression language for defining kernels and right-hand sides in config files.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?          # right associative
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``s``, ``t``, ``u`` and ``x``; ``pi`` is a constant. Functions are
``sin cos exp log sqrt abs erf`` and ``piecewise(c, a, b)``, which yields ``a``
where ``c >= 0`` and ``b`` elsewhere.

Evaluation accepts scalars or numpy arrays for the bindings and broadcasts.
Domain violations raise :class:`DomainError` instead of producing NaN.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = frozenset({"s", "t", "u", "x"})
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1, "erf": 1, "piecewise": 3}


class ExprError(ValueError):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownNameError(ExprError):
    pass


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError):
    pass


class NotDifferentiableError(ExprError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            start = len(text) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind != "op":
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", off)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            arg = self.unary()
            return Neg(arg) if val == "-" else arg
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownNameError(f"unknown function {val!r} at byte offset {off}")
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ExprSyntaxError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", off
                    )
                return Call(val, tuple(args))
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            if val in VARIABLES:
                return Var(val)
            raise UnknownNameError(f"unknown name {val!r} at byte offset {off}")
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", off)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise TypeError("expression must be a string")
    return _Parser(text).parse()


# ---------------------------------------------------------------- printing


def to_string(e: Expr) -> str:
    """Render ``e`` as text that parses back to an equivalent tree."""
    if isinstance(e, Num):
        r = repr(float(e.value))
        return f"({r})" if e.value < 0 else r
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    return f"{e.func}({', '.join(to_string(a) for a in e.args)})"


def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Neg):
        return free_variables(e.arg)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    return frozenset().union(*(free_variables(a) for a in e.args))


# ---------------------------------------------------------------- evaluation

_erf = np.vectorize(math.erf, otypes=[float])

_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "erf": _erf,
}


def _check(value, what: str):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"non-finite result in {what}")
    return value


def _eval(e: Expr, env: Mapping[str, np.ndarray]):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariableError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, BinOp):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return _check(a + b, "+")
        if e.op == "-":
            return _check(a - b, "-")
        if e.op == "*":
            return _check(a * b, "*")
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError("division by zero")
            return _check(a / b, "/")
        a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if np.any((a_arr < 0) & (b_arr != np.round(b_arr))):
            raise DomainError("negative base raised to a non-integer power")
        if np.any((a_arr == 0) & (b_arr < 0)):
            raise DomainError("zero raised to a negative power")
        with np.errstate(over="ignore"):
            return _check(np.power(a_arr, b_arr), "^")
    if e.func == "piecewise":
        return _piecewise(e, env)
    arg = _eval(e.args[0], env)
    if e.func == "log":
        if np.any(np.asarray(arg) <= 0):
            raise DomainError("log of a non-positive value")
        return np.log(arg)
    if e.func == "sqrt":
        if np.any(np.asarray(arg) < 0):
            raise DomainError("sqrt of a negative value")
        return np.sqrt(arg)
    with np.errstate(over="ignore"):
        return _check(_UNARY[e.func](arg), e.func)


def _piecewise(e: Call, env):
    cond = np.asarray(_eval(e.args[0], env))
    if cond.ndim == 0:
        return _eval(e.args[1] if cond >= 0 else e.args[2], env)
    # evaluate each branch only where it is selected, so the other branch may be out of domain
    shape = np.broadcast_shapes(cond.shape, *(np.shape(v) for v in env.values()))
    full = {k: np.broadcast_to(v, shape) for k, v in env.items()}
    mask = np.broadcast_to(cond >= 0, shape)
    out = np.empty(shape)
    for branch, sel in ((e.args[1], mask), (e.args[2], ~mask)):
        if np.any(sel):
            out[sel] = np.broadcast_to(_eval(branch, {k: v[sel] for k, v in full.items()}), (int(sel.sum()),))
    return out


def evaluate(e: Expr, bindings: Mapping[str, object]):
    """Evaluate ``e`` with variables taken from ``bindings``.

    Returns a float when every binding is scalar, otherwise a numpy array of the
    broadcast shape.
    """
    env = {k: np.asarray(v, dtype=float) if np.ndim(v) else float(v) for k, v in bindings.items()}
    missing = free_variables(e) - env.keys()
    if missing:
        raise UnboundVariableError(f"unbound variable(s): {', '.join(sorted(missing))}")
    out = _eval(e, env)
    out = _check(out, "expression")
    shape = np.broadcast_shapes(*(np.shape(env[k]) for k in free_variables(e))) if free_variables(e) else ()
    if shape:
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
    return float(out)


# ---------------------------------------------------------------- differentiation


def depends_on(e: Expr, var: str) -> bool:
    return var in free_variables(e)


def _add(a, b):
    if isinstance(a, Num) and a.value == 0:
        return b
    if isinstance(b, Num) and b.value == 0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if isinstance(b, Num) and b.value == 0:
        return a
    if isinstance(a, Num) and a.value == 0:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a, b):
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Num):
            if x.value == 0:
                return Num(0.0)
            if x.value == 1:
                return y
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a, b):
    if isinstance(a, Num) and a.value == 0:
        return Num(0.0)
    if isinstance(b, Num) and b.value == 1:
        return a
    return BinOp("/", a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    return Neg(a)


def _pow(a, b):
    if isinstance(b, Num) and b.value == 1:
        return a
    if isinstance(b, Num) and b.value == 0:
        return Num(1.0)
    return BinOp("^", a, b)


def derivative_u(e: Expr, var: str = "u") -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``var`` (default ``u``)."""
    if not depends_on(e, var):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0)
    if isinstance(e, Neg):
        return _neg(derivative_u(e.arg, var))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = derivative_u(a, var), derivative_u(b, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if e.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Num(2.0)))
        if not depends_on(b, var):
            return _mul(_mul(b, _pow(a, _sub(b, Num(1.0)))), da)
        # a^b = exp(b log a)
        return _mul(e, _add(_mul(db, Call("log", (a,))), _div(_mul(b, da), a)))
    a = e.args[0]
    if e.func == "piecewise":
        if depends_on(a, var):
            raise NotDifferentiableError("piecewise condition depends on u")
        return Call("piecewise", (a, derivative_u(e.args[1], var), derivative_u(e.args[2], var)))
    da = derivative_u(a, var)
    if e.func == "sin":
        return _mul(Call("cos", (a,)), da)
    if e.func == "cos":
        return _mul(_neg(Call("sin", (a,))), da)
    if e.func == "exp":
        return _mul(e, da)
    if e.func == "log":
        return _div(da, a)
    if e.func == "sqrt":
        return _div(da, _mul(Num(2.0), e))
    if e.func == "erf":
        gauss = Call("exp", (_neg(_pow(a, Num(2.0))),))
        return _mul(_mul(Num(2.0 / math.sqrt(math.pi)), gauss), da)
    raise NotDifferentiableError(f"{e.func} is not differentiable in u")
