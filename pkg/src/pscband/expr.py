"""Expression language for analytic metric components and conformal factors.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := unary ("^" factor)?
    unary  := "-" unary | atom
    atom   := number | ident | ident "(" expr ")" | "(" expr ")"

``^`` is right-associative and unary minus binds tighter than the base of
``^``, so ``-2^2`` is ``(-2)^2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x1", "x2", "x3", "xi", "t")
FUNCTIONS = ("sin", "cos", "exp", "log", "tanh", "sqrt")
CONSTANTS = {"pi": math.pi}


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DomainError(ArithmeticError):
    """Evaluation left the domain of a function (log of nonpositive etc.)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Num | Var | Const | Neg | BinOp | Call

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))")


def _tokenize(source: str):
    pos = 0
    tokens = []
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            start = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, val, pos = self.take()
        if val != text:
            raise ExprSyntaxError(f"expected {text!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.factor())
        return e

    def factor(self) -> Expr:
        base = self.unary()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "id":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in VARIABLES:
                return Var(val)
            if val in CONSTANTS:
                return Const(val)
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse(source: str) -> Expr:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


def to_source(e: Expr) -> str:
    """Fully parenthesized source text; ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, (Var, Const)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        return variables(e.arg)
    return set()


def as_expr(e: Expr | str | float) -> Expr:
    if isinstance(e, str):
        return parse(e)
    if isinstance(e, (int, float)):
        return Num(float(e))
    return e


# --------------------------------------------------------------------------
# second-order forward-mode jets

class Jet:
    """Truncated Taylor jet ``(value, d1, d2)`` along one seeded direction.

    Components are floats or numpy arrays, so a whole grid is evaluated in
    one pass.
    """

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1=0.0, d2=0.0):
        self.v, self.d1, self.d2 = v, d1, d2

    @staticmethod
    def lift(x) -> "Jet":
        return x if isinstance(x, Jet) else Jet(x, 0.0, 0.0)

    def __add__(self, other):
        o = Jet.lift(other)
        return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = Jet.lift(other)
        return Jet(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return Jet.lift(other) - self

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __mul__(self, other):
        o = Jet.lift(other)
        return Jet(self.v * o.v, self.d1 * o.v + self.v * o.d1,
                   self.d2 * o.v + 2 * self.d1 * o.d1 + self.v * o.d2)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Jet.lift(other)
        if np.any(np.asarray(o.v) == 0):
            raise DomainError("division by zero")
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return Jet.lift(other) / self

    def reciprocal(self):
        inv = 1.0 / self.v
        return _chain(self, inv, -inv**2, 2 * inv**3)

    def powc(self, c: float):
        """``self ** c`` for a constant exponent."""
        v = np.asarray(self.v)
        if float(c).is_integer():
            n = int(c)
            if n == 0:
                return Jet(np.ones_like(v) if v.ndim else 1.0, 0.0, 0.0)
            if n < 0 and np.any(v == 0):
                raise DomainError("zero raised to a negative power")
            p0 = v**n
            p1 = n * v ** (n - 1) if n != 1 else np.ones_like(v)
            p2 = n * (n - 1) * v ** (n - 2) if n not in (0, 1) else np.zeros_like(v)
            return _chain(self, p0, p1, p2)
        if np.any(np.real(v) <= 0):
            raise DomainError("non-integer power of a nonpositive base")
        return _chain(self, v**c, c * v ** (c - 1), c * (c - 1) * v ** (c - 2))

    def __pow__(self, other):
        if not isinstance(other, Jet):
            return self.powc(float(other))
        return jet_exp(other * jet_log(self))


def _chain(x: Jet, f0, f1, f2) -> Jet:
    return Jet(f0, f1 * x.d1, f2 * x.d1**2 + f1 * x.d2)


def jet_sin(x):
    s, c = np.sin(x.v), np.cos(x.v)
    return _chain(x, s, c, -s)


def jet_cos(x):
    s, c = np.sin(x.v), np.cos(x.v)
    return _chain(x, c, -s, -c)


def jet_exp(x):
    e = np.exp(x.v)
    return _chain(x, e, e, e)


def jet_log(x):
    if np.any(np.real(x.v) <= 0):
        raise DomainError("log of a nonpositive value")
    return _chain(x, np.log(x.v), 1.0 / x.v, -1.0 / x.v**2)


def jet_tanh(x):
    th = np.tanh(x.v)
    s = 1 - th**2
    return _chain(x, th, s, -2 * th * s)


def jet_sqrt(x):
    if np.any(np.real(x.v) < 0):
        raise DomainError("sqrt of a negative value")
    r = np.sqrt(x.v)
    if np.any(r == 0) and (np.any(np.asarray(x.d1) != 0) or np.any(np.asarray(x.d2) != 0)):
        raise DomainError("sqrt is not differentiable at 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        return _chain(x, r, 0.5 / r, -0.25 / r**3)


_JET_FUNCS = {"sin": jet_sin, "cos": jet_cos, "exp": jet_exp, "log": jet_log,
              "tanh": jet_tanh, "sqrt": jet_sqrt}


def _is_constant(e: Expr) -> bool:
    return not variables(e)


def eval_jet(e: Expr, env: dict) -> Jet:
    """Evaluate ``e`` with variables bound to jets (or plain numbers)."""
    if isinstance(e, Num):
        return Jet(e.value)
    if isinstance(e, Const):
        return Jet(CONSTANTS[e.name])
    if isinstance(e, Var):
        try:
            return Jet.lift(env[e.name])
        except KeyError:
            raise DomainError(f"variable {e.name!r} is not bound at this point") from None
    if isinstance(e, Neg):
        return -eval_jet(e.operand, env)
    if isinstance(e, Call):
        return _JET_FUNCS[e.func](eval_jet(e.arg, env))
    left = eval_jet(e.left, env)
    if e.op == "^" and _is_constant(e.right):
        c = eval_jet(e.right, env).v
        return left.powc(float(c))
    right = eval_jet(e.right, env)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if e.op == "/":
        return left / right
    return left**right


def evaluate(e: Expr, point: dict):
    return eval_jet(e, point).v


def eval_dual(e: Expr, point: dict, seed, order: int = 2):
    """Value and first/second derivatives along a seeded direction.

    ``seed`` is a variable name or a mapping ``{name: weight}``.
    Returns ``(value, d1, d2)``; with ``order=1``, ``d2`` is ``None``.
    """
    direction = {seed: 1.0} if isinstance(seed, str) else dict(seed)
    env = {name: Jet(val, direction.get(name, 0.0), 0.0) for name, val in point.items()}
    for name in direction:
        if name not in env:
            raise DomainError(f"seed variable {name!r} is not bound at this point")
    j = eval_jet(e, env)
    if order == 1:
        return j.v, j.d1, None
    if order != 2:
        raise ValueError("order must be 1 or 2")
    return j.v, j.d1, j.d2


def derivatives(e: Expr, point: dict, names: tuple[str, ...]):
    """Value, gradient and Hessian with respect to ``names``; exact.

    Mixed partials come from polarization of second directional derivatives:
    ``d_ij = (D^2_{e_i+e_j} - D^2_{e_i} - D^2_{e_j}) / 2``.
    Arrays in ``point`` may be of any common shape ``S``; results have shapes
    ``S``, ``S + (n,)``, ``S + (n, n)``.
    """
    n = len(names)
    pure = []
    value = None
    for name in names:
        v, d1, d2 = eval_dual(e, point, name)
        value = v
        pure.append((d1, d2))
    if value is None:
        value = evaluate(e, point)
    shape = np.broadcast_shapes(*[np.shape(v) for v in point.values()]) if point else ()
    dtype = np.result_type(value, *[a for p in pure for a in p], *point.values())
    value = np.broadcast_to(np.asarray(value, dtype=dtype), shape).copy()
    grad = np.zeros(shape + (n,), dtype=dtype)
    hess = np.zeros(shape + (n, n), dtype=dtype)
    for i in range(n):
        grad[..., i] = pure[i][0]
        hess[..., i, i] = pure[i][1]
    for i in range(n):
        for j in range(i + 1, n):
            _, _, dd = eval_dual(e, point, {names[i]: 1.0, names[j]: 1.0})
            hess[..., i, j] = hess[..., j, i] = 0.5 * (dd - hess[..., i, i] - hess[..., j, j])
    return value, grad, hess
