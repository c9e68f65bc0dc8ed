"""Small expression language for problem coefficients.

All coefficient functions (drift, diffusion, drivers, terminal payoffs,
switching costs) are written as strings in this language, so problems are
data rather than code.  Grammar (EBNF):

    expression  = additive ;
    additive    = multiplicative { ("+" | "-") multiplicative } ;
    multiplicative = unary { ("*" | "/") unary } ;
    unary       = "-" unary | power ;
    power       = primary [ "^" unary ] ;            (* right associative *)
    primary     = NUMBER | VARIABLE | FUNC "(" expression { "," expression } ")"
                | "(" expression ")" ;

Functions: exp, log, sin, cos, abs, sqrt, pos (max(u, 0)), neg (max(-u, 0)),
and the variadic min/max.  Variables come from the reserved alphabet
{t, x1..xd, y1..ym, z11..zmd}; which of them are admissible depends on the
slot the expression is parsed for (a switching cost may use t and x only, a
terminal payoff x only, a driver anything).  The z symbols are indexed by a
component digit then a coordinate digit, which caps d and m at 9.

Evaluation is pure and total except for division by zero and log/sqrt/power
leaving the real domain, which raise DomainError.  Environments may bind
numpy arrays; all operators broadcast, so one AST walk evaluates a whole
path ensemble.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, InadmissibleVariable, UnboundVariable

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Bin",
    "Call",
    "Slot",
    "parse",
    "evaluate",
    "variables",
    "to_string",
    "finite_diff",
    "finite_diff_mixed",
]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Bin, Call]

_UNARY_FUNCS = ("exp", "log", "sin", "cos", "abs", "sqrt", "pos", "neg")
_VARIADIC_FUNCS = ("min", "max")
FUNCTIONS = _UNARY_FUNCS + _VARIADIC_FUNCS


# ---------------------------------------------------------------------------
# Slots: which reserved symbols an expression may use
# ---------------------------------------------------------------------------


class Slot:
    """Declares the admissible variable set for one coefficient kind."""

    def __init__(self, kind: str, d: int = 0, m: int = 0):
        if d > 9 or m > 9:
            raise ValueError("reserved z-symbols are single-digit indexed; d and m must be <= 9")
        self.kind = kind
        self.d = d
        self.m = m

    @classmethod
    def dynamics(cls, d: int) -> "Slot":
        """Drift / diffusion entries: functions of (t, x)."""
        return cls("dynamics", d=d)

    @classmethod
    def driver(cls, d: int, m: int) -> "Slot":
        """Driver f_i: may reference t, x, every y and every z."""
        return cls("driver", d=d, m=m)

    @classmethod
    def terminal(cls, d: int) -> "Slot":
        """Terminal payoff h_i: functions of x only."""
        return cls("terminal", d=d)

    @classmethod
    def cost(cls, d: int) -> "Slot":
        """Switching cost g_ij: functions of (t, x)."""
        return cls("cost", d=d)

    @classmethod
    def free(cls) -> "Slot":
        """No restriction; used by tests and generic tooling."""
        return cls("free", d=9, m=9)

    def admits(self, name: str) -> bool:
        if self.kind == "free":
            return _parse_symbol(name, 9, 9) is not None
        info = _parse_symbol(name, self.d, self.m)
        if info is None:
            return False
        family = info[0]
        if self.kind == "terminal":
            return family == "x"
        if self.kind in ("dynamics", "cost"):
            return family in ("t", "x")
        return True  # driver

    def __str__(self) -> str:
        return self.kind


def _parse_symbol(name: str, d: int, m: int):
    """Classify a reserved symbol; returns (family, indices) or None."""
    if name == "t":
        return ("t", ())
    mt = re.fullmatch(r"x([1-9])", name)
    if mt and int(mt.group(1)) <= d:
        return ("x", (int(mt.group(1)),))
    mt = re.fullmatch(r"y([1-9])", name)
    if mt and int(mt.group(1)) <= m:
        return ("y", (int(mt.group(1)),))
    mt = re.fullmatch(r"z([1-9])([1-9])", name)
    if mt and int(mt.group(1)) <= m and int(mt.group(2)) <= d:
        return ("z", (int(mt.group(1)), int(mt.group(2))))
    return None


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        mt = _TOKEN_RE.match(source, pos)
        if mt is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", pos)
        if mt.lastgroup == "number":
            tokens.append(("number", float(mt.group("number")), mt.start("number")))
        elif mt.lastgroup == "ident":
            tokens.append(("ident", mt.group("ident"), mt.start("ident")))
        else:
            tokens.append(("op", mt.group("op"), mt.start("op")))
        pos = mt.end()
    tokens.append(("end", None, len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, slot: Slot):
        self.tokens = tokens
        self.slot = slot
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, value, pos = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected {op!r}", pos, expected=op)
        return self.advance()

    def parse_expression(self) -> Expr:
        node = self.parse_multiplicative()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in ("+", "-"):
                self.advance()
                node = Bin(value, node, self.parse_multiplicative())
            else:
                return node

    def parse_multiplicative(self) -> Expr:
        node = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in ("*", "/"):
                self.advance()
                node = Bin(value, node, self.parse_unary())
            else:
                return node

    def parse_unary(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            # -u is represented as 0 - u so the AST stays five-operator.
            return Bin("-", Num(0.0), self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_primary()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return Bin("^", base, self.parse_unary())
        return base

    def parse_primary(self) -> Expr:
        kind, value, pos = self.advance()
        if kind == "number":
            return Num(value)
        if kind == "ident":
            if value in FUNCTIONS:
                self.expect_op("(")
                args = [self.parse_expression()]
                while True:
                    k, v, _ = self.peek()
                    if k == "op" and v == ",":
                        self.advance()
                        args.append(self.parse_expression())
                    else:
                        break
                self.expect_op(")")
                if value in _UNARY_FUNCS and len(args) != 1:
                    raise ExprSyntaxError(f"{value} takes exactly one argument", pos)
                if value in _VARIADIC_FUNCS and len(args) < 2:
                    raise ExprSyntaxError(f"{value} takes at least two arguments", pos)
                return Call(value, tuple(args))
            if not self.slot.admits(value):
                raise InadmissibleVariable(value, str(self.slot))
            return Var(value)
        if kind == "op" and value == "(":
            node = self.parse_expression()
            self.expect_op(")")
            return node
        raise ExprSyntaxError("expected a number, variable or '('", pos)


def parse(source: str, slot: Slot) -> Expr:
    """Parse `source` against the slot's admissible alphabet.

    Raises ExprSyntaxError on malformed input and InadmissibleVariable when a
    reserved symbol is used outside its slot.
    """
    parser = _Parser(_tokenize(source), slot)
    node = parser.parse_expression()
    kind, _, pos = parser.peek()
    if kind != "end":
        raise ExprSyntaxError("unexpected trailing input", pos)
    return node


def variables(e: Expr) -> set:
    """Set of variable names occurring in the expression."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Bin):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= variables(a)
        return out
    return set()


# ---------------------------------------------------------------------------
# Evaluation (scalars and numpy arrays share one code path)
# ---------------------------------------------------------------------------


def _any(condition) -> bool:
    return bool(np.any(condition))


def evaluate(e: Expr, env: dict):
    """Value of the expression at `env`; env may bind scalars or arrays.

    Array bindings broadcast through every operator, so a single call
    evaluates the expression on an ensemble of states.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(e.name) from None
    if isinstance(e, Bin):
        left = evaluate(e.left, env)
        right = evaluate(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            if _any(right == 0):
                raise DomainError("division by zero")
            return left / right
        # power: reject 0^negative and negative^non-integer, which leave R
        if _any((left == 0) & (right < 0)):
            raise DomainError("zero raised to a negative power")
        if _any((left < 0) & (right != np.floor(right))):
            raise DomainError("negative base with non-integer exponent")
        with np.errstate(over="ignore"):
            return np.power(left, right)
    func, args = e.func, [evaluate(a, env) for a in e.args]
    if func == "exp":
        with np.errstate(over="ignore"):
            return np.exp(args[0])
    if func == "log":
        if _any(args[0] <= 0):
            raise DomainError("log of a non-positive value")
        return np.log(args[0])
    if func == "sin":
        return np.sin(args[0])
    if func == "cos":
        return np.cos(args[0])
    if func == "abs":
        return np.abs(args[0])
    if func == "sqrt":
        if _any(args[0] < 0):
            raise DomainError("sqrt of a negative value")
        return np.sqrt(args[0])
    if func == "pos":
        return np.maximum(args[0], 0)
    if func == "neg":
        return np.maximum(np.negative(args[0]), 0)
    if func == "min":
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    # max
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


# ---------------------------------------------------------------------------
# Pretty printer (canonical form; print-parse-print is a fixed point)
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _node_prec(e: Expr) -> int:
    if isinstance(e, Bin):
        if e.op == "-" and isinstance(e.left, Num) and e.left.value == 0.0:
            return 3  # printed as unary minus
        return _PREC[e.op]
    return 5


def to_string(e: Expr) -> str:
    """Canonical text form of the AST."""
    if isinstance(e, Num):
        if e.value == int(e.value) and abs(e.value) < 1e16:
            return str(int(e.value))
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_string(a) for a in e.args)})"
    if e.op == "-" and isinstance(e.left, Num) and e.left.value == 0.0:
        inner = to_string(e.right)
        if _node_prec(e.right) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    prec = _PREC[e.op]
    left = to_string(e.left)
    right = to_string(e.right)
    if e.op == "^":
        # right associative; the base must bind at least as tight as an atom
        if _node_prec(e.left) <= prec:
            left = f"({left})"
        if _node_prec(e.right) < 3:
            right = f"({right})"
    else:
        if _node_prec(e.left) < prec:
            left = f"({left})"
        # - and / are left associative: parenthesise right children of equal precedence
        if _node_prec(e.right) < prec or (_node_prec(e.right) == prec and e.op in ("-", "/")):
            right = f"({right})"
        if e.op in ("*", "/"):
            # parenthesise unary minus on either side so the printed form is
            # independent of how a product chain is associated
            if _node_prec(e.left) == 3:
                left = f"({left})"
            if _node_prec(e.right) == 3:
                right = f"({right})"
    return f"{left} {e.op} {right}"


# ---------------------------------------------------------------------------
# Numeric differentiation
# ---------------------------------------------------------------------------


def _step(point: dict, var: str, h: float | None) -> float:
    if h is not None:
        return h
    return 1e-5 * max(1.0, abs(float(point.get(var, 0.0))))


def _shift(point: dict, var: str, delta: float) -> dict:
    env = dict(point)
    env[var] = env[var] + delta
    return env


def finite_diff(e: Expr, var: str, point: dict, order: int = 1, h: float | None = None):
    """Central-difference derivative of the expression at `point`.

    order 1: (e(+h) - e(-h)) / 2h;  order 2: (e(+h) - 2 e(0) + e(-h)) / h^2.
    The default step is 1e-5 * max(1, |coordinate|).
    """
    if var not in point:
        raise UnboundVariable(var)
    step = _step(point, var, h)
    if order == 1:
        return (evaluate(e, _shift(point, var, step)) - evaluate(e, _shift(point, var, -step))) / (
            2.0 * step
        )
    if order == 2:
        return (
            evaluate(e, _shift(point, var, step))
            - 2.0 * evaluate(e, point)
            + evaluate(e, _shift(point, var, -step))
        ) / (step * step)
    raise ValueError("order must be 1 or 2")


def finite_diff_mixed(e: Expr, var_a: str, var_b: str, point: dict, h: float | None = None):
    """Mixed second derivative via the standard four-point stencil."""
    if var_a == var_b:
        return finite_diff(e, var_a, point, order=2, h=h)
    ha = _step(point, var_a, h)
    hb = _step(point, var_b, h)
    pp = evaluate(e, _shift(_shift(point, var_a, ha), var_b, hb))
    pm = evaluate(e, _shift(_shift(point, var_a, ha), var_b, -hb))
    mp = evaluate(e, _shift(_shift(point, var_a, -ha), var_b, hb))
    mm = evaluate(e, _shift(_shift(point, var_a, -ha), var_b, -hb))
    return (pp - pm - mp + mm) / (4.0 * ha * hb)


def finite_diff_time_bounded(
    e: Expr, point: dict, t_lo: float, t_hi: float, h: float | None = None
):
    """d/dt with a second-order one-sided stencil when t is near a boundary.

    Keeps every evaluation inside [t_lo, t_hi]; used when the coefficient is
    only defined on a bounded time interval.
    """
    t = float(point["t"])
    step = _step(point, "t", h)
    if t - step >= t_lo and t + step <= t_hi:
        return finite_diff(e, "t", point, order=1, h=step)
    if t + 2 * step <= t_hi:  # forward one-sided
        f0 = evaluate(e, point)
        f1 = evaluate(e, _shift(point, "t", step))
        f2 = evaluate(e, _shift(point, "t", 2 * step))
        return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step)
    # backward one-sided
    f0 = evaluate(e, point)
    f1 = evaluate(e, _shift(point, "t", -step))
    f2 = evaluate(e, _shift(point, "t", -2 * step))
    return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * step)


def is_constant_zero(e: Expr) -> bool:
    """True when the expression is literally the constant 0."""
    return isinstance(e, Num) and e.value == 0.0


def evaluate_scalar(e: Expr, env: dict) -> float:
    """Scalar evaluation; a convenience wrapper returning a Python float."""
    out = evaluate(e, env)
    arr = np.asarray(out, dtype=float)
    if arr.shape != ():
        raise ValueError("expression evaluated to an array in a scalar context")
    return float(arr)


def eval_math(source: str, env: dict | None = None) -> float:
    """Parse-and-evaluate helper for free-form scalar expressions."""
    return evaluate_scalar(parse(source, Slot.free()), dict(env or {}))
