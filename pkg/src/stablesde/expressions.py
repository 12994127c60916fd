"""Tiny expression language for drift and scale coefficients.

Model coefficients are written as strings like ``"alpha1*(x - alpha2)"``
or ``"exp(gamma*cos(x))"`` over the state symbol ``x`` and declared
parameter names.  The module provides a recursive-descent parser, a
numpy-vectorized evaluator, symbolic differentiation with light
constant folding, and a canonical printer whose output re-parses to a
structurally identical tree.

Grammar (binary operators left-associative except ``^``)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``-x^2`` means ``-(x^2)`` and ``2^3^2`` means ``2^(3^2)``.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EvaluationError,
    ExpressionParseError,
    UndeclaredIdentifierError,
)

__all__ = [
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ModelSpec",
    "ThetaVector",
    "ValidationReport",
    "STATE_VAR",
    "FUNCTIONS",
    "parse_expr",
    "eval_expr",
    "diff_expr",
    "print_expr",
    "validate_model",
]

STATE_VAR = "x"
FUNCTIONS = ("exp", "log", "cos", "sin", "tanh", "sqrt", "abs")


@dataclass(frozen=True)
class Expr:
    """Base class of expression nodes; compare structurally, ignore spans."""


@dataclass(frozen=True)
class Const(Expr):
    value: float
    span: tuple[int, int] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Var(Expr):
    name: str
    span: tuple[int, int] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # 'neg' or a function name
    arg: Expr
    span: tuple[int, int] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr
    span: tuple[int, int] | None = field(default=None, compare=False)


# ---------------------------------------------------------------------------
# Parsing.
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.lastgroup is None:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            raise ExpressionParseError(
                f"unexpected character {stripped[0]!r}",
                offset=len(src) - len(stripped),
            )
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, allowed: frozenset[str] | None):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExpressionParseError(f"expected {op!r}", offset=off)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionParseError(f"unexpected token {text!r}", offset=off)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, text, off = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.term()
                node = Binary(text, node, rhs, span=(_start(node), _end(rhs)))
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            kind, text, off = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.unary()
                node = Binary(text, node, rhs, span=(_start(node), _end(rhs)))
            else:
                return node

    def unary(self) -> Expr:
        kind, text, off = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            arg = self.unary()
            # A negated literal is a negative constant, matching what the
            # printer emits for folded constants.
            if isinstance(arg, Const):
                return Const(-arg.value, span=(off, _end(arg)))
            return Unary("neg", arg, span=(off, _end(arg)))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            expo = self.unary()
            return Binary("^", base, expo, span=(_start(base), _end(expo)))
        return base

    def atom(self) -> Expr:
        kind, text, off = self.advance()
        if kind == "num":
            return Const(float(text), span=(off, off + len(text)))
        if kind == "name":
            nk, nt, noff = self.peek()
            if nk == "op" and nt == "(":
                if text not in FUNCTIONS:
                    raise ExpressionParseError(
                        f"unknown function {text!r}", offset=off
                    )
                self.advance()
                arg = self.expr()
                closing = self.expect_op(")")
                return Unary(text, arg, span=(off, closing[2] + 1))
            if text in FUNCTIONS:
                raise ExpressionParseError(
                    f"function {text!r} requires an argument list", offset=off
                )
            if self.allowed is not None and text not in self.allowed:
                raise UndeclaredIdentifierError(text, offset=off)
            return Var(text, span=(off, off + len(text)))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionParseError(f"unexpected token {text or 'end of input'!r}", offset=off)


def _start(node: Expr) -> int:
    return node.span[0] if node.span else 0


def _end(node: Expr) -> int:
    return node.span[1] if node.span else 0


def parse_expr(src: str, allowed_names=None) -> Expr:
    """Parse an expression string into an AST.

    Parameters
    ----------
    src : str
        Expression source text.
    allowed_names : iterable of str, optional
        If given, every variable must belong to this set; unknown names
        raise :class:`UndeclaredIdentifierError` with their offset.
    """
    allowed = None if allowed_names is None else frozenset(allowed_names)
    return _Parser(src, allowed).parse()


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------


def _check_finite(value, op: str, span):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite result in {op!r}", span=span)
    return value


def eval_expr(ast: Expr, bindings: dict):
    """Evaluate an AST over scalar or numpy-array bindings.

    Domain violations (log of a nonpositive value, division by zero,
    square root of a negative, fractional power of a negative base) and
    overflow raise :class:`EvaluationError` carrying the source span of
    the offending node.
    """
    if isinstance(ast, Const):
        return ast.value
    if isinstance(ast, Var):
        try:
            return bindings[ast.name]
        except KeyError:
            raise UndeclaredIdentifierError(ast.name) from None
    if isinstance(ast, Unary):
        arg = eval_expr(ast.arg, bindings)
        if ast.op == "neg":
            return -arg
        if ast.op == "log":
            if np.any(np.asarray(arg) <= 0.0):
                raise EvaluationError("log of a nonpositive value", span=ast.span)
            return np.log(arg)
        if ast.op == "sqrt":
            if np.any(np.asarray(arg) < 0.0):
                raise EvaluationError("sqrt of a negative value", span=ast.span)
            return np.sqrt(arg)
        if ast.op == "exp":
            with np.errstate(over="ignore"):
                return _check_finite(np.exp(arg), "exp", ast.span)
        if ast.op == "cos":
            return np.cos(arg)
        if ast.op == "sin":
            return np.sin(arg)
        if ast.op == "tanh":
            return np.tanh(arg)
        if ast.op == "abs":
            return np.abs(arg)
        raise EvaluationError(f"unknown unary op {ast.op!r}", span=ast.span)
    if isinstance(ast, Binary):
        left = eval_expr(ast.left, bindings)
        right = eval_expr(ast.right, bindings)
        if ast.op == "+":
            return left + right
        if ast.op == "-":
            return left - right
        if ast.op == "*":
            return left * right
        if ast.op == "/":
            if np.any(np.asarray(right) == 0.0):
                raise EvaluationError("division by zero", span=ast.span)
            with np.errstate(over="ignore"):
                return _check_finite(left / right, "/", ast.span)
        if ast.op == "^":
            base = np.asarray(left, dtype=float)
            expo = np.asarray(right, dtype=float)
            if np.any((base < 0.0) & (expo != np.floor(expo))):
                raise EvaluationError(
                    "fractional power of a negative base", span=ast.span
                )
            if np.any((base == 0.0) & (expo < 0.0)):
                raise EvaluationError("zero raised to a negative power", span=ast.span)
            with np.errstate(over="ignore"):
                out = _check_finite(np.power(base, expo), "^", ast.span)
            return float(out) if out.ndim == 0 else out
        raise EvaluationError(f"unknown binary op {ast.op!r}", span=ast.span)
    raise TypeError(f"not an expression node: {ast!r}")


# ---------------------------------------------------------------------------
# Differentiation with light constant folding.
# ---------------------------------------------------------------------------


def _is_const(node: Expr, value: float | None = None) -> bool:
    return isinstance(node, Const) and (value is None or node.value == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("-", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Const(1.0)
    return Binary("^", a, b)


def diff_expr(ast: Expr, name: str) -> Expr:
    """Symbolic derivative of an AST with respect to a variable name.

    The result is lightly folded (zero and one elimination, constant
    arithmetic) but not otherwise simplified.  The derivative of
    ``abs`` is represented as ``arg/abs(arg)`` times the inner
    derivative, so evaluating it at the kink raises a division error.
    """
    if isinstance(ast, Const):
        return Const(0.0)
    if isinstance(ast, Var):
        return Const(1.0 if ast.name == name else 0.0)
    if isinstance(ast, Unary):
        du = diff_expr(ast.arg, name)
        u = ast.arg
        if ast.op == "neg":
            return _neg(du)
        if ast.op == "exp":
            return _mul(du, Unary("exp", u))
        if ast.op == "log":
            return _div(du, u)
        if ast.op == "cos":
            return _neg(_mul(du, Unary("sin", u)))
        if ast.op == "sin":
            return _mul(du, Unary("cos", u))
        if ast.op == "tanh":
            return _mul(du, _sub(Const(1.0), _pow(Unary("tanh", u), Const(2.0))))
        if ast.op == "sqrt":
            return _div(du, _mul(Const(2.0), Unary("sqrt", u)))
        if ast.op == "abs":
            return _mul(du, _div(u, Unary("abs", u)))
        raise ValueError(f"unknown unary op {ast.op!r}")
    if isinstance(ast, Binary):
        da = diff_expr(ast.left, name)
        db = diff_expr(ast.right, name)
        a, b = ast.left, ast.right
        if ast.op == "+":
            return _add(da, db)
        if ast.op == "-":
            return _sub(da, db)
        if ast.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if ast.op == "/":
            return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))
        if ast.op == "^":
            if isinstance(b, Const):
                return _mul(_mul(b, _pow(a, Const(b.value - 1.0))), da)
            if _is_const(da, 0.0):
                return _mul(_mul(_pow(a, b), Unary("log", a)), db)
            # General case: a^b * (db log a + b da / a).
            return _mul(
                _pow(a, b),
                _add(_mul(db, Unary("log", a)), _div(_mul(b, da), a)),
            )
        raise ValueError(f"unknown binary op {ast.op!r}")
    raise TypeError(f"not an expression node: {ast!r}")


# ---------------------------------------------------------------------------
# Printing.
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    if isinstance(node, Const) and node.value < 0:
        return _PREC["neg"]
    return 5


def print_expr(ast: Expr) -> str:
    """Render an AST canonically; parse_expr(print_expr(t)) equals t."""
    if isinstance(ast, Const):
        return repr(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Unary):
        if ast.op == "neg":
            inner = print_expr(ast.arg)
            if _prec(ast.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{ast.op}({print_expr(ast.arg)})"
    if isinstance(ast, Binary):
        p = _PREC[ast.op]
        left = print_expr(ast.left)
        right = print_expr(ast.right)
        if ast.op == "^":
            if _prec(ast.left) <= p:
                left = f"({left})"
            # The exponent slot parses at unary level, so only lower
            # precedence binaries (which cannot appear there) need parens.
            if isinstance(ast.right, Binary) and ast.right.op != "^":
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(ast.left) < p:
            left = f"({left})"
        if _prec(ast.right) <= p:
            right = f"({right})"
        return f"{left} {ast.op} {right}"
    raise TypeError(f"not an expression node: {ast!r}")


# ---------------------------------------------------------------------------
# Model specification.
# ---------------------------------------------------------------------------


class ThetaVector:
    """Parameter vector split into drift (alpha) and scale (gamma) blocks."""

    __slots__ = ("alpha", "gamma")

    def __init__(self, alpha, gamma):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        if alpha.ndim != 1 or gamma.ndim != 1:
            raise ValueError("alpha and gamma must be one-dimensional")
        if gamma.size < 1:
            raise ValueError("the scale block must have at least one parameter")
        alpha.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    def __setattr__(self, name, value):
        raise AttributeError("ThetaVector is immutable")

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.gamma])

    @classmethod
    def from_full(cls, vec, p_alpha: int) -> "ThetaVector":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:p_alpha], vec[p_alpha:])

    def __eq__(self, other):
        return (
            isinstance(other, ThetaVector)
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.gamma, other.gamma)
        )

    def __repr__(self):
        return f"ThetaVector(alpha={self.alpha.tolist()}, gamma={self.gamma.tolist()})"


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple[str, ...]


class ModelSpec:
    """Drift/scale model over the state symbol ``x``.

    Parameters
    ----------
    drift, scale : str or Expr
        Coefficient expressions; the scale must be strictly positive on
        the region explored (checked by :func:`validate_model`).
    alpha_names : sequence of str
        Drift parameter names in vector order (may be empty).
    gamma_names : sequence of str
        Scale parameter names in vector order (at least one).
    bounds : mapping
        name -> (low, high) finite box for every parameter.
    """

    def __init__(self, drift, scale, alpha_names, gamma_names, bounds):
        alpha_names = tuple(alpha_names)
        gamma_names = tuple(gamma_names)
        if len(gamma_names) < 1:
            raise ValueError("at least one scale parameter is required")
        names = alpha_names + gamma_names
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be distinct")
        if STATE_VAR in names:
            raise ValueError(f"{STATE_VAR!r} is reserved for the state")
        for n in names:
            if n in FUNCTIONS:
                raise ValueError(f"parameter name {n!r} collides with a function")
        allowed = set(names) | {STATE_VAR}
        self.drift = parse_expr(drift, allowed) if isinstance(drift, str) else drift
        self.scale = parse_expr(scale, allowed) if isinstance(scale, str) else scale
        self.alpha_names = alpha_names
        self.gamma_names = gamma_names
        bounds = {str(k): (float(v[0]), float(v[1])) for k, v in dict(bounds).items()}
        missing = [n for n in names if n not in bounds]
        if missing:
            raise ValueError(f"missing bounds for parameters: {missing}")
        for n, (lo, hi) in bounds.items():
            if n not in names:
                raise ValueError(f"bounds given for unknown parameter {n!r}")
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {n!r} must be a finite interval")
        self.bounds = bounds

    @property
    def p_alpha(self) -> int:
        return len(self.alpha_names)

    @property
    def p_gamma(self) -> int:
        return len(self.gamma_names)

    @property
    def dim(self) -> int:
        return self.p_alpha + self.p_gamma

    @property
    def names(self) -> tuple[str, ...]:
        return self.alpha_names + self.gamma_names

    def theta(self, alpha=(), gamma=()) -> ThetaVector:
        th = ThetaVector(np.asarray(alpha, float).ravel(), np.asarray(gamma, float).ravel())
        if th.alpha.size != self.p_alpha or th.gamma.size != self.p_gamma:
            raise ValueError("parameter blocks do not match the model layout")
        return th

    def split(self, vec) -> ThetaVector:
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {vec.size}")
        return ThetaVector.from_full(vec, self.p_alpha)

    def bindings(self, theta: ThetaVector, x) -> dict:
        b = {STATE_VAR: x}
        for n, v in zip(self.alpha_names, theta.alpha):
            b[n] = float(v)
        for n, v in zip(self.gamma_names, theta.gamma):
            b[n] = float(v)
        return b

    def drift_at(self, theta: ThetaVector, x):
        return eval_expr(self.drift, self.bindings(theta, x))

    def scale_at(self, theta: ThetaVector, x):
        return eval_expr(self.scale, self.bindings(theta, x))

    def in_bounds(self, theta: ThetaVector) -> bool:
        for n, v in zip(self.names, theta.full):
            lo, hi = self.bounds[n]
            if not (lo <= v <= hi):
                return False
        return True

    def box_center(self) -> ThetaVector:
        c = [0.5 * (self.bounds[n][0] + self.bounds[n][1]) for n in self.names]
        return self.split(np.array(c))

    def __eq__(self, other):
        return (
            isinstance(other, ModelSpec)
            and self.drift == other.drift
            and self.scale == other.scale
            and self.alpha_names == other.alpha_names
            and self.gamma_names == other.gamma_names
            and self.bounds == other.bounds
        )

    def __repr__(self):
        return (
            f"ModelSpec(drift={print_expr(self.drift)!r}, "
            f"scale={print_expr(self.scale)!r}, alpha={self.alpha_names}, "
            f"gamma={self.gamma_names})"
        )


def validate_model(model: ModelSpec, x_probes=None, max_corners: int = 64) -> ValidationReport:
    """Probe a model for scale positivity and evaluation health.

    Evaluates drift and scale on a state grid crossed with the box
    center and a deterministic subset of box corners; any nonpositive
    or non-finite scale, non-finite drift, or evaluation error is
    recorded as a violation.
    """
    if x_probes is None:
        x_probes = np.linspace(-10.0, 10.0, 101)
    x_probes = np.asarray(x_probes, dtype=float)

    thetas = [model.box_center()]
    corner_iter = itertools.product(*((model.bounds[n][0], model.bounds[n][1]) for n in model.names))
    for corner in itertools.islice(corner_iter, max_corners):
        thetas.append(model.split(np.array(corner)))

    violations: list[str] = []
    for th in thetas:
        label = np.round(th.full, 6).tolist()
        try:
            a = np.broadcast_to(np.asarray(model.drift_at(th, x_probes), dtype=float), x_probes.shape)
            c = np.broadcast_to(np.asarray(model.scale_at(th, x_probes), dtype=float), x_probes.shape)
        except (EvaluationError, UndeclaredIdentifierError) as exc:
            violations.append(f"theta={label}: {exc}")
            continue
        bad_scale = ~(np.isfinite(c) & (c > 0.0))
        if np.any(bad_scale):
            xs = x_probes[bad_scale][:3].tolist()
            violations.append(
                f"theta={label}: scale not strictly positive near x={xs}"
            )
        bad_drift = ~np.isfinite(a)
        if np.any(bad_drift):
            xs = x_probes[bad_drift][:3].tolist()
            violations.append(f"theta={label}: drift not finite near x={xs}")
    return ValidationReport(passed=not violations, violations=tuple(violations))
