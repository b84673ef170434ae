"""Coefficient expression mini-language.

Grammar (precedence from loosest to tightest)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | 'r' | 'x1' .. 'xd'
             | FUNC '(' expr (',' expr)* ')'
             | '(' expr ')'

``r`` is the Euclidean norm of the point.  Functions: ``exp log sqrt abs sin
cos`` (one argument) and ``min max`` (two arguments).  ``-x^2`` parses as
``-(x^2)``.

Parsed expressions are immutable trees.  They evaluate vectorized over an
``(n, d)`` array of points (domain errors become ``nan``/``inf``), pointwise
with :class:`DomainError` on failure, and compile to the flat stack program
run by the compiled path kernels.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ExpressionError",
    "ExpressionSyntaxError",
    "ArityError",
    "UnknownIdentifierError",
    "DomainError",
    "Node",
    "Num",
    "Var",
    "Radius",
    "Neg",
    "BinOp",
    "Call",
    "parse",
    "pretty",
    "ScalarExpression",
    "parse_coefficient_expression",
]


class ExpressionError(ValueError):
    """Base class for expression failures; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class ExpressionSyntaxError(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class DomainError(ArithmeticError):
    """Raised by pointwise evaluation, e.g. ``log`` of a nonpositive number."""


# ---------------------------------------------------------------- AST


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int  # zero based


@dataclass(frozen=True)
class Radius(Node):
    pass


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple


FUNCTIONS = {
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sin": 1,
    "cos": 1,
    "min": 2,
    "max": 2,
}

# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    raw = text.encode("utf-8")
    if len(raw) != len(text):
        for i, ch in enumerate(text):
            if ord(ch) > 127:
                raise ExpressionSyntaxError(
                    f"unexpected character {ch!r}", len(text[:i].encode("utf-8"))
                )
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str, d: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.d = d

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.tok
        if t.text != text:
            found = "end of input" if t.kind == "end" else repr(t.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", t.offset)
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.text == "-":
            self.take()
            return Neg(self.unary())
        if self.tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.text == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.take()
            value = float(t.text)
            if not math.isfinite(value):
                raise ExpressionSyntaxError(f"numeric literal {t.text!r} overflows", t.offset)
            return Num(value)
        if t.kind == "ident":
            self.take()
            name = t.text
            if self.tok.text == "(":
                if name not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {name!r}", t.offset)
                self.take()
                args = [self.expr()]
                while self.tok.text == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[name]:
                    raise ArityError(
                        f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                        t.offset,
                    )
                return Call(name, tuple(args))
            if name in FUNCTIONS:
                raise ArityError(f"function {name!r} used without arguments", t.offset)
            if name == "r":
                return Radius()
            m = re.fullmatch(r"x([1-9][0-9]*)", name)
            if m and int(m.group(1)) <= self.d:
                return Var(int(m.group(1)) - 1)
            raise UnknownIdentifierError(f"unknown identifier {name!r}", t.offset)
        if t.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ExpressionSyntaxError(f"expected a value, found {found}", t.offset)


def parse(text: str, d: int) -> Node:
    """Parse ``text`` into an expression tree over ``d`` coordinates."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return _Parser(text, d).parse()


# ---------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3
_ATOM_PREC = 5


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY_PREC
    return _ATOM_PREC


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def pretty(node: Node) -> str:
    """Canonical text for ``node``; ``pretty(parse(pretty(n))) == pretty(n)``."""
    if isinstance(node, Num):
        s = _fmt_num(abs(node.value))
        return s if node.value >= 0 else f"-{s}"
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Radius):
        return "r"
    if isinstance(node, Neg):
        inner = pretty(node.operand)
        if _prec(node.operand) < _UNARY_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(pretty(a) for a in node.args)})"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left, right = pretty(node.left), pretty(node.right)
        if node.op == "^":
            # base must be an atom; exponent may be unary or tighter
            if _prec(node.left) < _ATOM_PREC or (
                isinstance(node.left, Num) and node.left.value < 0
            ):
                left = f"({left})"
            if _prec(node.right) < _UNARY_PREC:
                right = f"({right})"
        else:
            if _prec(node.left) < p or (isinstance(node.left, Num) and node.left.value < 0 and p > 1):
                left = f"({left})"
            if _prec(node.right) <= p or (isinstance(node.right, Num) and node.right.value < 0):
                right = f"({right})"
        return f"{left}{node.op}{right}" if node.op in "*/^" else f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------- evaluation

_NP_FUNCS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "min": np.minimum,
    "max": np.maximum,
}


def _eval_array(node: Node, pts: np.ndarray, rad: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return pts[:, node.index]
    if isinstance(node, Radius):
        return rad
    if isinstance(node, Neg):
        return -_eval_array(node.operand, pts, rad)
    if isinstance(node, BinOp):
        a = _eval_array(node.left, pts, rad)
        b = _eval_array(node.right, pts, rad)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if node.op == "/":
            return np.divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    if isinstance(node, Call):
        return _NP_FUNCS[node.name](*[_eval_array(a, pts, rad) for a in node.args])
    raise TypeError(f"not an expression node: {node!r}")


def _is_int(v: float) -> bool:
    return float(v).is_integer()


def _eval_scalar(node: Node, x: tuple, rad: float) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x[node.index]
    if isinstance(node, Radius):
        return rad
    if isinstance(node, Neg):
        return -_eval_scalar(node.operand, x, rad)
    if isinstance(node, BinOp):
        a = _eval_scalar(node.left, x, rad)
        b = _eval_scalar(node.right, x, rad)
        try:
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            if a < 0 and not _is_int(b):
                raise DomainError(f"negative base {a!r} to non-integer power {b!r}")
            return math.pow(a, b)
        except ZeroDivisionError as exc:
            raise DomainError(f"division by zero in {pretty(node)!r}") from exc
        except (OverflowError, ValueError) as exc:
            raise DomainError(f"{exc} in {pretty(node)!r}") from exc
    if isinstance(node, Call):
        args = [_eval_scalar(a, x, rad) for a in node.args]
        name = node.name
        if name == "min":
            return min(args)
        if name == "max":
            return max(args)
        if name == "log" and args[0] <= 0:
            raise DomainError(f"log of nonpositive value {args[0]!r}")
        if name == "sqrt" and args[0] < 0:
            raise DomainError(f"sqrt of negative value {args[0]!r}")
        try:
            return getattr(math, "fabs" if name == "abs" else name)(args[0])
        except OverflowError as exc:
            raise DomainError(f"overflow in {name}") from exc
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------- bytecode

# opcodes shared with the compiled kernel (_kernels.pyx) and the numpy
# fallback; keep in sync
OP_CONST, OP_VAR, OP_RADIUS = 0, 1, 2
OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG = 3, 4, 5, 6, 7, 8
OP_EXP, OP_LOG, OP_SQRT, OP_ABS, OP_SIN, OP_COS = 9, 10, 11, 12, 13, 14
OP_MIN, OP_MAX = 15, 16
OP_BALL = 17  # arg -> consts[arg: arg + d + 1] = center, radius
MAX_STACK = 64

_BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_CALL_OPS = {
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "abs": OP_ABS,
    "sin": OP_SIN,
    "cos": OP_COS,
    "min": OP_MIN,
    "max": OP_MAX,
}


class ProgramBuilder:
    """Accumulates ``(opcode, arg)`` pairs and a constant pool."""

    def __init__(self):
        self.code: list[int] = []
        self.consts: list[float] = []
        self.depth = 0
        self.max_depth = 0

    def _push(self, n: int = 1):
        self.depth += n
        self.max_depth = max(self.max_depth, self.depth)

    def const(self, value: float):
        self.code += [OP_CONST, len(self.consts)]
        self.consts.append(float(value))
        self._push()

    def emit(self, op: int, arg: int = 0, pops: int = 0, pushes: int = 0):
        self.code += [op, arg]
        self.depth -= pops
        self._push(pushes)

    def node(self, node: Node):
        if isinstance(node, Num):
            self.const(node.value)
        elif isinstance(node, Var):
            self.emit(OP_VAR, node.index, pushes=1)
        elif isinstance(node, Radius):
            self.emit(OP_RADIUS, pushes=1)
        elif isinstance(node, Neg):
            self.node(node.operand)
            self.emit(OP_NEG)
        elif isinstance(node, BinOp):
            self.node(node.left)
            self.node(node.right)
            self.emit(_BIN_OPS[node.op], pops=1)
        elif isinstance(node, Call):
            for a in node.args:
                self.node(a)
            self.emit(_CALL_OPS[node.name], pops=len(node.args) - 1)
        else:
            raise TypeError(f"not an expression node: {node!r}")

    def ball(self, center, radius: float):
        start = len(self.consts)
        self.consts.extend(float(c) for c in center)
        self.consts.append(float(radius))
        self.emit(OP_BALL, start, pushes=1)

    def finish(self) -> tuple[np.ndarray, np.ndarray]:
        if self.max_depth > MAX_STACK:
            raise ExpressionError(f"expression too deep for kernel stack ({self.max_depth})")
        return np.asarray(self.code, dtype=np.int32), np.asarray(self.consts, dtype=np.float64)


def run_program(code: np.ndarray, consts: np.ndarray, pts: np.ndarray,
                rad: np.ndarray | None = None) -> np.ndarray:
    """Vectorized reference interpreter for a compiled program."""
    n, d = pts.shape
    if rad is None:
        rad = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for k in range(0, len(code), 2):
            op, arg = int(code[k]), int(code[k + 1])
            if op == OP_CONST:
                stack.append(np.full(n, consts[arg]))
            elif op == OP_VAR:
                stack.append(pts[:, arg].copy())
            elif op == OP_RADIUS:
                stack.append(rad.copy())
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif OP_ADD <= op <= OP_POW or op in (OP_MIN, OP_MAX):
                b = stack.pop()
                a = stack.pop()
                if op == OP_ADD:
                    stack.append(a + b)
                elif op == OP_SUB:
                    stack.append(a - b)
                elif op == OP_MUL:
                    stack.append(a * b)
                elif op == OP_DIV:
                    stack.append(a / b)
                elif op == OP_POW:
                    stack.append(np.power(a, b))
                elif op == OP_MIN:
                    stack.append(np.minimum(a, b))
                else:
                    stack.append(np.maximum(a, b))
            elif op == OP_BALL:
                c = consts[arg: arg + d]
                rho = consts[arg + d]
                diff = pts - c
                stack.append((np.einsum("ij,ij->i", diff, diff) <= rho * rho).astype(float))
            else:
                fn = {
                    OP_EXP: np.exp,
                    OP_LOG: np.log,
                    OP_SQRT: np.sqrt,
                    OP_ABS: np.abs,
                    OP_SIN: np.sin,
                    OP_COS: np.cos,
                }[op]
                stack[-1] = fn(stack[-1])
    (out,) = stack
    return out


# ---------------------------------------------------------------- public field


class ScalarExpression:
    """A parsed, evaluable scalar field on R^d."""

    def __init__(self, node: Node, d: int, source: str | None = None):
        self.node = node
        self.d = d
        self.source = source if source is not None else pretty(node)

    def __repr__(self):
        return f"ScalarExpression({self.source!r}, d={self.d})"

    def __call__(self, x) -> float:
        x = tuple(float(v) for v in np.atleast_1d(x))
        if len(x) != self.d:
            raise ValueError(f"expected a point in R^{self.d}, got {len(x)} coordinates")
        value = _eval_scalar(self.node, x, math.hypot(*x))
        if not math.isfinite(value):
            raise DomainError(f"non-finite value {value!r} at {x}")
        return value

    def evaluate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.d:
            raise ValueError(f"points must have {self.d} columns")
        rad = np.sqrt(np.einsum("ij,ij->i", pts, pts))
        with np.errstate(all="ignore"):
            out = _eval_array(self.node, pts, rad)
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

    @property
    def is_constant(self) -> bool:
        return _constant_value(self.node) is not None

    def pretty(self) -> str:
        return pretty(self.node)


def _constant_value(node: Node):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, (Var, Radius)):
        return None
    if isinstance(node, Neg):
        v = _constant_value(node.operand)
        return None if v is None else -v
    children = node.args if isinstance(node, Call) else (node.left, node.right)
    vals = [_constant_value(c) for c in children]
    if any(v is None for v in vals):
        return None
    try:
        return _eval_scalar(node, (), 0.0)
    except DomainError:
        return None


def parse_coefficient_expression(text: str, d: int) -> ScalarExpression:
    """Parse a coefficient expression into an evaluable field over R^d.

    >>> parse_coefficient_expression("exp(-r^2)", 2)([1.0, 0.0])
    0.36787944117144233
    """
    return ScalarExpression(parse(text, d), d, source=text)
