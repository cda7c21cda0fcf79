"""Tiny arithmetic expression language for field components and scalar functions.

Grammar (fixed):

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := unary ("^" integer)?
    unary  := ("-")? atom
    atom   := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
    ident  in {x0..x15, abs, sin, cos, exp, sqrt, min, max}

Unary minus binds tighter than "^", so "-x0^2" is (-x0)^2.  Exponents are
nonnegative integer literals, which keeps evaluation total on the reals.
Expressions are immutable; evaluation is pure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import EvaluationError, ParseError

UNARY_FUNCTIONS = ("abs", "sin", "cos", "exp", "sqrt")
BINARY_FUNCTIONS = ("min", "max")
FUNCTION_NAMES = UNARY_FUNCTIONS + BINARY_FUNCTIONS
MAX_VARIABLES = 16

_VAR_RE = re.compile(r"^x(1[0-5]|[0-9])$")
_NUMBER_RE = re.compile(r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple["Node", ...]


Node = Union[Num, Var, Neg, Pow, BinOp, Call]


@dataclass(frozen=True)
class Expression:
    """Parsed expression with the dimension it was declared against."""

    root: Node
    dimension: int

    def __str__(self) -> str:
        return to_source(self)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return evaluate_many(self, points)


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind = kind
        self.text = text
        self.pos = pos


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append(_Token(ch, ch, i))
            i += 1
            continue
        m = _NUMBER_RE.match(source, i)
        if m and ch.isdigit():
            tokens.append(_Token("number", m.group(), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            tokens.append(_Token("ident", m.group(), i))
            i = m.end()
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, dimension):
        self.tokens = tokens
        self.pos = 0
        self.dimension = dimension

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {kind!r}, found {tok.text or 'end of input'!r}", tok.pos)
        return self.advance()

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while self.peek().kind in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while self.peek().kind in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Node:
        node = self.parse_unary()
        if self.peek().kind == "^":
            self.advance()
            tok = self.expect("number")
            if not tok.text.isdigit():
                raise ParseError(f"exponent must be an integer literal, found {tok.text!r}", tok.pos)
            node = Pow(node, int(tok.text))
        return node

    def parse_unary(self) -> Node:
        if self.peek().kind == "-":
            self.advance()
            return Neg(self.parse_atom())
        return self.parse_atom()

    def parse_atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if self.peek().kind == "(":
                if name not in FUNCTION_NAMES:
                    raise ParseError(f"unknown function {name!r}", tok.pos)
                self.advance()
                args = [self.parse_expr()]
                while self.peek().kind == ",":
                    self.advance()
                    args.append(self.parse_expr())
                self.expect(")")
                arity = 1 if name in UNARY_FUNCTIONS else 2
                if len(args) != arity:
                    raise ParseError(
                        f"{name} takes {arity} argument{'s' if arity > 1 else ''}, got {len(args)}",
                        tok.pos,
                    )
                return Call(name, tuple(args))
            m = _VAR_RE.match(name)
            if m is None:
                raise ParseError(f"unknown identifier {name!r}", tok.pos)
            index = int(name[1:])
            if index >= self.dimension:
                raise ParseError(
                    f"variable {name} exceeds declared dimension {self.dimension}", tok.pos
                )
            return Var(index)
        raise ParseError(f"expected a value, found {tok.text or 'end of input'!r}", tok.pos)


def parse(source: str, dimension: int) -> Expression:
    """Parse `source` against variables x0..x{dimension-1}."""
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 0)
    if not 1 <= dimension <= MAX_VARIABLES:
        raise ParseError(f"dimension must be in 1..{MAX_VARIABLES}, got {dimension}", 0)
    parser = _Parser(_tokenize(source), dimension)
    root = parser.parse_expr()
    tail = parser.peek()
    if tail.kind != "eof":
        raise ParseError(f"unexpected trailing input {tail.text!r}", tail.pos)
    return Expression(root, dimension)


def _eval_node(node: Node, pts: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return pts[:, node.index]
    if isinstance(node, Neg):
        return -_eval_node(node.operand, pts)
    if isinstance(node, Pow):
        return np.power(_eval_node(node.base, pts), node.exponent)
    if isinstance(node, BinOp):
        a = _eval_node(node.left, pts)
        b = _eval_node(node.right, pts)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise EvaluationError("division by zero")
        return a / b
    if isinstance(node, Call):
        vals = [_eval_node(arg, pts) for arg in node.args]
        if node.func == "abs":
            return np.abs(vals[0])
        if node.func == "sin":
            return np.sin(vals[0])
        if node.func == "cos":
            return np.cos(vals[0])
        if node.func == "exp":
            return np.exp(vals[0])
        if node.func == "sqrt":
            if np.any(np.asarray(vals[0]) < 0.0):
                raise EvaluationError("sqrt of negative value")
            return np.sqrt(vals[0])
        if node.func == "min":
            return np.minimum(vals[0], vals[1])
        return np.maximum(vals[0], vals[1])
    raise TypeError(f"unknown node {node!r}")


def evaluate_many(expr: Expression, points: np.ndarray) -> np.ndarray:
    """Evaluate on an (N, n) array of points, returning an (N,) array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != expr.dimension:
        raise EvaluationError(
            f"points have dimension {pts.shape[1]}, expression expects {expr.dimension}"
        )
    out = _eval_node(expr.root, pts)
    out = np.asarray(out, dtype=float)
    if out.ndim == 0:
        out = np.full(pts.shape[0], float(out))
    return out


def evaluate(expr: Expression, point) -> float:
    """Evaluate at a single point given as a sequence of reals."""
    pt = np.asarray(point, dtype=float).reshape(1, -1)
    return float(evaluate_many(expr, pt)[0])


def to_source(expr: Expression) -> str:
    """Render to text that re-parses to an expression with identical evaluations."""
    return _render(expr.root)


def _render(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{_render_atom(node.operand)})"
    if isinstance(node, Pow):
        return f"{_render_atom(node.base)}^{node.exponent}"
    if isinstance(node, BinOp):
        return f"({_render(node.left)} {node.op} {_render(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_render(a) for a in node.args)})"
    raise TypeError(f"unknown node {node!r}")


def _render_atom(node: Node) -> str:
    text = _render(node)
    if isinstance(node, (Num, Var, Call)) or text.startswith("("):
        return text
    return f"({text})"


def uses_nonsmooth_ops(expr: Expression) -> bool:
    """Whether the tree contains abs, min, max, or sqrt (kinked primitives)."""
    return _any_node(expr.root, lambda n: isinstance(n, Call) and n.func in ("abs", "min", "max", "sqrt"))


def free_variables(expr: Expression) -> set:
    found = set()
    _any_node(expr.root, lambda n: found.add(n.index) if isinstance(n, Var) else None)
    return found


def _any_node(node: Node, pred) -> bool:
    if pred(node):
        return True
    children = ()
    if isinstance(node, Neg):
        children = (node.operand,)
    elif isinstance(node, Pow):
        children = (node.base,)
    elif isinstance(node, BinOp):
        children = (node.left, node.right)
    elif isinstance(node, Call):
        children = node.args
    return any(_any_node(c, pred) for c in children)


def linear_combination(coefficients, expressions) -> Expression:
    """Build sum_j c_j * e_j as a new expression over the shared dimension."""
    exprs = list(expressions)
    coeffs = [float(c) for c in coefficients]
    if len(exprs) != len(coeffs) or not exprs:
        raise ValueError("need matching, nonempty coefficient and expression lists")
    dim = exprs[0].dimension
    if any(e.dimension != dim for e in exprs):
        raise ValueError("expressions must share a dimension")
    root = None
    for c, e in zip(coeffs, exprs):
        term = BinOp("*", Num(abs(c)), e.root)
        if c < 0:
            term = Neg(BinOp("*", Num(abs(c)), e.root))
        root = term if root is None else BinOp("+", root, term)
    return Expression(root, dim)
