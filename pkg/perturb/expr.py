"""
Kernel expressions: parsing, evaluation and the symbolic derivative in u.

Kernels k(x, y), g(x, y) and h(x, y, u) are written as closed-form strings over
the variables x1, x2, y1, y2 and u ("x" and "y" are aliases of x1 and y1).
The derivative of abs is taken to be sign, with sign(0) = 0.
"""
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Tuple, Union
import logging
import re

import numpy as np

from perturb.errors import (
    ExpressionSyntaxError,
    MissingBinding,
    NonConstantExponent,
    NumericDomainError,
    UnknownIdentifier,
)

logger = logging.getLogger(__name__)

VARIABLES = frozenset({"x1", "x2", "y1", "y2", "u"})
SPATIAL_VARIABLES = frozenset({"x1", "x2", "y1", "y2"})
ALIASES = {"x": "x1", "y": "y1"}
FUNCTIONS = frozenset({"sin", "cos", "exp", "tanh", "abs", "sign"})
BINARY_OPS = frozenset({"+", "-", "*", "/", "^"})

Value = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Base class of every AST node. Nodes are immutable and hashable."""

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Constant(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Variable(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str  # "neg" or one of FUNCTIONS
    child: Expr


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


ZERO = Constant(0.0)
ONE = Constant(1.0)


def free_variables(expr: Expr) -> FrozenSet[str]:
    """Names of the variables appearing in `expr`."""
    if isinstance(expr, Variable):
        return frozenset({expr.name})
    if isinstance(expr, Unary):
        return free_variables(expr.child)
    if isinstance(expr, Binary):
        return free_variables(expr.left) | free_variables(expr.right)
    return frozenset()


def contains_u(expr: Expr) -> bool:
    return "u" in free_variables(expr)


# ---------------------------------------------------------------------------
# Tokenizer and recursive-descent parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

Token = Tuple[str, str, int]  # (kind, text, position)


def _tokenize(source: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExpressionSyntaxError(f"Unexpected character {source[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    """
    expr    := term (("+"|"-") term)*
    term    := unary (("*"|"/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?
    primary := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

    "^" binds tighter than unary minus and is right-associative, so
    -2^2 == -(2^2) and 2^3^2 == 2^(3^2).
    """

    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.index = 0

    def peek(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text: str) -> Token:
        kind, value, pos = self.peek()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ExpressionSyntaxError(f"Expected '{text}' but found {found}", pos)
        return self.advance()

    def parse(self) -> Expr:
        expr = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"Unexpected token {value!r}", pos)
        return expr

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            exponent_pos = self.peek()[2]
            exponent = self.unary()
            if free_variables(exponent):
                raise NonConstantExponent(exponent_pos)
            return Binary("^", base, exponent)
        return base

    def primary(self) -> Expr:
        kind, value, pos = self.advance()
        if kind == "number":
            number = float(value)
            if not np.isfinite(number):
                raise ExpressionSyntaxError(f"Numeric literal {value!r} overflows", pos)
            return Constant(number)
        if kind == "ident":
            name = ALIASES.get(value, value)
            if name in VARIABLES:
                return Variable(name)
            if name in FUNCTIONS:
                self.expect("(")
                child = self.expr()
                self.expect(")")
                return Unary(name, child)
            raise UnknownIdentifier(value, pos)
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionSyntaxError("Unexpected end of input", pos)
        raise ExpressionSyntaxError(f"Unexpected token {value!r}", pos)


def parse(source: str) -> Expr:
    """
    Parse a kernel expression into an AST.

    Args:
        source (str): Expression text, e.g. "0.25*sin(u)".

    Returns:
        Expr: The parsed tree.

    Raises:
        ExpressionSyntaxError: Malformed input; carries the 0-based position.
        UnknownIdentifier: A name outside the variable and function sets.
        NonConstantExponent: An exponent that depends on a variable.
    """
    if not isinstance(source, str):
        raise ExpressionSyntaxError(f"Expected text, got {type(source).__name__}", 0)
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def to_source(expr: Expr) -> str:
    """Fully parenthesised text that parses back to an equivalent tree."""
    if isinstance(expr, Constant):
        text = repr(float(expr.value))
        return f"({text})" if expr.value < 0 or text.startswith("-") else text
    if isinstance(expr, Variable):
        return expr.name
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return f"(-{to_source(expr.child)})"
        return f"{expr.op}({to_source(expr.child)})"
    if isinstance(expr, Binary):
        return f"({to_source(expr.left)}{expr.op}{to_source(expr.right)})"
    raise TypeError(f"Not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_UNARY_FUNCS = {
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
    "sign": np.sign,
}


def _normalize_bindings(bindings: Mapping[str, Value]) -> Dict[str, Value]:
    return {ALIASES.get(name, name): value for name, value in bindings.items()}


def _eval(expr: Expr, env: Mapping[str, Value]) -> Value:
    if isinstance(expr, Constant):
        return np.float64(expr.value)
    if isinstance(expr, Variable):
        try:
            return env[expr.name]
        except KeyError:
            raise MissingBinding(expr.name) from None
    if isinstance(expr, Unary):
        return _UNARY_FUNCS[expr.op](_eval(expr.child, env))
    if isinstance(expr, Binary):
        left = _eval(expr.left, env)
        right = _eval(expr.right, env)
        if expr.op == "+":
            return np.add(left, right)
        if expr.op == "-":
            return np.subtract(left, right)
        if expr.op == "*":
            return np.multiply(left, right)
        if expr.op == "/":
            if np.any(np.asarray(right) == 0.0):
                raise NumericDomainError(f"Division by zero in {to_source(expr)}")
            return np.divide(left, right)
        if expr.op == "^":
            return _power(left, right, expr)
    raise TypeError(f"Not an expression node: {expr!r}")


def _power(base: Value, exponent: Value, expr: Expr) -> Value:
    exponent_arr = np.asarray(exponent)
    base_arr = np.asarray(base)
    if np.any((base_arr == 0.0) & (exponent_arr < 0.0)):
        raise NumericDomainError(f"Zero raised to a negative power in {to_source(expr)}")
    if np.any((base_arr < 0.0) & (exponent_arr != np.round(exponent_arr))):
        raise NumericDomainError(
            f"Negative base with non-integer exponent in {to_source(expr)}"
        )
    return np.power(base, exponent)


def evaluate_array(expr: Expr, bindings: Mapping[str, Value]) -> np.ndarray:
    """
    Evaluate `expr` elementwise with numpy broadcasting over the bound arrays.

    Raises:
        MissingBinding: A free variable has no value.
        NumericDomainError: Division by zero, 0^negative, or a negative base
            with a non-integer exponent anywhere in the broadcast.
    """
    env = _normalize_bindings(bindings)
    missing = sorted(free_variables(expr) - env.keys())
    if missing:
        raise MissingBinding(missing[0])
    with np.errstate(all="ignore"):
        return np.asarray(_eval(expr, env), dtype=float)


def evaluate(expr: Expr, bindings: Mapping[str, float]) -> float:
    """
    Evaluate `expr` at a single point in double precision.

    Args:
        expr (Expr): The expression.
        bindings (dict): Variable name -> value; must cover every free variable.

    Returns:
        float: The value.

    Raises:
        MissingBinding: A free variable has no value.
        NumericDomainError: Division by zero or 0^negative.
    """
    return float(evaluate_array(expr, bindings))


# ---------------------------------------------------------------------------
# Symbolic derivative with respect to u
# ---------------------------------------------------------------------------

def differentiate_u(expr: Expr) -> Expr:
    """
    Return an AST for d(expr)/du. The result is not algebraically simplified;
    subtrees that do not contain u differentiate to Constant(0), and so does a
    power whose constant exponent is 0 (u^0 is the constant 1, even at u = 0).
    """
    if not contains_u(expr):
        return ZERO
    if isinstance(expr, Variable):
        return ONE
    if isinstance(expr, Unary):
        child = expr.child
        d_child = differentiate_u(child)
        if expr.op == "neg":
            return Unary("neg", d_child)
        if expr.op == "sin":
            outer = Unary("cos", child)
        elif expr.op == "cos":
            outer = Unary("neg", Unary("sin", child))
        elif expr.op == "exp":
            outer = Unary("exp", child)
        elif expr.op == "tanh":
            outer = Binary("-", ONE, Binary("^", Unary("tanh", child), Constant(2.0)))
        elif expr.op == "abs":
            outer = Unary("sign", child)
        elif expr.op == "sign":
            return ZERO
        else:
            raise TypeError(f"Unknown unary operator {expr.op!r}")
        return Binary("*", outer, d_child)
    if isinstance(expr, Binary):
        left, right = expr.left, expr.right
        d_left, d_right = differentiate_u(left), differentiate_u(right)
        if expr.op in ("+", "-"):
            return Binary(expr.op, d_left, d_right)
        if expr.op == "*":
            return Binary("+", Binary("*", d_left, right), Binary("*", left, d_right))
        if expr.op == "/":
            numerator = Binary("-", Binary("*", d_left, right), Binary("*", left, d_right))
            return Binary("/", numerator, Binary("^", right, Constant(2.0)))
        if expr.op == "^":
            if contains_u(right):
                raise NonConstantExponent(0)
            if not free_variables(right) and evaluate(right, {}) == 0.0:
                return ZERO
            reduced = Binary("-", right, ONE)
            return Binary("*", Binary("*", right, Binary("^", left, reduced)), d_left)
    raise TypeError(f"Not an expression node: {expr!r}")
