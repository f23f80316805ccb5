"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

from __future__ import annotations

import math
import re
from collections.abc import Callable, Iterable, Mapping
from typing import Any, NamedTuple, Union

import numpy as np

from blowuplab.errors import InputError, NumericalFailure

FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "ln": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
}
CONSTANTS = {"e": math.e, "pi": math.pi}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class ExprSyntaxError(InputError):
    """Raised when an expression cannot be parsed. Carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownVariable(InputError):
    """Raised when an expression names a variable outside its declared set."""

    def __init__(self, name: str, allowed: Iterable[str]):
        super().__init__(f"Unknown variable: {name}. Valid options: {', '.join(sorted(allowed))}")
        self.name = name


class EvalError(NumericalFailure):
    """Raised when an expression cannot be evaluated."""


class DomainError(EvalError):
    """Raised when an operation leaves the real domain (log/sqrt of negatives, division by zero, ...)."""


class MissingBinding(EvalError):
    """Raised when an evaluation is missing a value for one of the expression's variables."""


class Const(NamedTuple):
    value: float


class Var(NamedTuple):
    name: str


class Unary(NamedTuple):
    op: str
    operand: Node


class Binary(NamedTuple):
    op: str
    left: Node
    right: Node


Node = Union[Const, Var, Unary, Binary]


class ExprAst(NamedTuple):
    root: Node
    variables: frozenset[str]
    source: str


class _Token(NamedTuple):
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    position = 0
    while position < len(text):
        if text[position:].strip() == "":
            break
        match = _TOKEN_RE.match(text, position)
        if match is None:
            offset = position + len(text[position:]) - len(text[position:].lstrip())
            raise ExprSyntaxError(f"Unexpected character {text[offset]!r}", offset)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        position = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent over the token list.

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := ('-' | '+') unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'
    """

    def __init__(self, text: str, variables: frozenset[str]):
        self.tokens = _tokenize(text)
        self.variables = variables
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text: str) -> None:
        token = self.advance()
        if token.text != text:
            found = token.text or "end of input"
            raise ExprSyntaxError(f"Expected {text!r} but found {found!r}", token.position)

    def parse(self) -> Node:
        node = self.expr()
        token = self.peek()
        if token.kind != "end":
            raise ExprSyntaxError(f"Unexpected token {token.text!r}", token.position)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek().text == "-":
            self.advance()
            return Unary("neg", self.unary())
        if self.peek().text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            # Right operand goes back through unary so that 2^-1 and 2^3^2 parse
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        token = self.advance()
        if token.kind == "number":
            value = float(token.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"Numeric literal out of range {token.text!r}", token.position)
            return Const(value)
        if token.kind == "name":
            if token.text in FUNCTIONS and self.peek().text == "(":
                self.advance()
                operand = self.expr()
                self.expect(")")
                return Unary(token.text, operand)
            if token.text in self.variables:
                return Var(token.text)
            if token.text in CONSTANTS:
                return Const(CONSTANTS[token.text])
            if token.text in FUNCTIONS:
                raise ExprSyntaxError(f"Function {token.text!r} must be followed by '('", self.peek().position)
            raise UnknownVariable(token.text, self.variables)
        if token.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = token.text or "end of input"
        raise ExprSyntaxError(f"Unexpected token {found!r}", token.position)


def parse_expr(text: str, variables: Iterable[str]) -> ExprAst:
    """Parses an arithmetic expression over the declared variables.

    Args:
        text (str): The expression source, e.g. "r^(-3) * s^3".
        variables (Iterable[str]): The variable names the expression may use.

    Raises:
        ExprSyntaxError: If the text is empty or malformed. The message names the position.
        UnknownVariable: If the text names a variable outside `variables`.

    Returns:
        ExprAst: The parsed expression tree.
    """
    declared = frozenset(variables)
    if not text or not text.strip():
        raise ExprSyntaxError("Empty expression", 0)
    root = _Parser(text, declared).parse()
    return ExprAst(root, declared, text)


def _check(value: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise DomainError(f"Non-finite result in {what}")
    return value


def _evaluate(node: Node, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if isinstance(node, Const):
        return np.asarray(node.value, dtype=float)
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Unary):
        x = _evaluate(node.operand, env)
        if node.op == "neg":
            return -x
        if node.op in ("log", "ln") and np.any(x <= 0.0):
            raise DomainError(f"{node.op} of non-positive value {np.min(x)!r}")
        if node.op == "sqrt" and np.any(x < 0.0):
            raise DomainError(f"sqrt of negative value {np.min(x)!r}")
        return _check(FUNCTIONS[node.op](x), node.op)

    left = _evaluate(node.left, env)
    right = _evaluate(node.right, env)
    if node.op == "+":
        return _check(left + right, "addition")
    if node.op == "-":
        return _check(left - right, "subtraction")
    if node.op == "*":
        return _check(left * right, "multiplication")
    if node.op == "/":
        if np.any(right == 0.0):
            raise DomainError("Division by zero")
        return _check(left / right, "division")

    base, exponent = np.broadcast_arrays(left, right)
    if np.any((base == 0.0) & (exponent < 0.0)):
        raise DomainError("Zero raised to a negative power")
    if np.any((base < 0.0) & (exponent != np.round(exponent))):
        raise DomainError("Negative base raised to a non-integer power")
    return _check(np.power(base, exponent), "power")


def eval_expr(ast: ExprAst, bindings: Mapping[str, Any]) -> Any:
    """Evaluates an expression. Bindings may be floats or numpy arrays; arrays broadcast.

    Returns a float when every binding is a scalar, otherwise an array of the broadcast shape.
    """
    env = {}
    for name in sorted(_free_variables(ast.root)):
        if name not in bindings:
            raise MissingBinding(f"No value bound for variable: {name}")
        env[name] = np.asarray(bindings[name], dtype=float)

    shape = np.broadcast_shapes(*(np.shape(bindings[name]) for name in bindings if name in ast.variables))
    with np.errstate(all="ignore"):
        result = _evaluate(ast.root, env)
    result = np.broadcast_to(result, shape)
    if result.ndim == 0:
        return float(result)
    return np.array(result, dtype=float)


def derivative_estimate(ast: ExprAst, var: str, point: Mapping[str, Any], step: float) -> Any:
    """Central difference (f(x + step) - f(x - step)) / (2 step) in `var`."""
    if np.any(np.asarray(step) <= 0.0):
        raise ValueError(f"Invalid step: {step}. Step must be positive")
    if var not in point:
        raise MissingBinding(f"No value bound for variable: {var}")
    x = np.asarray(point[var], dtype=float)
    forward = eval_expr(ast, {**point, var: x + step})
    backward = eval_expr(ast, {**point, var: x - step})
    return (forward - backward) / (2.0 * step)


def as_function(ast: ExprAst, order: Iterable[str]) -> Callable[..., Any]:
    """Returns a positional callable, e.g. as_function(f, ("r", "s"))(2.0, 3.0)."""
    names = tuple(order)

    def function(*args: Any) -> Any:
        return eval_expr(ast, dict(zip(names, args)))

    return function


def scaled_expr(ast: ExprAst, factor: float) -> ExprAst:
    """Returns factor * ast as a new expression over the same variables."""
    source = f"{format(factor, '.17g')} * ({ast.source})"
    return ExprAst(Binary("*", Const(float(factor)), ast.root), ast.variables, source)


def to_text(ast: ExprAst) -> str:
    """Prints a fully parenthesized source that parses back to an equivalent tree."""
    return _to_text(ast.root)


def _to_text(node: Node) -> str:
    if isinstance(node, Const):
        text = format(node.value, ".17g")
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{_to_text(node.operand)})"
        return f"{node.op}({_to_text(node.operand)})"
    return f"({_to_text(node.left)} {node.op} {_to_text(node.right)})"


def _free_variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Unary):
        return _free_variables(node.operand)
    if isinstance(node, Binary):
        return _free_variables(node.left) | _free_variables(node.right)
    return set()
