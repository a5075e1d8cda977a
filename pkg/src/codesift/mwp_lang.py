"""Parser and evaluator for straight-line arithmetic programs.

This is the program subset that completion models emit for math word
problems: one assignment per line, arithmetic over numeric literals and
previously assigned variables, ``#`` comments, no control flow. Execution
is a single ordered pass in double precision ending in a value for the
variable ``answer``.

Anything outside the subset (calls, imports, loops, conditionals, strings,
comparisons, augmented assignment) is a :class:`ParseError`; model output
cannot be trusted, so the parser never raises anything else.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Union

MAX_STATEMENTS = 1000
MAX_EXPR_DEPTH = 64

# Words that signal Python constructs outside the subset. Rejecting them by
# name gives a clearer error than "unexpected token".
_FORBIDDEN_WORDS = frozenset(
    {
        "and", "as", "assert", "async", "await", "break", "class", "continue",
        "def", "del", "elif", "else", "except", "finally", "for", "from",
        "global", "if", "import", "in", "is", "lambda", "nonlocal", "not",
        "or", "pass", "print", "raise", "return", "try", "while", "with",
        "yield", "True", "False", "None",
    }
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class MwpError(Exception):
    """Base class for every error this module raises."""


class ParseError(MwpError):
    """Source text is outside the accepted subset."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EvalError(MwpError):
    """Base class for runtime failures of a parsed program."""


class UndefinedVariable(EvalError):
    pass


class DivisionByZero(EvalError):
    pass


class NonFiniteResult(EvalError):
    pass


class MissingAnswer(EvalError):
    pass


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    """Arithmetic negation."""

    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Paren:
    """Explicit parentheses, kept so re-serialization mirrors the source."""

    inner: "Expr"


Expr = Union[Number, Variable, Unary, Binary, Paren]


@dataclass(frozen=True)
class Statement:
    target: str
    expression: Expr
    line: int = 0


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]
    source: str


# --------------------------------------------------------------------------
# Tokenizer
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<number>(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op>[=+\-*/()])
      | (?P<ws>[ \t]+)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | op | end
    text: str
    line: int
    column: int


def _tokenize_line(text: str, line_no: int) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break  # comment to end of line
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line_no, pos + 1)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), line_no, pos + 1))
        pos = m.end()
    tokens.append(_Token("end", "", line_no, len(text) + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser (recursive descent, precedence: * / over + -, left associative)
# --------------------------------------------------------------------------

class _LineParser:
    def __init__(self, tokens: list[_Token], defined: set[str]):
        self.tokens = tokens
        self.pos = 0
        self.defined = defined

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str) -> ParseError:
        return ParseError(message, self.cur.line, self.cur.column)

    def parse_statement(self) -> Statement:
        tok = self.cur
        if tok.kind != "name":
            raise self.fail("expected an assignment target")
        if tok.text in _FORBIDDEN_WORDS:
            raise self.fail(f"unsupported construct {tok.text!r}")
        target = self.advance().text
        if not (self.cur.kind == "op" and self.cur.text == "="):
            raise self.fail(f"expected '=' after target {target!r}")
        self.advance()
        if self.cur.kind == "op" and self.cur.text == "=":
            raise self.fail("comparison operators are not supported")
        expr = self.expression(0)
        if self.cur.kind != "end":
            raise self.fail(f"unexpected token {self.cur.text!r} after expression")
        return Statement(target, expr, tok.line)

    def expression(self, depth: int) -> Expr:
        node = self.term(depth)
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.advance().text
            node = Binary(op, node, self.term(depth))
        return node

    def term(self, depth: int) -> Expr:
        node = self.unary(depth)
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.advance().text
            node = Binary(op, node, self.unary(depth))
        return node

    def unary(self, depth: int) -> Expr:
        self._check_depth(depth)
        if self.cur.kind == "op" and self.cur.text == "-":
            self.advance()
            return Unary(self.unary(depth + 1))
        return self.primary(depth)

    def primary(self, depth: int) -> Expr:
        self._check_depth(depth)
        tok = self.cur
        if tok.kind == "number":
            value = float(tok.text)
            if not math.isfinite(value):
                raise self.fail(f"numeric literal {tok.text!r} out of range")
            self.advance()
            return Number(value)
        if tok.kind == "name":
            if tok.text in _FORBIDDEN_WORDS:
                raise self.fail(f"unsupported construct {tok.text!r}")
            self.advance()
            if self.cur.kind == "op" and self.cur.text == "(":
                raise self.fail(f"function calls are not supported ({tok.text!r})")
            if tok.text not in self.defined:
                raise ParseError(
                    f"variable {tok.text!r} used before assignment", tok.line, tok.column
                )
            return Variable(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.expression(depth + 1)
            if not (self.cur.kind == "op" and self.cur.text == ")"):
                raise self.fail("expected ')'")
            self.advance()
            return Paren(inner)
        raise self.fail(f"expected a number, variable, or '(', got {tok.text!r}")

    def _check_depth(self, depth: int) -> None:
        if depth > MAX_EXPR_DEPTH:
            raise self.fail("expression too deeply nested")


def parse_program(source: str) -> Program:
    """Parse arbitrary text into a :class:`Program` or raise :class:`ParseError`.

    Blank lines and comments are skipped. The parsed program is guaranteed to
    assign ``answer``, reference only previously assigned variables, and stay
    within the statement-count and expression-depth bounds.
    """
    statements: list[Statement] = []
    defined: set[str] = set()
    for line_no, line in enumerate(source.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if len(statements) >= MAX_STATEMENTS:
            raise ParseError(
                f"program exceeds {MAX_STATEMENTS} statements", line_no, 1
            )
        tokens = _tokenize_line(line, line_no)
        stmt = _LineParser(tokens, defined).parse_statement()
        if _expr_depth(stmt.expression) > MAX_EXPR_DEPTH:
            raise ParseError("expression too deeply nested", stmt.line, 1)
        statements.append(stmt)
        defined.add(stmt.target)
    if not statements:
        raise ParseError("empty program", 1, 1)
    if "answer" not in defined:
        raise ParseError("no assignment to 'answer'", statements[-1].line, 1)
    return Program(tuple(statements), source)


def _expr_depth(root: Expr) -> int:
    # Iterative: left-associative chains can nest deeper than the Python stack.
    deepest = 0
    stack: list[tuple[Expr, int]] = [(root, 1)]
    while stack:
        node, depth = stack.pop()
        deepest = max(deepest, depth)
        if isinstance(node, Binary):
            stack.append((node.left, depth + 1))
            stack.append((node.right, depth + 1))
        elif isinstance(node, Unary):
            stack.append((node.operand, depth + 1))
        elif isinstance(node, Paren):
            stack.append((node.inner, depth + 1))
    return deepest


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def evaluate(program: Program) -> float:
    """Run the program and return the final value of ``answer``.

    Statements execute in order; a later assignment to the same name shadows
    the earlier one. All arithmetic is double precision. Every failure mode
    is a typed :class:`EvalError`; nothing else escapes.
    """
    env: dict[str, float] = {}
    for stmt in program.statements:
        env[stmt.target] = _eval_expr(stmt.expression, env, 0)
    if "answer" not in env:
        raise MissingAnswer("program never assigned 'answer'")
    return env["answer"]


def _eval_expr(node: Expr, env: dict[str, float], depth: int) -> float:
    if depth > MAX_EXPR_DEPTH:
        raise EvalError("expression too deeply nested")
    if isinstance(node, Number):
        if not math.isfinite(node.value):
            raise NonFiniteResult(f"non-finite literal {node.value!r}")
        return node.value
    if isinstance(node, Variable):
        try:
            return env[node.name]
        except KeyError:
            raise UndefinedVariable(f"variable {node.name!r} is not defined") from None
    if isinstance(node, Paren):
        return _eval_expr(node.inner, env, depth + 1)
    if isinstance(node, Unary):
        return -_eval_expr(node.operand, env, depth + 1)
    if isinstance(node, Binary):
        left = _eval_expr(node.left, env, depth + 1)
        right = _eval_expr(node.right, env, depth + 1)
        if node.op == "+":
            value = left + right
        elif node.op == "-":
            value = left - right
        elif node.op == "*":
            value = left * right
        elif node.op == "/":
            if right == 0.0:
                raise DivisionByZero(f"division by zero: {left!r} / 0.0")
            value = left / right
        else:  # unreachable for parsed programs
            raise EvalError(f"unknown operator {node.op!r}")
        if not math.isfinite(value):
            raise NonFiniteResult(f"non-finite intermediate result {value!r}")
        return value
    raise EvalError(f"unknown expression node {type(node).__name__}")


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_source(program: Program) -> str:
    """Re-serialize a program; the result parses to a semantically identical one."""
    return "\n".join(
        f"{stmt.target} = {_format_expr(stmt.expression, 0, False)}"
        for stmt in program.statements
    )


def _format_expr(node: Expr, parent_prec: int, is_right: bool) -> str:
    if isinstance(node, Number):
        return repr(node.value)
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Paren):
        return f"({_format_expr(node.inner, 0, False)})"
    if isinstance(node, Unary):
        operand = _format_expr(node.operand, 3, False)
        if isinstance(node.operand, Binary):
            operand = f"({operand})"
        return f"-{operand}"
    prec = _PRECEDENCE[node.op]
    text = (
        f"{_format_expr(node.left, prec, False)} {node.op} "
        f"{_format_expr(node.right, prec, True)}"
    )
    if prec < parent_prec or (prec == parent_prec and is_right):
        return f"({text})"
    return text


def iter_variables(program: Program) -> Iterator[str]:
    """Yield every variable name referenced in expressions, in order."""
    for stmt in program.statements:
        stack: list[Expr] = [stmt.expression]
        while stack:
            node = stack.pop()
            if isinstance(node, Variable):
                yield node.name
            elif isinstance(node, Binary):
                stack.append(node.right)
                stack.append(node.left)
            elif isinstance(node, Unary):
                stack.append(node.operand)
            elif isinstance(node, Paren):
                stack.append(node.inner)
