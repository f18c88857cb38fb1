"""
Expression language for matrix entries and nonlinear terms

Grammar (whitespace-insensitive, see README.md for the EBNF):
    +, -            lowest, left associative
    *, /            left associative
    unary -
    ^               highest, right associative
Functions: sin, cos, exp, tanh, abs, sign (one argument), min, max (two).
"""

import math
import re
import logging
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from models import DepcagError

logger = logging.getLogger("depcag")

# Operator groups in increasing binding power
OPERATORS = [
    [("+", "left"), ("-", "left")],
    [("*", "left"), ("/", "left")],
    [("^", "right")],
]
OPERATOR_PREC = {name: idx for idx, group in enumerate(OPERATORS) for name, _ in group}
OPERATOR_ASSOC = {name: assoc for group in OPERATORS for name, assoc in group}
POWER_PREC = OPERATOR_PREC["^"]

FUNCTIONS: Dict[str, Tuple[int, Callable]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "abs": (1, np.abs),
    "sign": (1, np.sign),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

BUILTIN_CONSTANTS = {"pi": math.pi, "e": math.e}

# t plus indexed state symbols: z/x/y current state, w frozen argument
STATE_VARIABLE = re.compile(r"^(t|[zwxy][1-9][0-9]*)$")

Number = Union[float, np.ndarray]


class ExprError(DepcagError):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvalError(ExprError):
    pass


class NonFiniteResult(EvalError):
    pass


# AST nodes

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
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
    args: Tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "name" or "op"
    text: str
    offset: int


_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def tokenize(src: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(src):
        c = src[pos]
        if c.isspace():
            pos += 1
            continue
        match = _NUMBER.match(src, pos)
        if match:
            tokens.append(Token("num", match.group(0), pos))
            pos = match.end()
            continue
        match = _NAME.match(src, pos)
        if match:
            tokens.append(Token("name", match.group(0), pos))
            pos = match.end()
            continue
        if c in OPERATOR_PREC or c in "(),":
            tokens.append(Token("op", c, pos))
            pos += 1
            continue
        raise ParseError(f"unexpected character {c!r}", pos)
    return tokens


class _Parser:
    """Precedence climbing over a token list."""

    def __init__(self, src: str, is_known: Callable[[str], bool]):
        self.src = src
        self.tokens = tokenize(src)
        self.pos = 0
        self.is_known = is_known

    def peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        token = self.peek()
        if token is None:
            raise ParseError("unexpected end of input", len(self.src))
        self.pos += 1
        return token

    def expect(self, text: str):
        token = self.peek()
        if token is None:
            raise ParseError(f"expected {text!r}", len(self.src))
        if token.text != text:
            raise ParseError(f"expected {text!r}, found {token.text!r}", token.offset)
        self.pos += 1

    def parse(self) -> Expr:
        result = self.expression(0)
        token = self.peek()
        if token is not None:
            raise ParseError(f"unexpected token {token.text!r}", token.offset)
        return result

    def expression(self, min_prec: int) -> Expr:
        lhs = self.atom()
        while True:
            token = self.peek()
            if token is None or token.kind != "op" or token.text not in OPERATOR_PREC:
                return lhs
            prec = OPERATOR_PREC[token.text]
            if prec < min_prec:
                return lhs
            self.pos += 1
            next_prec = prec + 1 if OPERATOR_ASSOC[token.text] == "left" else prec
            rhs = self.expression(next_prec)
            lhs = BinOp(token.text, lhs, rhs)

    def atom(self) -> Expr:
        token = self.next()
        if token.kind == "num":
            return Num(float(token.text))
        if token.kind == "name":
            if token.text in FUNCTIONS:
                return self.call(token)
            if not self.is_known(token.text):
                raise ParseError(f"unknown identifier {token.text!r}", token.offset)
            return Var(token.text)
        if token.text == "-":
            # unary minus binds looser than ^ so -2^2 == -(2^2)
            return Neg(self.expression(POWER_PREC))
        if token.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        raise ParseError(f"unexpected token {token.text!r}", token.offset)

    def call(self, name: Token) -> Expr:
        arity, _ = FUNCTIONS[name.text]
        self.expect("(")
        args = [self.expression(0)]
        while self.peek() is not None and self.peek().text == ",":
            self.pos += 1
            args.append(self.expression(0))
        self.expect(")")
        if len(args) != arity:
            raise ParseError(
                f"{name.text} expects {arity} argument(s), got {len(args)}", name.offset
            )
        return Call(name.text, tuple(args))


def parse(src: str, variables: Optional[Iterable[str]] = None,
          constants: Optional[Mapping[str, float]] = None) -> Expr:
    """
    Parse an expression.

    `variables` restricts the allowed free names (default: t and the indexed
    state symbols z1.., w1.., x1.., y1..). Named constants (pi, e and the
    config's own) are always allowed.
    """
    allowed: Optional[FrozenSet[str]] = frozenset(variables) if variables is not None else None
    known_constants = set(BUILTIN_CONSTANTS) | set(constants or {})

    def is_known(name: str) -> bool:
        if name in known_constants:
            return True
        if allowed is not None:
            return name in allowed
        return bool(STATE_VARIABLE.match(name))

    return _Parser(src, is_known).parse()


def to_source(e: Expr) -> str:
    """Canonical, fully parenthesized form; parse(to_source(e)) == e."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return f"(-{text[1:]})" if text.startswith("-") else text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expr) -> FrozenSet[str]:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Call):
        out: FrozenSet[str] = frozenset()
        for a in e.args:
            out |= free_variables(a)
        return out
    return frozenset()


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
    "^": np.power,
}


def compile_expr(e: Expr, constants: Optional[Mapping[str, float]] = None) -> Callable[[Mapping[str, Number]], Number]:
    """
    Turn an AST into nested closures evaluated against an environment of
    floats or equally shaped numpy arrays. Constant subtrees are folded.
    Non-finite values are not checked here; callers decide.
    """
    bound = dict(BUILTIN_CONSTANTS)
    bound.update(constants or {})

    def build(node: Expr):
        if isinstance(node, Num):
            value = np.float64(node.value)
            return (lambda env: value), True
        if isinstance(node, Var):
            if node.name in bound:
                value = np.float64(bound[node.name])
                return (lambda env: value), True
            name = node.name

            def lookup(env):
                try:
                    return env[name]
                except KeyError:
                    raise EvalError(f"unbound variable {name!r}") from None
            return lookup, False
        if isinstance(node, Neg):
            inner, const = build(node.operand)
            fn = lambda env: np.negative(inner(env))
            return _fold(fn, const)
        if isinstance(node, BinOp):
            left, lconst = build(node.left)
            right, rconst = build(node.right)
            op = _BINARY[node.op]
            fn = lambda env: op(left(env), right(env))
            return _fold(fn, lconst and rconst)
        if isinstance(node, Call):
            _, func = FUNCTIONS[node.func]
            parts = [build(a) for a in node.args]
            fns = [p[0] for p in parts]
            if len(fns) == 1:
                only = fns[0]
                fn = lambda env: func(only(env))
            else:
                first, second = fns
                fn = lambda env: func(first(env), second(env))
            return _fold(fn, all(p[1] for p in parts))
        raise TypeError(f"not an expression node: {node!r}")

    compiled, _ = build(e)

    def run(env: Mapping[str, Number]) -> Number:
        with np.errstate(all="ignore"):
            return compiled(env)

    return run


def _fold(fn, const: bool):
    if not const:
        return fn, False
    with np.errstate(all="ignore"):
        value = fn({})
    return (lambda env: value), True


def evaluate(e: Expr, bindings: Mapping[str, float],
             constants: Optional[Mapping[str, float]] = None) -> float:
    """Evaluate to a float; raises NonFiniteResult on inf/nan (e.g. 1/0, 0^-1)."""
    env = {name: np.float64(value) for name, value in bindings.items()}
    result = float(compile_expr(e, constants)(env))
    if not math.isfinite(result):
        raise NonFiniteResult(f"non-finite result {result} for {to_source(e)}")
    return result
