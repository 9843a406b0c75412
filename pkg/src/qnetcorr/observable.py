"""Observables f(D, n) on environment x queue-length states.

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor ("*" factor)*
    factor := number | "q(" int ")" | "qc(" int "," int ")" | "down(" int ")"
            | "ndown" | "min(" expr "," expr ")" | "max(" expr "," expr ")"
            | "(" expr ")" | "-" factor

Evaluation accepts either a python ``int`` bitmask with integer queue lengths,
or numpy arrays (masks and per-node queue arrays) that broadcast together.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class ObservableSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float
    text: str


@dataclass(frozen=True)
class Q:
    node: int


@dataclass(frozen=True)
class QC:
    node: int
    cap: int


@dataclass(frozen=True)
class Down:
    node: int


@dataclass(frozen=True)
class NDown:
    pass


@dataclass(frozen=True)
class BinOp:
    op: str  # "+", "-", "*"
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    name: str  # "min" | "max"
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Group:
    inner: "Node"


Node = Union[Const, Q, QC, Down, NDown, BinOp, Neg, Call, Group]


# --- tokenizer / parser ----------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*(),]))"
)
_FUNCS = {"q", "qc", "down", "ndown", "min", "max"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ObservableSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


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
        kind, val, pos = self.take()
        if val != value:
            raise ObservableSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def integer(self) -> int:
        kind, val, pos = self.take()
        if kind != "num" or not val.isdigit():
            raise ObservableSyntaxError(f"expected integer, found {val or 'end of input'!r}", pos)
        return int(val)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] == "*":
            self.take()
            node = BinOp("*", node, self.factor())
        return node

    def factor(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val), val)
        if kind == "op" and val == "-":
            return Neg(self.factor())
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return Group(inner)
        if kind == "name":
            if val not in _FUNCS:
                raise ObservableSyntaxError(f"unknown identifier {val!r}", pos)
            if val == "ndown":
                return NDown()
            self.expect("(")
            if val in ("min", "max"):
                left = self.expr()
                self.expect(",")
                right = self.expr()
                self.expect(")")
                return Call(val, left, right)
            node_pos = self.peek()[2]
            j = self.integer()
            if j < 1:
                raise ObservableSyntaxError("node index must be >= 1", node_pos)
            if val == "qc":
                self.expect(",")
                c = self.integer()
                self.expect(")")
                return QC(j, c)
            self.expect(")")
            return Q(j) if val == "q" else Down(j)
        raise ObservableSyntaxError(f"unexpected token {val or 'end of input'!r}", pos)


# --- printing ---------------------------------------------------------------


def to_text(node: Node) -> str:
    if isinstance(node, Const):
        return node.text
    if isinstance(node, Q):
        return f"q({node.node})"
    if isinstance(node, QC):
        return f"qc({node.node},{node.cap})"
    if isinstance(node, Down):
        return f"down({node.node})"
    if isinstance(node, NDown):
        return "ndown"
    if isinstance(node, BinOp):
        if node.op == "*":
            return f"{to_text(node.left)}*{to_text(node.right)}"
        return f"{to_text(node.left)} {node.op} {to_text(node.right)}"
    if isinstance(node, Neg):
        return f"-{to_text(node.operand)}"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.left)}, {to_text(node.right)})"
    if isinstance(node, Group):
        return f"({to_text(node.inner)})"
    raise TypeError(node)


# --- evaluation -------------------------------------------------------------


def _ndown(mask):
    if isinstance(mask, (int, np.integer)):
        return float(int(mask).bit_count())
    return np.bitwise_count(np.asarray(mask, dtype=np.int64)).astype(float)


def _eval(node: Node, mask, n: Sequence):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Q):
        return n[node.node - 1] * 1.0
    if isinstance(node, QC):
        return np.minimum(n[node.node - 1], node.cap) * 1.0
    if isinstance(node, Down):
        return ((mask >> (node.node - 1)) & 1) * 1.0
    if isinstance(node, NDown):
        return _ndown(mask)
    if isinstance(node, BinOp):
        a = _eval(node.left, mask, n)
        b = _eval(node.right, mask, n)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        return a * b
    if isinstance(node, Neg):
        return -_eval(node.operand, mask, n)
    if isinstance(node, Call):
        a = _eval(node.left, mask, n)
        b = _eval(node.right, mask, n)
        return np.minimum(a, b) if node.name == "min" else np.maximum(a, b)
    if isinstance(node, Group):
        return _eval(node.inner, mask, n)
    raise TypeError(node)


def _walk(node: Node):
    yield node
    for child in ("left", "right", "operand", "inner"):
        sub = getattr(node, child, None)
        if sub is not None:
            yield from _walk(sub)


@dataclass(frozen=True)
class Observable:
    """A parsed observable with its saturation profile.

    ``saturation`` maps a node index to its largest ``qc`` cutoff, or to
    ``math.inf`` when the node appears in a raw ``q`` atom. Nodes not
    referenced are absent (the function is constant in that coordinate).
    """

    ast: Node
    saturation: tuple[tuple[int, float], ...]

    @property
    def text(self) -> str:
        return to_text(self.ast)

    def __str__(self) -> str:
        return self.text

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(c) for _, c in self.saturation)

    def cutoff(self, j: int) -> float:
        return dict(self.saturation).get(j, 0)

    def max_node(self) -> int:
        return max((nd.node for nd in _walk(self.ast) if isinstance(nd, (Q, QC, Down))), default=0)

    def check_nodes(self, J: int) -> None:
        if self.max_node() > J:
            raise ValueError(f"observable {self.text!r} references node {self.max_node()} but J={J}")

    def __call__(self, mask, n: Sequence) -> float:
        return _eval(self.ast, mask, n)

    def evaluate(self, mask, n: Sequence):
        """Vectorised evaluation; the result is broadcast against the inputs."""
        val = _eval(self.ast, mask, n)
        shape = np.broadcast_shapes(np.shape(mask), *(np.shape(x) for x in n))
        return np.broadcast_to(np.asarray(val, dtype=float), shape)

    def shifted(self, mask, n: Sequence, j: int):
        """f(D, n + e_j); ``j = 0`` is the unshifted value."""
        if j == 0:
            return self(mask, n)
        m = list(n)
        m[j - 1] = m[j - 1] + 1
        return self(mask, m)

    def minus_constant(self, c: float) -> "Observable":
        return Observable(BinOp("-", self.ast, Const(float(c), repr(float(c)))), self.saturation)

    def scaled(self, a: float) -> "Observable":
        return Observable(BinOp("*", Const(float(a), repr(float(a))), Group(self.ast)), self.saturation)


def _saturation(ast: Node) -> tuple[tuple[int, float], ...]:
    sat: dict[int, float] = {}
    for nd in _walk(ast):
        if isinstance(nd, QC):
            sat[nd.node] = max(sat.get(nd.node, 0), nd.cap)
        elif isinstance(nd, Q):
            sat[nd.node] = math.inf
    return tuple(sorted(sat.items()))


def from_ast(ast: Node) -> Observable:
    return Observable(ast, _saturation(ast))


def parse_observable(text: str) -> Observable:
    p = _Parser(text)
    ast = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ObservableSyntaxError(f"unexpected trailing {val!r}", pos)
    return from_ast(ast)


def eval_observable(f: Observable, mask: int, n: Sequence[int]) -> float:
    return float(f(mask, n))


def shifted_eval(f: Observable, mask: int, n: Sequence[int], j: int) -> float:
    return float(f.shifted(mask, n, j))


CONSTANT_ONE = parse_observable("1")
