"""Subsets of nodes {1..J} encoded as bitmasks (bit j-1 set iff node j is in the set)."""

from __future__ import annotations

import re
from typing import Iterable, Iterator

_LITERAL = re.compile(r"^\s*\[\s*(\d+(\s*,\s*\d+)*)?\s*\]\s*$")


def mask_of(nodes: Iterable[int]) -> int:
    m = 0
    for j in nodes:
        m |= 1 << (j - 1)
    return m


def nodes_of(mask: int) -> list[int]:
    out = []
    j = 1
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return out


def up_nodes(mask: int, J: int) -> list[int]:
    return [j for j in range(1, J + 1) if not mask >> (j - 1) & 1]


def literal(mask: int) -> str:
    return "[" + ",".join(str(j) for j in nodes_of(mask)) + "]"


def parse_literal(text: str, J: int | None = None) -> int:
    m = _LITERAL.match(text)
    if not m:
        raise ValueError(f"malformed subset literal {text!r}")
    body = text.strip()[1:-1].strip()
    nodes = [int(t) for t in body.split(",")] if body else []
    if J is not None:
        for j in nodes:
            if not 1 <= j <= J:
                raise ValueError(f"subset literal {text!r} names node {j} outside 1..{J}")
    if len(set(nodes)) != len(nodes):
        raise ValueError(f"subset literal {text!r} repeats a node")
    return mask_of(nodes)


def all_masks(J: int) -> range:
    return range(1 << J)


def proper_subsets(mask: int) -> Iterator[int]:
    """Strict subsets of ``mask`` (including the empty set)."""
    sub = (mask - 1) & mask
    while True:
        if sub != mask:
            yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def proper_supersets(mask: int, J: int) -> Iterator[int]:
    full = (1 << J) - 1
    rest = full & ~mask
    sub = rest
    while sub:
        yield mask | sub
        sub = (sub - 1) & rest


def size(mask: int) -> int:
    return mask.bit_count()
