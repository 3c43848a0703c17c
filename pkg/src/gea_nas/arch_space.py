"""Cell search space: a fixed DAG of 4 nodes and 6 edges, 5 operations per edge.

The genome of the search is one operation per edge. The space therefore has
5**6 = 15625 distinct cells, each addressable by a base-5 integer index and by
a canonical cell string.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np


class Operation(enum.IntEnum):
    """The five edge operations, in canonical index order."""

    NONE = 0
    SKIP_CONNECT = 1
    NOR_CONV_1X1 = 2
    NOR_CONV_3X3 = 3
    AVG_POOL_3X3 = 4

    @property
    def tag(self) -> str:
        """Canonical text tag used in cell strings and benchmark exports."""
        return OP_TAGS[self]


OP_TAGS = ("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3")
_TAG_TO_OP = {tag: Operation(i) for i, tag in enumerate(OP_TAGS)}

NUM_OPS = len(OP_TAGS)  # 5
NUM_EDGES = 6
SPACE_SIZE = NUM_OPS**NUM_EDGES  # 15625

# Edge e connects node pair EDGES[e]; this order is part of the encoding
# contract (serialization, hashing, mutation statistics all rely on it).
EDGES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))


class CellParseError(ValueError):
    """Raised when a cell string does not follow the canonical format."""


@dataclass(frozen=True)
class ArchEncoding:
    """A cell genome: one operation per edge, in EDGES order."""

    ops: tuple[Operation, ...]

    def __post_init__(self) -> None:
        if len(self.ops) != NUM_EDGES:
            raise ValueError(f"expected {NUM_EDGES} edge operations, got {len(self.ops)}")
        object.__setattr__(self, "ops", tuple(Operation(op) for op in self.ops))

    @property
    def index(self) -> int:
        """Base-5 integer key in [0, 15624]; edge 5 is the least significant digit."""
        key = 0
        for op in self.ops:
            key = key * NUM_OPS + int(op)
        return key

    @classmethod
    def from_index(cls, index: int) -> "ArchEncoding":
        if not 0 <= index < SPACE_SIZE:
            raise ValueError(f"index {index} outside [0, {SPACE_SIZE - 1}]")
        ops = []
        for e in range(NUM_EDGES):
            power = NUM_OPS ** (NUM_EDGES - 1 - e)
            ops.append(Operation(index // power % NUM_OPS))
        return cls(tuple(ops))

    def __hash__(self) -> int:
        # The hash IS the space index: a bijection onto [0, SPACE_SIZE).
        return self.index

    def __str__(self) -> str:
        return encode_str(self)


def random_arch(rng) -> ArchEncoding:
    """Sample a cell with each edge operation drawn independently and uniformly."""
    return ArchEncoding(tuple(Operation(int(rng.integers(NUM_OPS))) for _ in range(NUM_EDGES)))


def mutate(parent: ArchEncoding, rng) -> ArchEncoding:
    """Replace the operation on one uniformly chosen edge.

    The replacement is drawn uniformly from the four operations other than the
    parent's, so the child always differs from the parent on exactly one edge.
    """
    edge = int(rng.integers(NUM_EDGES))
    pool = [op for op in Operation if op != parent.ops[edge]]
    new_op = pool[int(rng.integers(NUM_OPS - 1))]
    ops = list(parent.ops)
    ops[edge] = new_op
    return ArchEncoding(tuple(ops))


def encode_str(arch: ArchEncoding) -> str:
    """Canonical cell string, e.g. ``|none~0|+|none~0|none~1|+|none~0|none~1|none~2|``.

    Node groups are separated by ``+``; within a group, token ``op~i`` names the
    operation on the edge from source node i, in source order.
    """
    groups = []
    e = 0
    for target in range(1, 4):
        tokens = []
        for src in range(target):
            tokens.append(f"{arch.ops[e].tag}~{src}")
            e += 1
        groups.append("|" + "|".join(tokens) + "|")
    return "+".join(groups)


def parse_str(text: str) -> ArchEncoding:
    """Inverse of encode_str; raises CellParseError naming the offending token."""
    groups = text.split("+")
    if len(groups) != 3:
        raise CellParseError(f"expected 3 node groups separated by '+', got {len(groups)}")
    ops = []
    for g, group in enumerate(groups):
        if len(group) < 2 or not group.startswith("|") or not group.endswith("|"):
            raise CellParseError(f"node group {g + 1} must be '|'-delimited, got {group!r}")
        tokens = group[1:-1].split("|")
        if len(tokens) != g + 1:
            raise CellParseError(f"node group {g + 1} expects {g + 1} tokens, got {len(tokens)}")
        for src, token in enumerate(tokens):
            tag, sep, src_text = token.partition("~")
            if not sep:
                raise CellParseError(f"malformed token {token!r}: missing '~'")
            if tag not in _TAG_TO_OP:
                raise CellParseError(f"unknown operation tag in token {token!r}")
            if src_text != str(src):
                raise CellParseError(f"token {token!r}: expected source node {src}")
            ops.append(_TAG_TO_OP[tag])
    return ArchEncoding(tuple(ops))


def enumerate_all() -> Iterator[ArchEncoding]:
    """All 15625 cells exactly once, in base-5 lexicographic order of op indices."""
    for index in range(SPACE_SIZE):
        yield ArchEncoding.from_index(index)


def op_index_table() -> np.ndarray:
    """(SPACE_SIZE, NUM_EDGES) int array: row i holds the op indices of cell i."""
    index = np.arange(SPACE_SIZE)
    columns = []
    for e in range(NUM_EDGES):
        power = NUM_OPS ** (NUM_EDGES - 1 - e)
        columns.append(index // power % NUM_OPS)
    return np.stack(columns, axis=1)
