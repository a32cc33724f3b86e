"""AST node types for the anomaly-rule DSL.

Nodes compare structurally: two parses of the same source are equal even if
their positions differ, which is what the canonical-format round-trip
guarantee is stated against. Positions are kept for diagnostics only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

Pos = tuple[int, int]

_NOWHERE: Pos = (0, 0)


@dataclass(frozen=True)
class Num:
    value: float
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class FeatureRef:
    name: str
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class VarRef:
    name: str
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "not"
    operand: "Expr"
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # arithmetic, comparison, "and" or "or"
    left: "Expr"
    right: "Expr"
    pos: Pos = field(default=_NOWHERE, compare=False, repr=False)


Expr = Union[Num, FeatureRef, VarRef, Call, Unary, BinOp]


@dataclass(frozen=True)
class RuleAst:
    """A parsed rule: ordered bindings followed by the result expression."""

    bindings: tuple[tuple[str, Expr], ...]
    result: Expr
    node_count: int


COMPARISON_OPS = (">", "<", ">=", "<=", "==", "!=")
ARITHMETIC_OPS = ("+", "-", "*", "/")
BOOLEAN_OPS = ("and", "or")


def count_nodes(expr: Expr) -> int:
    """Number of expression nodes in the subtree rooted at `expr`."""
    if isinstance(expr, (Num, FeatureRef, VarRef)):
        return 1
    if isinstance(expr, Call):
        return 1 + sum(count_nodes(a) for a in expr.args)
    if isinstance(expr, Unary):
        return 1 + count_nodes(expr.operand)
    if isinstance(expr, BinOp):
        return 1 + count_nodes(expr.left) + count_nodes(expr.right)
    raise TypeError(f"not an expression node: {expr!r}")
