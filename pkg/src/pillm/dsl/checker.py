"""Static type checking for parsed rules.

Every expression is classified as a numeric series or a boolean series.
Comparisons take numeric operands and produce booleans; `and/or/not` demand
booleans; arithmetic and all builtins stay numeric. The checker also pins
down which features a rule references and its largest window, both of which
the interpreter's evaluation budget and the diagnostic report rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import DslTypeError
from .nodes import BinOp, Call, Expr, FeatureRef, Num, RuleAst, Unary, VarRef
from .parser import BUILTINS

_NUM = "numeric-series"
_BOOL = "boolean-series"


@dataclass(frozen=True)
class TypedRule:
    """A rule that passed parsing and static checks against a feature set."""

    ast: RuleAst
    result_is_bool: bool
    features: frozenset[str]
    max_window: int
    node_count: int


def typecheck(ast: RuleAst, features: Iterable[str]) -> TypedRule:
    """Check `ast` against the table's feature names."""
    known = frozenset(features)
    env: dict[str, str] = {}
    used: set[str] = set()
    max_window = 1

    def visit(expr: Expr) -> str:
        nonlocal max_window
        if isinstance(expr, Num):
            return _NUM
        if isinstance(expr, FeatureRef):
            if expr.name not in known:
                raise DslTypeError(f"unknown feature ${expr.name}", *expr.pos)
            used.add(expr.name)
            return _NUM
        if isinstance(expr, VarRef):
            # The parser guarantees bound-before-use, so the name is present.
            return env[expr.name]
        if isinstance(expr, Unary):
            inner = visit(expr.operand)
            if expr.op == "-":
                _require(inner, _NUM, "unary '-'", expr)
                return _NUM
            _require(inner, _BOOL, "'not'", expr)
            return _BOOL
        if isinstance(expr, BinOp):
            left = visit(expr.left)
            right = visit(expr.right)
            if expr.op in ("and", "or"):
                _require(left, _BOOL, f"{expr.op!r}", expr)
                _require(right, _BOOL, f"{expr.op!r}", expr)
                return _BOOL
            if expr.op in (">", "<", ">=", "<=", "==", "!="):
                _require(left, _NUM, f"comparison {expr.op!r}", expr)
                _require(right, _NUM, f"comparison {expr.op!r}", expr)
                return _BOOL
            _require(left, _NUM, f"operator {expr.op!r}", expr)
            _require(right, _NUM, f"operator {expr.op!r}", expr)
            if expr.op == "/" and isinstance(expr.right, Num) and expr.right.value == 0.0:
                raise DslTypeError("division by a literal 0", *expr.pos)
            return _NUM
        if isinstance(expr, Call):
            arity, window_arg = BUILTINS[expr.name]
            for arg in expr.args:
                _require(visit(arg), _NUM, f"argument of {expr.name}()", arg)
            if window_arg is not None:
                literal = expr.args[window_arg]
                assert isinstance(literal, Num)  # enforced by the parser
                max_window = max(max_window, int(literal.value))
            return _NUM
        raise TypeError(f"not an expression node: {expr!r}")

    for name, expr in ast.bindings:
        env[name] = visit(expr)
    result_type = visit(ast.result)
    return TypedRule(
        ast=ast,
        result_is_bool=result_type == _BOOL,
        features=frozenset(used),
        max_window=max_window,
        node_count=ast.node_count,
    )


def _require(actual: str, expected: str, where: str, expr: Expr) -> None:
    if actual != expected:
        pos = getattr(expr, "pos", (0, 0))
        raise DslTypeError(f"{where} requires a {expected}, got {actual}", *pos)
