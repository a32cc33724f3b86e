"""Canonical pretty-printer for rule ASTs.

`parse(format_rule(ast))` is structurally equal to `ast` for every AST the
parser or the grammar sampler can produce. The printer inserts parentheses
exactly where precedence demands them, one binding per line, single spaces
around binary operators.
"""

from __future__ import annotations

from .nodes import BinOp, Call, Expr, FeatureRef, Num, RuleAst, Unary, VarRef

_OP_PREC = {
    "or": 1,
    "and": 2,
    ">": 4, "<": 4, ">=": 4, "<=": 4, "==": 4, "!=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
}
_PRIMARY = 8


def _prec(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return _OP_PREC[expr.op]
    if isinstance(expr, Unary):
        return 3 if expr.op == "not" else 7
    return _PRIMARY


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _format_expr(expr: Expr, min_prec: int) -> str:
    if isinstance(expr, Num):
        text = _format_number(expr.value)
    elif isinstance(expr, FeatureRef):
        text = f"${expr.name}"
    elif isinstance(expr, VarRef):
        text = expr.name
    elif isinstance(expr, Call):
        args = ", ".join(_format_expr(a, 1) for a in expr.args)
        text = f"{expr.name}({args})"
    elif isinstance(expr, Unary):
        if expr.op == "not":
            text = f"not {_format_expr(expr.operand, 4)}"
        else:
            text = f"-{_format_expr(expr.operand, _PRIMARY)}"
    elif isinstance(expr, BinOp):
        own = _OP_PREC[expr.op]
        if expr.op in (">", "<", ">=", "<=", "==", "!="):
            # Comparisons do not chain: both operands sit at the add level.
            left = _format_expr(expr.left, own + 1)
            right = _format_expr(expr.right, own + 1)
        else:
            left = _format_expr(expr.left, own)
            right = _format_expr(expr.right, own + 1)
        text = f"{left} {expr.op} {right}"
    else:
        raise TypeError(f"not an expression node: {expr!r}")
    if _prec(expr) < min_prec:
        return f"({text})"
    return text


def format_rule(ast: RuleAst) -> str:
    """Render an AST as canonical rule source."""
    lines = [f"{name} = {_format_expr(expr, 1)}" for name, expr in ast.bindings]
    lines.append(f"return {_format_expr(ast.result, 1)}")
    return "\n".join(lines)
