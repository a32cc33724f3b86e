"""Deterministic interpreter for typechecked rules.

Evaluation is columnar: every sub-expression produces a series of T values
plus a mask of MISSING positions. MISSING arises from `lag` before enough
history exists, from division by a runtime zero, and from non-finite
arithmetic results (overflow); it propagates through arithmetic and
comparisons, while `and`/`or` may still decide when one operand settles the
answer (false and anything is false, true or anything is true). Windowed
builtins are MISSING wherever their trailing window touches a MISSING input.
`ewma` pauses its state over MISSING inputs and resumes on the next datum.

Only the final result coerces MISSING to 0.0: a rule that cannot decide
does not alarm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..timeseries import TimeSeriesTable
from .checker import TypedRule
from .errors import BudgetError
from .nodes import BinOp, Call, Expr, FeatureRef, Num, Unary, VarRef

EVAL_BUDGET = 2**28
ZSCORE_EPS = 1e-9


@dataclass
class _Series:
    values: np.ndarray  # float64, finite at every position
    missing: np.ndarray  # bool


def _const(value: float, length: int) -> _Series:
    return _Series(np.full(length, value, dtype=np.float64), np.zeros(length, dtype=bool))


def _clean_arith(values: np.ndarray, mask: np.ndarray) -> _Series:
    """Re-mask non-finite results so series values stay finite everywhere."""
    bad = ~np.isfinite(values)
    if bad.any():
        mask = mask | bad
    return _Series(np.where(mask, 0.0, values), mask)


def _rolling_reduce(x: np.ndarray, window: int, fn) -> np.ndarray:
    """Trailing-window reduction; rows before w-1 use the available prefix."""
    length = x.shape[0]
    out = np.empty(length, dtype=np.float64)
    lead = min(window - 1, length)
    for t in range(lead):
        out[t] = fn(x[: t + 1], axis=-1)
    if length >= window:
        out[window - 1 :] = fn(sliding_window_view(x, window), axis=-1)
    return out


def _rolling_missing(missing: np.ndarray, window: int) -> np.ndarray:
    if not missing.any():
        return np.zeros(missing.shape[0], dtype=bool)
    marked = _rolling_reduce(missing.astype(np.float64), window, np.max)
    return marked > 0.5


def _lag(x: _Series, k: int) -> _Series:
    length = x.values.shape[0]
    values = np.zeros(length, dtype=np.float64)
    mask = np.ones(length, dtype=bool)
    if k < length:
        values[k:] = x.values[: length - k]
        mask[k:] = x.missing[: length - k]
    return _Series(np.where(mask, 0.0, values), mask)


def _ewma(x: _Series, alpha: float) -> _Series:
    length = x.values.shape[0]
    values = np.zeros(length, dtype=np.float64)
    state: float | None = None
    for t in range(length):
        if x.missing[t]:
            continue
        xt = float(x.values[t])
        state = xt if state is None else alpha * xt + (1.0 - alpha) * state
        values[t] = state
    return _Series(values, x.missing.copy())


def _windowed(x: _Series, window: int, fn) -> _Series:
    mask = _rolling_missing(x.missing, window)
    values = _rolling_reduce(np.where(x.missing, 0.0, x.values), window, fn)
    return _Series(np.where(mask, 0.0, values), mask)


def _zscore(x: _Series, window: int) -> _Series:
    mask = _rolling_missing(x.missing, window)
    clean = np.where(x.missing, 0.0, x.values)
    mu = _rolling_reduce(clean, window, np.mean)
    sd = _rolling_reduce(clean, window, np.std)
    values = (clean - mu) / (sd + ZSCORE_EPS)
    return _Series(np.where(mask, 0.0, values), mask)


class _Evaluator:
    def __init__(self, table: TimeSeriesTable) -> None:
        self._table = table
        self._length = table.num_rows
        self._env: dict[str, _Series] = {}

    def run(self, rule: TypedRule) -> np.ndarray:
        for name, expr in rule.ast.bindings:
            self._env[name] = self._eval(expr)
        result = self._eval(rule.ast.result)
        # Final coercion: MISSING scores do not alarm.
        return np.where(result.missing, 0.0, result.values)

    def _eval(self, expr: Expr) -> _Series:
        if isinstance(expr, Num):
            return _const(expr.value, self._length)
        if isinstance(expr, FeatureRef):
            column = np.ascontiguousarray(self._table.column(expr.name))
            return _Series(column, np.zeros(self._length, dtype=bool))
        if isinstance(expr, VarRef):
            return self._env[expr.name]
        if isinstance(expr, Unary):
            operand = self._eval(expr.operand)
            if expr.op == "-":
                return _Series(
                    np.where(operand.missing, 0.0, -operand.values), operand.missing.copy()
                )
            # not: Kleene negation
            values = np.where(operand.values == 0.0, 1.0, 0.0)
            return _Series(np.where(operand.missing, 0.0, values), operand.missing.copy())
        if isinstance(expr, BinOp):
            return self._eval_binop(expr)
        if isinstance(expr, Call):
            return self._eval_call(expr)
        raise TypeError(f"not an expression node: {expr!r}")

    def _eval_binop(self, expr: BinOp) -> _Series:
        left = self._eval(expr.left)
        right = self._eval(expr.right)
        op = expr.op
        if op == "and":
            known_false = (~left.missing & (left.values == 0.0)) | (
                ~right.missing & (right.values == 0.0)
            )
            mask = (left.missing | right.missing) & ~known_false
            values = ((left.values != 0.0) & (right.values != 0.0)).astype(np.float64)
            values[known_false] = 0.0
            return _Series(np.where(mask, 0.0, values), mask)
        if op == "or":
            known_true = (~left.missing & (left.values != 0.0)) | (
                ~right.missing & (right.values != 0.0)
            )
            mask = (left.missing | right.missing) & ~known_true
            values = ((left.values != 0.0) | (right.values != 0.0)).astype(np.float64)
            values[known_true] = 1.0
            return _Series(np.where(mask, 0.0, values), mask)
        mask = left.missing | right.missing
        if op in (">", "<", ">=", "<=", "==", "!="):
            compare = {
                ">": np.greater, "<": np.less, ">=": np.greater_equal,
                "<=": np.less_equal, "==": np.equal, "!=": np.not_equal,
            }[op]
            values = compare(left.values, right.values).astype(np.float64)
            return _Series(np.where(mask, 0.0, values), mask)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if op == "+":
                values = left.values + right.values
            elif op == "-":
                values = left.values - right.values
            elif op == "*":
                values = left.values * right.values
            else:  # division: a runtime zero denominator is MISSING at that row
                zero_den = ~right.missing & (right.values == 0.0)
                mask = mask | zero_den
                values = np.divide(
                    left.values,
                    right.values,
                    out=np.zeros(self._length, dtype=np.float64),
                    where=~mask,
                )
        return _clean_arith(values, mask)

    def _eval_call(self, expr: Call) -> _Series:
        name = expr.name
        if name == "abs":
            x = self._eval(expr.args[0])
            return _Series(np.where(x.missing, 0.0, np.abs(x.values)), x.missing.copy())
        if name == "clip":
            x, lo, hi = (self._eval(a) for a in expr.args)
            mask = x.missing | lo.missing | hi.missing
            values = np.clip(x.values, lo.values, hi.values)
            return _Series(np.where(mask, 0.0, values), mask)
        if name in ("mean", "std", "rmin", "rmax", "zscore"):
            x = self._eval(expr.args[0])
            window = self._literal_int(expr.args[1])
            if name == "zscore":
                return _zscore(x, window)
            fn = {"mean": np.mean, "std": np.std, "rmin": np.min, "rmax": np.max}[name]
            return _windowed(x, window, fn)
        if name == "lag":
            return _lag(self._eval(expr.args[0]), self._literal_int(expr.args[1]))
        if name == "delta":
            x = self._eval(expr.args[0])
            lagged = _lag(x, self._literal_int(expr.args[1]))
            mask = x.missing | lagged.missing
            values = np.where(mask, 0.0, x.values - lagged.values)
            return _clean_arith(values, mask)
        if name == "ewma":
            arg = expr.args[1]
            assert isinstance(arg, Num)
            return _ewma(self._eval(expr.args[0]), arg.value)
        raise TypeError(f"unknown builtin {name!r}")

    @staticmethod
    def _literal_int(expr: Expr) -> int:
        assert isinstance(expr, Num)  # enforced by the parser
        return int(expr.value)


def evaluate(rule: TypedRule, table: TimeSeriesTable) -> np.ndarray:
    """Evaluate a typechecked rule over all rows, returning finite scores.

    Raises `BudgetError` when node_count x T x max_window exceeds the fixed
    evaluation budget; the caller is expected to mark such candidates invalid
    rather than retry.
    """
    cost = rule.node_count * table.num_rows * rule.max_window
    if cost > EVAL_BUDGET:
        raise BudgetError(
            f"evaluation budget exceeded: {rule.node_count} nodes x {table.num_rows} rows "
            f"x window {rule.max_window} = {cost} > {EVAL_BUDGET}"
        )
    return _Evaluator(table).run(rule)


def to_flags(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binarize scores with a strict > comparison."""
    return (np.asarray(scores, dtype=np.float64) > threshold).astype(np.uint8)
