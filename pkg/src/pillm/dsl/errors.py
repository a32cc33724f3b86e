"""Diagnostics for the rule DSL; every error renders as LINE:COL: message."""

from __future__ import annotations


class DslError(Exception):
    """Base class for rule parsing, checking, and evaluation failures."""

    def __init__(self, message: str, line: int = 0, col: int = 0) -> None:
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}")


class DslSyntaxError(DslError):
    """Lexical or grammatical failure, including structural caps."""


class DslTypeError(DslError):
    """Static check failure: unknown feature, type mismatch, literal-zero division."""


class BudgetError(DslError):
    """The rule exceeds the evaluation budget for the given table."""
