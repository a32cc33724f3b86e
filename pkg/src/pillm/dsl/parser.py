"""Recursive-descent parser for the anomaly-rule DSL.

Grammar (whitespace-insensitive; `#` starts a comment running to end of line):

    program := { binding } "return" expr
    binding := IDENT "=" expr terminator
    expr    := or ;  or := and { "or" and } ;  and := not { "and" not }
    not     := [ "not" ] cmp
    cmp     := add [ ( ">" | "<" | ">=" | "<=" | "==" | "!=" ) add ]
    add     := mul { ( "+" | "-" ) mul } ;  mul := unary { ( "*" | "/" ) unary }
    unary   := [ "-" ] primary
    primary := NUMBER | "$" IDENT | IDENT | call | "(" expr ")"
    call    := IDENT "(" [ expr { "," expr } ] ")"

A binding's terminator is a newline or `;`. Newlines inside parentheses are
joined implicitly, so expressions may wrap across lines when parenthesized.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DslSyntaxError
from .nodes import BinOp, Call, Expr, FeatureRef, Num, Pos, RuleAst, Unary, VarRef, count_nodes

MAX_SOURCE_BYTES = 16 * 1024
MAX_NODES = 512
MAX_BINDINGS = 32
MIN_WINDOW = 1
MAX_WINDOW = 1024

# builtin -> (arity, index of the window/lag literal argument, or None)
BUILTINS: dict[str, tuple[int, int | None]] = {
    "abs": (1, None),
    "clip": (3, None),
    "mean": (2, 1),
    "std": (2, 1),
    "rmin": (2, 1),
    "rmax": (2, 1),
    "lag": (2, 1),
    "delta": (2, 1),
    "ewma": (2, None),  # second argument is a real literal in (0, 1]
    "zscore": (2, 1),
}

KEYWORDS = ("return", "and", "or", "not")

_TOKEN_RE = re.compile(
    r"""
    (?P<NUMBER>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<FEATURE>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<OP>>=|<=|==|!=|[><+\-*/(),;=])
  | (?P<NEWLINE>\n)
  | (?P<SKIP>[ \t\r]+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<BAD>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER, FEATURE, IDENT, KEYWORD, OP, NEWLINE, EOF
    text: str
    pos: Pos


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, line_start = 1, 0
    depth = 0
    for match in _TOKEN_RE.finditer(source):
        kind = match.lastgroup or "BAD"
        text = match.group()
        pos = (line, match.start() - line_start + 1)
        if kind == "NEWLINE":
            # Implicit line joining inside parentheses.
            if depth == 0 and tokens and tokens[-1].kind != "NEWLINE":
                tokens.append(_Token("NEWLINE", text, pos))
            line += 1
            line_start = match.end()
            continue
        if kind in ("SKIP", "COMMENT"):
            continue
        if kind == "BAD":
            raise DslSyntaxError(f"unexpected character {text!r}", *pos)
        if kind == "IDENT" and text in KEYWORDS:
            kind = "KEYWORD"
        if kind == "OP":
            if text == "(":
                depth += 1
            elif text == ")":
                depth = max(0, depth - 1)
        tokens.append(_Token(kind, text, pos))
    tokens.append(_Token("EOF", "", (line, len(source) - line_start + 1)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]) -> None:
        self._tokens = tokens
        self._i = 0

    def _peek(self, offset: int = 0) -> _Token:
        return self._tokens[min(self._i + offset, len(self._tokens) - 1)]

    def _advance(self) -> _Token:
        tok = self._tokens[self._i]
        if tok.kind != "EOF":
            self._i += 1
        return tok

    def _expect_op(self, text: str) -> _Token:
        tok = self._peek()
        if tok.kind != "OP" or tok.text != text:
            raise DslSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", *tok.pos)
        return self._advance()

    def _skip_newlines(self) -> None:
        while self._peek().kind == "NEWLINE":
            self._advance()

    def parse_program(self) -> RuleAst:
        bindings: list[tuple[str, Expr]] = []
        bound: set[str] = set()
        self._skip_newlines()
        while self._peek().kind == "IDENT" and self._peek(1).kind == "OP" and self._peek(1).text == "=":
            name_tok = self._advance()
            self._advance()  # '='
            if name_tok.text in bound:
                raise DslSyntaxError(f"identifier {name_tok.text!r} is already bound", *name_tok.pos)
            expr = self._parse_expr(bound)
            self._terminator()
            bound.add(name_tok.text)
            bindings.append((name_tok.text, expr))
            if len(bindings) > MAX_BINDINGS:
                raise DslSyntaxError(
                    f"too many bindings (cap {MAX_BINDINGS})", *name_tok.pos
                )
            self._skip_newlines()
        tok = self._peek()
        if not (tok.kind == "KEYWORD" and tok.text == "return"):
            raise DslSyntaxError(
                f"expected 'return', found {tok.text or 'end of input'!r}", *tok.pos
            )
        self._advance()
        result = self._parse_expr(bound)
        self._skip_newlines()
        trailing = self._peek()
        if trailing.kind != "EOF":
            raise DslSyntaxError(f"unexpected input after return expression: {trailing.text!r}", *trailing.pos)
        node_count = count_nodes(result) + sum(count_nodes(e) for _, e in bindings)
        if node_count > MAX_NODES:
            raise DslSyntaxError(f"rule has {node_count} nodes (cap {MAX_NODES})", 1, 1)
        return RuleAst(bindings=tuple(bindings), result=result, node_count=node_count)

    def _terminator(self) -> None:
        tok = self._peek()
        if tok.kind == "NEWLINE":
            self._advance()
            return
        if tok.kind == "OP" and tok.text == ";":
            self._advance()
            return
        raise DslSyntaxError(
            f"expected end of binding (newline or ';'), found {tok.text or 'end of input'!r}",
            *tok.pos,
        )

    def _parse_expr(self, bound: set[str]) -> Expr:
        return self._parse_or(bound)

    def _parse_or(self, bound: set[str]) -> Expr:
        node = self._parse_and(bound)
        while self._peek().kind == "KEYWORD" and self._peek().text == "or":
            op = self._advance()
            node = BinOp("or", node, self._parse_and(bound), pos=op.pos)
        return node

    def _parse_and(self, bound: set[str]) -> Expr:
        node = self._parse_not(bound)
        while self._peek().kind == "KEYWORD" and self._peek().text == "and":
            op = self._advance()
            node = BinOp("and", node, self._parse_not(bound), pos=op.pos)
        return node

    def _parse_not(self, bound: set[str]) -> Expr:
        tok = self._peek()
        if tok.kind == "KEYWORD" and tok.text == "not":
            self._advance()
            return Unary("not", self._parse_cmp(bound), pos=tok.pos)
        return self._parse_cmp(bound)

    def _parse_cmp(self, bound: set[str]) -> Expr:
        node = self._parse_add(bound)
        tok = self._peek()
        if tok.kind == "OP" and tok.text in (">", "<", ">=", "<=", "==", "!="):
            self._advance()
            node = BinOp(tok.text, node, self._parse_add(bound), pos=tok.pos)
        return node

    def _parse_add(self, bound: set[str]) -> Expr:
        node = self._parse_mul(bound)
        while True:
            tok = self._peek()
            if tok.kind == "OP" and tok.text in ("+", "-"):
                self._advance()
                node = BinOp(tok.text, node, self._parse_mul(bound), pos=tok.pos)
            else:
                return node

    def _parse_mul(self, bound: set[str]) -> Expr:
        node = self._parse_unary(bound)
        while True:
            tok = self._peek()
            if tok.kind == "OP" and tok.text in ("*", "/"):
                self._advance()
                node = BinOp(tok.text, node, self._parse_unary(bound), pos=tok.pos)
            else:
                return node

    def _parse_unary(self, bound: set[str]) -> Expr:
        tok = self._peek()
        if tok.kind == "OP" and tok.text == "-":
            self._advance()
            return Unary("-", self._parse_primary(bound), pos=tok.pos)
        return self._parse_primary(bound)

    def _parse_primary(self, bound: set[str]) -> Expr:
        tok = self._peek()
        if tok.kind == "NUMBER":
            self._advance()
            return Num(float(tok.text), pos=tok.pos)
        if tok.kind == "FEATURE":
            self._advance()
            return FeatureRef(tok.text[1:], pos=tok.pos)
        if tok.kind == "IDENT":
            if self._peek(1).kind == "OP" and self._peek(1).text == "(":
                return self._parse_call(bound)
            self._advance()
            if tok.text not in bound:
                raise DslSyntaxError(f"unknown identifier {tok.text!r}", *tok.pos)
            return VarRef(tok.text, pos=tok.pos)
        if tok.kind == "OP" and tok.text == "(":
            self._advance()
            node = self._parse_expr(bound)
            self._expect_op(")")
            return node
        raise DslSyntaxError(f"expected an expression, found {tok.text or 'end of input'!r}", *tok.pos)

    def _parse_call(self, bound: set[str]) -> Expr:
        name_tok = self._advance()
        self._expect_op("(")
        args: list[Expr] = []
        if not (self._peek().kind == "OP" and self._peek().text == ")"):
            args.append(self._parse_expr(bound))
            while self._peek().kind == "OP" and self._peek().text == ",":
                self._advance()
                args.append(self._parse_expr(bound))
        self._expect_op(")")
        name = name_tok.text
        if name not in BUILTINS:
            raise DslSyntaxError(f"unknown builtin {name!r}", *name_tok.pos)
        arity, window_arg = BUILTINS[name]
        if len(args) != arity:
            raise DslSyntaxError(
                f"{name}() takes {arity} argument{'s' if arity != 1 else ''}, got {len(args)}",
                *name_tok.pos,
            )
        if window_arg is not None:
            self._check_window_literal(name, args[window_arg])
        if name == "ewma":
            self._check_ewma_literal(args[1])
        return Call(name, tuple(args), pos=name_tok.pos)

    @staticmethod
    def _check_window_literal(name: str, arg: Expr) -> None:
        if not isinstance(arg, Num) or arg.value != int(arg.value):
            pos = getattr(arg, "pos", (0, 0))
            raise DslSyntaxError(f"window for {name}() must be an integer literal", *pos)
        if not MIN_WINDOW <= int(arg.value) <= MAX_WINDOW:
            raise DslSyntaxError(
                f"window for {name}() out of range [{MIN_WINDOW}, {MAX_WINDOW}]", *arg.pos
            )

    @staticmethod
    def _check_ewma_literal(arg: Expr) -> None:
        if not isinstance(arg, Num):
            pos = getattr(arg, "pos", (0, 0))
            raise DslSyntaxError("smoothing factor for ewma() must be a real literal", *pos)
        if not 0.0 < arg.value <= 1.0:
            raise DslSyntaxError("smoothing factor for ewma() must lie in (0, 1]", *arg.pos)


def parse(source: str) -> RuleAst:
    """Parse rule source text into an AST, enforcing the structural caps."""
    if len(source.encode("utf-8")) > MAX_SOURCE_BYTES:
        raise DslSyntaxError(f"source exceeds {MAX_SOURCE_BYTES} bytes", 1, 1)
    return _Parser(_tokenize(source)).parse_program()
