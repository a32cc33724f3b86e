"""Completion providers: one real HTTP backend and two offline doubles.

All providers answer `complete(CompletionRequest) -> CompletionResult`. The
HTTP provider speaks the generic chat-completions wire shape (two-role
message list in, text choice out). The scripted provider replays canned
responses matched by request tag in file order, and the grammar sampler
fabricates valid DSL rules deterministically, which makes full evolutionary
runs reproducible with zero network access.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import requests

from .dsl.formatter import format_rule
from .dsl.nodes import BinOp, Call, Expr, FeatureRef, Num, RuleAst, Unary, VarRef, count_nodes
from .dsl.parser import MAX_BINDINGS, MAX_NODES, parse

# The reporting layer adds "narrate" on top of the four evolutionary tags.
REQUEST_TAGS = ("init", "reflection", "crossover", "mutation", "narrate")

API_KEY_ENV = "PILLM_API_KEY"

RETRY_MAX_ATTEMPTS = 5
RETRY_BASE_SECONDS = 1.0
RETRY_FACTOR = 2.0


class ProviderError(Exception):
    """Base class for completion failures."""


class ProviderConfigError(ProviderError):
    """The provider is not usable as configured (e.g. missing API key)."""


class CompletionError(ProviderError):
    """The provider failed to produce a response after retries."""


class ScriptExhaustedError(ProviderError):
    """The scripted response file has no remaining record for a tag."""


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    tag: str
    temperature: float = 0.2
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.system_prompt.strip():
            raise ValueError("system_prompt must be non-empty")
        if not self.user_prompt.strip():
            raise ValueError("user_prompt must be non-empty")
        if self.tag not in REQUEST_TAGS:
            raise ValueError(f"unknown request tag {self.tag!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider_id: str
    latency_ms: int
    attempt: int


class Provider(Protocol):
    provider_id: str

    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class HttpProvider:
    """Chat-completions-style HTTP backend with retry and an in-flight cap.

    Retries 429, 5xx, timeouts, and connection failures with exponential
    backoff (base 1 s, factor 2, full jitter, at most 5 attempts). The API
    key is read from the environment only; config files never carry it.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        timeout_secs: float = 60.0,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        sleeper=time.sleep,
    ) -> None:
        if not endpoint:
            raise ProviderConfigError("http provider requires an endpoint URL")
        if not model:
            raise ProviderConfigError("http provider requires a model name")
        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ProviderConfigError(
                f"environment variable {API_KEY_ENV} is not set; "
                "the HTTP provider never reads keys from config files"
            )
        self._endpoint = endpoint
        self._model = model
        self._timeout = timeout_secs
        self._api_key = api_key
        self._session = session or requests.Session()
        self._sleep = sleeper
        self._gate = threading.Semaphore(max_in_flight)
        self._rng = random.Random()
        self._calls = 0
        self.provider_id = f"http:{model}"

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self._model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        self._calls += 1
        start = time.monotonic()
        last_reason = "no attempt made"
        for attempt in range(1, RETRY_MAX_ATTEMPTS + 1):
            try:
                with self._gate:
                    response = self._session.post(
                        self._endpoint, json=payload, headers=headers, timeout=self._timeout
                    )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_reason = f"network error: {exc}"
            else:
                if response.status_code == 429 or response.status_code >= 500:
                    last_reason = f"HTTP {response.status_code}"
                elif response.status_code != 200:
                    raise CompletionError(
                        f"[{request.tag}] HTTP {response.status_code}: {response.text[:200]}"
                    )
                else:
                    text = self._extract_text(response, request.tag)
                    latency = int((time.monotonic() - start) * 1000)
                    return CompletionResult(
                        text=text, provider_id=self.provider_id,
                        latency_ms=latency, attempt=attempt,
                    )
            if attempt < RETRY_MAX_ATTEMPTS:
                ceiling = RETRY_BASE_SECONDS * (RETRY_FACTOR ** (attempt - 1))
                self._sleep(self._rng.uniform(0.0, ceiling))
        raise CompletionError(
            f"[{request.tag}] gave up after {RETRY_MAX_ATTEMPTS} attempts ({last_reason})"
        )

    @staticmethod
    def _extract_text(response, tag: str) -> str:
        try:
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise CompletionError(f"[{tag}] malformed response body") from None


class ScriptedProvider:
    """Replays canned responses from a JSON-lines script, matched by tag.

    Each record is `{"tag": ..., "text": ...}`. A request consumes the first
    unconsumed record with its tag, in file order; when none remains the
    provider raises, which fails the run loudly instead of improvising.
    Requests tagged `narrate` echo the prompt (pass-through contract for the
    reporting path), so scripts never need narration records.
    """

    provider_id = "scripted"

    def __init__(self, records: Sequence[dict]) -> None:
        cleaned = []
        for i, record in enumerate(records):
            if not isinstance(record, dict) or "tag" not in record or "text" not in record:
                raise ProviderConfigError(f"script record {i} must have 'tag' and 'text'")
            if record["tag"] not in REQUEST_TAGS:
                raise ProviderConfigError(f"script record {i} has unknown tag {record['tag']!r}")
            cleaned.append((str(record["tag"]), str(record["text"])))
        self._records = cleaned
        self._consumed = [False] * len(cleaned)
        self._lock = threading.Lock()
        self._calls = 0

    @classmethod
    def from_path(cls, path: str | Path) -> "ScriptedProvider":
        records = []
        for line_num, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ProviderConfigError(f"script line {line_num} is not valid JSON: {exc}") from None
        return cls(records)

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, request: CompletionRequest) -> CompletionResult:
        with self._lock:
            self._calls += 1
            if request.tag == "narrate":
                return CompletionResult(
                    text=request.user_prompt, provider_id=self.provider_id,
                    latency_ms=0, attempt=1,
                )
            for i, (tag, text) in enumerate(self._records):
                if not self._consumed[i] and tag == request.tag:
                    self._consumed[i] = True
                    return CompletionResult(
                        text=text, provider_id=self.provider_id, latency_ms=0, attempt=1
                    )
        raise ScriptExhaustedError(f"no scripted response left for tag {request.tag!r}")


class SamplerProvider:
    """Deterministic rule fabricator standing in for a generator LLM.

    Ignores the prompt text entirely. Every call yields a fenced, valid DSL
    rule over the configured features plus a fixed-format context paragraph;
    the sequence of responses is a pure function of (seed, call order).
    """

    def __init__(self, seed: int, feature_names: Sequence[str], depth_budget: int = 4) -> None:
        if not feature_names:
            raise ProviderConfigError("sampler provider requires at least one feature name")
        self._seed = seed
        self._features = tuple(feature_names)
        self._depth = depth_budget
        self._counter = 0
        self._lock = threading.Lock()
        self.provider_id = f"sampler:{seed}"

    @property
    def call_count(self) -> int:
        return self._counter

    def complete(self, request: CompletionRequest) -> CompletionResult:
        with self._lock:
            self._counter += 1
            if request.tag == "narrate":
                return CompletionResult(
                    text=request.user_prompt, provider_id=self.provider_id,
                    latency_ms=0, attempt=1,
                )
            call_seed = self._seed * 1_000_003 + self._counter
            code = sample_rule(call_seed, self._features, self._depth)
            names = sorted({n.name for n in _walk_features(code)})
            text = (
                f"```rule\n{code}\n```\n\n"
                "```context\n"
                f"Sampled hypothesis: deviations in {', '.join(names)} relative to recent "
                "behavior indicate abnormal operation of the conditioning loop.\n"
                "```"
            )
            return CompletionResult(
                text=text, provider_id=self.provider_id, latency_ms=0, attempt=1
            )


def _walk_features(code: str) -> Iterator[FeatureRef]:
    ast = parse(code)

    def visit(expr: Expr) -> Iterator[FeatureRef]:
        if isinstance(expr, FeatureRef):
            yield expr
        elif isinstance(expr, Call):
            for a in expr.args:
                yield from visit(a)
        elif isinstance(expr, Unary):
            yield from visit(expr.operand)
        elif isinstance(expr, BinOp):
            yield from visit(expr.left)
            yield from visit(expr.right)

    for _, bound in ast.bindings:
        yield from visit(bound)
    yield from visit(ast.result)


_WINDOWS = (5, 10, 15, 30, 60, 120)
_LAGS = (1, 2, 5, 10, 30)
_ALPHAS = (0.1, 0.2, 0.3, 0.5)
_CMP_OPS = (">", "<", ">=", "<=")


class _RuleSampler:
    def __init__(self, rng: random.Random, features: Sequence[str]) -> None:
        self._rng = rng
        self._features = list(features)
        self._bound: list[str] = []

    def _leaf(self) -> Expr:
        names = self._features + self._bound
        pick = self._rng.choice(names)
        if pick in self._bound:
            return VarRef(pick)
        return FeatureRef(pick)

    def _numeric(self, depth: int) -> Expr:
        if depth <= 0:
            return self._leaf()
        roll = self._rng.random()
        if roll < 0.25:
            return self._leaf()
        if roll < 0.75:
            name = self._rng.choice(
                ("mean", "std", "rmin", "rmax", "zscore", "delta", "lag", "ewma", "abs")
            )
            inner = self._numeric(depth - 1)
            if name == "abs":
                return Call("abs", (inner,))
            if name in ("delta", "lag"):
                return Call(name, (inner, Num(float(self._rng.choice(_LAGS)))))
            if name == "ewma":
                return Call(name, (inner, Num(self._rng.choice(_ALPHAS))))
            return Call(name, (inner, Num(float(self._rng.choice(_WINDOWS)))))
        op = self._rng.choice(("+", "-", "*"))
        return BinOp(op, self._numeric(depth - 1), self._numeric(depth - 1))

    def _threshold(self) -> Expr:
        value = round(self._rng.uniform(0.0, 30.0), 2)
        node: Expr = Num(value)
        if self._rng.random() < 0.2:
            node = Unary("-", node)
        return node

    def _comparison(self, depth: int) -> Expr:
        return BinOp(self._rng.choice(_CMP_OPS), self._numeric(depth - 1), self._threshold())

    def _boolean(self, depth: int) -> Expr:
        if depth <= 1:
            return self._comparison(max(depth, 1))
        roll = self._rng.random()
        if roll < 0.55:
            return self._comparison(depth)
        if roll < 0.9:
            op = self._rng.choice(("and", "or"))
            return BinOp(op, self._boolean(depth - 1), self._boolean(depth - 1))
        return Unary("not", self._comparison(depth - 1))

    def build(self, depth_budget: int) -> RuleAst:
        bindings: list[tuple[str, Expr]] = []
        if self._rng.random() < 0.4:
            for i in range(self._rng.choice((1, 2))):
                name = f"sig_{i}"
                expr = self._numeric(depth_budget - 1)
                bindings.append((name, expr))
                self._bound.append(name)
        result = self._boolean(depth_budget)
        node_count = count_nodes(result) + sum(count_nodes(e) for _, e in bindings)
        return RuleAst(bindings=tuple(bindings), result=result, node_count=node_count)


def sample_rule(seed: int, features: Sequence[str], depth_budget: int = 4) -> str:
    """Generate valid DSL source drawing feature refs from `features`.

    Deterministic in (seed, feature order, depth budget). The output always
    parses, typechecks against `features`, and respects the structural caps.
    """
    if not features:
        raise ValueError("features must be non-empty")
    if depth_budget < 1:
        raise ValueError("depth_budget must be >= 1")
    rng = random.Random(seed)
    depth = depth_budget
    while True:
        ast = _RuleSampler(rng, features).build(depth)
        if ast.node_count <= MAX_NODES and len(ast.bindings) <= MAX_BINDINGS:
            return format_rule(ast)
        # Oversized draws are possible only at large depth budgets; shrink
        # and redraw so the output always respects the structural caps.
        depth = max(1, depth - 1)
