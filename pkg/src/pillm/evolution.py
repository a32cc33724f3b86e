"""The evolutionary loop: LLM-backed genetic operators over rule candidates.

Each generation reflects on worse/better rule pairs (physical-context-aware
hints), crosses pairs over into offspring guided by those hints, and mutates
the elites under a rolling digest of recent reflections. Survivor selection
is mu+lambda truncation with explicit elitism, so best-ever fitness never
decreases. Fitness is the event-level point-adjusted F1 on the training
split. Both reflection and crossover can be disabled independently for
ablation runs.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import prompts
from .dsl import BudgetError, DslError, TypedRule, compile_rule, evaluate, to_flags
from .metrics import MetricReport, event_f1_pa
from .providers import (
    CompletionRequest,
    ProviderError,
    Provider,
)
from .timeseries import FeatureMeta, TimeSeriesTable

OPERATORS = ("seed", "init", "crossover", "mutation")

NO_REFLECTION_TEXT = "No reflection available."
NO_REFLECTIONS_YET = "(no reflections yet)"


class ConfigError(ValueError):
    """The evolution configuration is structurally invalid."""


@dataclass
class RuleCandidate:
    """One rule in the population, with lineage and evaluation results.

    `fitness is None` is the INVALID sentinel: the candidate failed response
    extraction, parsing, typechecking, or blew the evaluation budget. Such
    candidates stay in the log but never act as parents.
    """

    id: str
    code: str
    context: str
    operator: str
    generation: int
    parent_ids: tuple[str, ...] = ()
    fitness: float | None = None
    metrics: MetricReport | None = None
    request_tags_used: tuple[str, ...] = ()
    error: str | None = None
    version: int = 1
    rule: TypedRule | None = field(default=None, repr=False, compare=False)

    @property
    def is_valid(self) -> bool:
        return self.fitness is not None

    @property
    def code_hash(self) -> str:
        return hashlib.sha256(self.code.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Reflection:
    comments: str
    context: str
    pair: tuple[str, str]  # (worse_id, better_id)


@dataclass
class EvolutionConfig:
    population_size: int = 10
    generations: int = 10
    elite_count: int = 2
    pairs_per_gen: int | None = None
    threshold: float = 0.5
    seed: int = 0
    enable_pir: bool = True
    enable_pic: bool = True
    retry_budget: int = 2
    long_term_window: int = 5
    llm_call_budget: int = 200
    train_fraction: float = 0.7
    init_temperature: float = 0.7
    refine_temperature: float = 0.2
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.pairs_per_gen is None:
            self.pairs_per_gen = max(1, self.population_size // 2)
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must satisfy 0 <= elite_count < population_size")
        if self.pairs_per_gen < 1:
            raise ConfigError("pairs_per_gen must be >= 1")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.retry_budget < 0:
            raise ConfigError("retry_budget must be >= 0")
        if self.long_term_window < 1:
            raise ConfigError("long_term_window must be >= 1")
        if self.llm_call_budget < 1:
            raise ConfigError("llm_call_budget must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if not math.isfinite(self.threshold):
            raise ConfigError("threshold must be finite")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EvolutionConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(doc) - known - {"provider"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = {k: v for k, v in doc.items() if k in known}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "generations": self.generations,
            "elite_count": self.elite_count,
            "pairs_per_gen": self.pairs_per_gen,
            "threshold": self.threshold,
            "seed": self.seed,
            "enable_pir": self.enable_pir,
            "enable_pic": self.enable_pic,
            "retry_budget": self.retry_budget,
            "long_term_window": self.long_term_window,
            "llm_call_budget": self.llm_call_budget,
            "train_fraction": self.train_fraction,
            "init_temperature": self.init_temperature,
            "refine_temperature": self.refine_temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass
class RunResult:
    best: RuleCandidate | None
    population: list[RuleCandidate]
    records: list[dict]
    generations_completed: int
    llm_calls: int
    aborted: bool
    best_fitness_history: list[float]
    request_tags: tuple[str, ...] = ()


def default_seed_rule(metas: Sequence[FeatureMeta]) -> tuple[str, str]:
    """Trivial peak-over-threshold baseline over the first sensor feature."""
    target = next((m for m in metas if m.role == "sensor"), metas[0])
    code = f"return zscore(${target.name}, 60) > 3"
    context = (
        f"A sustained excursion of {target.name} more than three standard deviations "
        "from its trailing one-hour mean indicates operation outside the normal "
        "control envelope."
    )
    return code, context


def select_pairs(
    population: Sequence[RuleCandidate], rng: random.Random, pairs_per_gen: int
) -> list[tuple[RuleCandidate, RuleCandidate]]:
    """Draw (worse, better) pairs uniformly without replacement within a pair.

    Pairs with equal fitness are skipped and redrawn, up to 10x pairs_per_gen
    draws in total, so an all-tied population yields an empty list.
    """
    valid = [c for c in population if c.fitness is not None]
    if len(valid) < 2:
        return []
    pairs: list[tuple[RuleCandidate, RuleCandidate]] = []
    draws = 0
    while len(pairs) < pairs_per_gen and draws < 10 * pairs_per_gen:
        draws += 1
        first, second = rng.sample(valid, 2)
        if first.fitness == second.fitness:
            continue
        worse, better = (first, second) if first.fitness < second.fitness else (second, first)
        pairs.append((worse, better))
    return pairs


def long_term_reflection(history: Sequence[Reflection], window: int) -> str:
    """Digest of the most recent reflections, newest last, one bullet each."""
    if not history:
        return NO_REFLECTIONS_YET
    bullets = []
    for reflection in history[-window:]:
        merged = " ".join(f"{reflection.comments} {reflection.context}".split())
        bullets.append(f"- {merged}")
    return "\n".join(bullets)


def _rank_key(candidate: RuleCandidate) -> tuple:
    invalid = candidate.fitness is None
    return (invalid, -(candidate.fitness or 0.0), candidate.id)


class _CallBudgetExhausted(Exception):
    pass


class _RunAborted(Exception):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(reason)


class EvolutionEngine:
    """Coordinates providers, prompts, the DSL, and metrics for one run."""

    def __init__(
        self,
        config: EvolutionConfig,
        train_table: TimeSeriesTable,
        provider: Provider,
        log=None,
        prompts_dir=None,
    ) -> None:
        if not train_table.has_labels:
            raise ValueError("training table must be labeled")
        self.config = config
        self.train_table = train_table
        self.provider = provider
        self.log = log
        self.prompts_dir = prompts_dir
        self._rng = random.Random(config.seed)
        self._next_index = 0
        self._calls = 0
        self._records: list[dict] = []
        self._seen: list[RuleCandidate] = []
        self._request_tags: list[str] = []
        self._reflections: list[Reflection] = []
        self._feature_names = tuple(train_table.feature_names)
        self._task_description = prompts.default_task_description()
        self._feature_list = prompts.feature_list_text(train_table.features)
        self._system_prompt = prompts.render(
            "generator_system",
            {"task_description": self._task_description},
            prompts_dir=prompts_dir,
        )

    # ---- provider plumbing -------------------------------------------------

    @property
    def llm_calls(self) -> int:
        return self._calls

    @property
    def records(self) -> list[dict]:
        return self._records

    def _complete(self, tag: str, system: str, user: str, temperature: float) -> str:
        if self._calls >= self.config.llm_call_budget:
            raise _CallBudgetExhausted()
        self._calls += 1
        self._request_tags.append(tag)
        request = CompletionRequest(
            system_prompt=system,
            user_prompt=user,
            tag=tag,
            temperature=temperature,
            max_tokens=self.config.max_tokens,
        )
        return self.provider.complete(request).text

    def _request_rule(
        self, tag: str, user_prompt: str
    ) -> tuple[prompts.ParsedResponse | None, TypedRule | None, list[str], str | None]:
        """Ask for a rule, retrying extraction/parse/typecheck failures.

        Returns (parsed, compiled, tags_used, error). Provider failures
        propagate to the caller, which decides between aborting and marking
        the slot invalid.
        """
        temperature = (
            self.config.init_temperature if tag == "init" else self.config.refine_temperature
        )
        tags_used: list[str] = []
        last_error: str | None = None
        last_parsed: prompts.ParsedResponse | None = None
        for _ in range(1 + self.config.retry_budget):
            text = self._complete(tag, self._system_prompt, user_prompt, temperature)
            tags_used.append(tag)
            try:
                parsed = prompts.parse_response(text)
            except prompts.ExtractionError as exc:
                last_error = str(exc)
                continue
            last_parsed = parsed
            try:
                rule = compile_rule(parsed.code, self._feature_names)
            except DslError as exc:
                last_error = str(exc)
                continue
            return parsed, rule, tags_used, None
        return last_parsed, None, tags_used, last_error

    def _new_id(self) -> str:
        candidate_id = f"c{self._next_index:04d}"
        self._next_index += 1
        return candidate_id

    # ---- operators ---------------------------------------------------------

    def init_population(self, seed_rule: tuple[str, str] | None = None) -> list[RuleCandidate]:
        """Seed candidate plus N-1 init-prompt completions."""
        code, context = seed_rule or default_seed_rule(self.train_table.features)
        seed = RuleCandidate(
            id=self._new_id(),
            code=code,
            context=context,
            operator="seed",
            generation=0,
            version=1,
            rule=compile_rule(code, self._feature_names),
        )
        population = [seed]
        user_prompt = prompts.render(
            "init",
            {
                "task_description": self._task_description,
                "input_feature_list": self._feature_list,
                "seed_function": f"```rule\n{seed.code}\n```",
                "context_template": f"```context\n{seed.context}\n```",
                "func_name": "rule_v2",
            },
            prompts_dir=self.prompts_dir,
        )
        for _ in range(self.config.population_size - 1):
            try:
                parsed, rule, tags, error = self._request_rule("init", user_prompt)
            except _CallBudgetExhausted:
                break
            population.append(
                RuleCandidate(
                    id=self._new_id(),
                    code=parsed.code if parsed else "",
                    context=parsed.context if parsed else "",
                    operator="init",
                    generation=0,
                    version=2,
                    request_tags_used=tuple(tags),
                    error=error,
                    rule=rule,
                )
            )
        return population

    def evaluate_population(self, population: Sequence[RuleCandidate]) -> None:
        """Fill fitness for pending candidates and log each exactly once."""
        for candidate in population:
            if candidate.fitness is None and candidate.error is None:
                try:
                    scores = evaluate(candidate.rule, self.train_table)
                    flags = to_flags(scores, self.config.threshold)
                    report = event_f1_pa(flags, self.train_table.labels)
                    candidate.fitness = report.f1
                    candidate.metrics = report
                except BudgetError as exc:
                    candidate.error = str(exc)
                    candidate.rule = None
            self._log_candidate(candidate)

    def _log_candidate(self, candidate: RuleCandidate) -> None:
        self._seen.append(candidate)
        record = {
            "generation": candidate.generation,
            "candidate_id": candidate.id,
            "parent_ids": list(candidate.parent_ids),
            "operator": candidate.operator,
            "code": candidate.code,
            "context": candidate.context,
            "code_hash": candidate.code_hash,
            "fitness": candidate.fitness,
            "precision": candidate.metrics.precision if candidate.metrics else None,
            "recall": candidate.metrics.recall if candidate.metrics else None,
            "request_tags_used": list(candidate.request_tags_used),
            "error": candidate.error,
        }
        self._records.append(record)
        if self.log is not None:
            self.log.append(record)

    def _pair_bindings(self, worse: RuleCandidate, better: RuleCandidate) -> dict[str, str]:
        return {
            "task_description": self._task_description,
            "input_feature_list": self._feature_list,
            "worse_rules": f"```rule\n{worse.code}\n```",
            "worse_rules_physical_context": worse.context,
            "better_rules": f"```rule\n{better.code}\n```",
            "better_rules_physical_context": better.context,
        }

    def reflect(self, pair: tuple[RuleCandidate, RuleCandidate]) -> Reflection | None:
        """Ask for hints about why the better rule wins; None drops the pair."""
        worse, better = pair
        system = prompts.render(
            "reflection_system", self._pair_bindings(worse, better), prompts_dir=self.prompts_dir
        )
        try:
            text = self._complete(
                "reflection",
                system,
                "Respond now with your hints and the improved physical context.",
                self.config.refine_temperature,
            )
        except ProviderError:
            return None
        parts = [p.strip() for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
        if not parts:
            comments, context = "(none provided)", "(none provided)"
        elif len(parts) == 1:
            comments, context = parts[0], "(none provided)"
        else:
            comments, context = "\n\n".join(parts[:-1]), parts[-1]
        reflection = Reflection(comments=comments, context=context, pair=(worse.id, better.id))
        self._reflections.append(reflection)
        return reflection

    def crossover(
        self,
        pair: tuple[RuleCandidate, RuleCandidate],
        reflection: Reflection | None,
        generation: int,
    ) -> RuleCandidate:
        worse, better = pair
        version = max(worse.version, better.version) + 1
        bindings = self._pair_bindings(worse, better)
        bindings["reflection_comments"] = reflection.comments if reflection else NO_REFLECTION_TEXT
        bindings["reflection_context"] = reflection.context if reflection else ""
        bindings["function_name"] = f"rule_v{version}"
        user_prompt = prompts.render("crossover", bindings, prompts_dir=self.prompts_dir)
        return self._offspring(
            tag="crossover",
            user_prompt=user_prompt,
            operator="crossover",
            parents=(worse.id, better.id),
            generation=generation,
            version=version,
        )

    def elitist_mutate(self, elite: RuleCandidate, generation: int) -> RuleCandidate:
        digest = long_term_reflection(self._reflections, self.config.long_term_window)
        latest_context = self._reflections[-1].context if self._reflections else NO_REFLECTIONS_YET
        bindings = {
            "task_description": self._task_description,
            "input_feature_list": self._feature_list,
            "reflection_comments": digest,
            "reflection_context": latest_context,
            "function_signature": f"rule_v{elite.version}",
            "elitist_code": f"```rule\n{elite.code}\n```",
            "function_name": f"rule_v{elite.version + 1}",
        }
        user_prompt = prompts.render("elitist_mutation", bindings, prompts_dir=self.prompts_dir)
        return self._offspring(
            tag="mutation",
            user_prompt=user_prompt,
            operator="mutation",
            parents=(elite.id,),
            generation=generation,
            version=elite.version + 1,
        )

    def _offspring(
        self,
        tag: str,
        user_prompt: str,
        operator: str,
        parents: tuple[str, ...],
        generation: int,
        version: int,
    ) -> RuleCandidate:
        try:
            parsed, rule, tags, error = self._request_rule(tag, user_prompt)
        except _CallBudgetExhausted:
            raise
        except ProviderError as exc:
            parsed, rule, tags, error = None, None, [tag], str(exc)
        return RuleCandidate(
            id=self._new_id(),
            code=parsed.code if parsed else "",
            context=parsed.context if parsed else "",
            operator=operator,
            generation=generation,
            parent_ids=parents,
            version=version,
            request_tags_used=tuple(tags),
            error=error,
            rule=rule,
        )

    # ---- the loop ----------------------------------------------------------

    def _valid_sorted(self, population: Sequence[RuleCandidate]) -> list[RuleCandidate]:
        return sorted(
            (c for c in population if c.fitness is not None), key=_rank_key
        )

    def _best(self, *groups: Sequence[RuleCandidate]) -> RuleCandidate | None:
        merged = [c for group in groups for c in group if c.fitness is not None]
        return min(merged, key=_rank_key) if merged else None

    def run(self, seed_rule: tuple[str, str] | None = None) -> RunResult:
        config = self.config
        aborted = False
        history: list[float] = []
        population: list[RuleCandidate] = []
        generations_completed = 0
        try:
            try:
                population = self.init_population(seed_rule)
            except ProviderError as exc:
                raise _RunAborted(f"provider failed during init: {exc}") from exc
            self.evaluate_population(population)
            best = self._best(self._seen)
            if best is not None:
                history.append(best.fitness)

            for generation in range(1, config.generations + 1):
                fresh: list[RuleCandidate] = []
                exhausted = False
                try:
                    pairs = select_pairs(population, self._rng, config.pairs_per_gen)
                    reflections: list[Reflection | None] = []
                    for pair in pairs:
                        reflections.append(self.reflect(pair) if config.enable_pir else None)
                    if config.enable_pic:
                        for pair, reflection in zip(pairs, reflections):
                            fresh.append(self.crossover(pair, reflection, generation))
                    else:
                        # Ablation: spend the same call budget on extra
                        # mutations of the best valid candidate, one per pair.
                        for _ in pairs:
                            target = self._valid_sorted(population)[0]
                            fresh.append(self.elitist_mutate(target, generation))
                    for elite in self._valid_sorted(population)[: config.elite_count]:
                        fresh.append(self.elitist_mutate(elite, generation))
                except _CallBudgetExhausted:
                    exhausted = True
                self.evaluate_population(fresh)
                if exhausted:
                    break
                elites = sorted(population, key=_rank_key)[: config.elite_count]
                population = sorted(elites + fresh, key=_rank_key)[: config.population_size]
                generations_completed = generation
                best = self._best(self._seen)
                history.append(best.fitness if best else 0.0)
        except _RunAborted:
            aborted = True

        # Best-ever considers every logged candidate, not just survivors.
        return RunResult(
            best=self._best(self._seen),
            population=population,
            records=self._records,
            generations_completed=generations_completed,
            llm_calls=self._calls,
            aborted=aborted,
            best_fitness_history=history,
            request_tags=tuple(self._request_tags),
        )


def run_evolution(
    config: EvolutionConfig,
    train_table: TimeSeriesTable,
    provider: Provider,
    log=None,
    seed_rule: tuple[str, str] | None = None,
    prompts_dir=None,
) -> RunResult:
    """Run the full loop; see EvolutionEngine for the phase structure."""
    engine = EvolutionEngine(config, train_table, provider, log=log, prompts_dir=prompts_dir)
    return engine.run(seed_rule)
