"""Command-line front end: data generation, rule checking, scoring, evolution, reporting."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import __version__
from .dsl import DslError, FeatureRef, compile_rule, evaluate, parse, to_flags, typecheck
from .evolution import ConfigError, EvolutionConfig, default_seed_rule, run_evolution
from .metrics import event_f1_pa, point_adjusted_report, pointwise_report
from .providers import (
    HttpProvider,
    Provider,
    ProviderConfigError,
    SamplerProvider,
    ScriptedProvider,
)
from .reporting import RunLog, best_record, generate_report, narrate_report
from .simulate import FAULT_KINDS, FaultSpec, SimConfig, generate_corpus
from .timeseries import (
    TableError,
    load_csv,
    load_meta,
    save_csv,
    save_meta,
    split,
)

EXIT_OK = 0
EXIT_ABORTED = 2
EXIT_BAD_CONFIG = 3

_METRIC_FUNCS = {
    "pointwise": pointwise_report,
    "pa": point_adjusted_report,
    "event-pa": event_f1_pa,
}


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_table(data_path: str, meta_path: str):
    metas = load_meta(Path(meta_path).read_bytes())
    return load_csv(Path(data_path).read_bytes(), metas), metas


@click.group()
@click.version_option(version=__version__, prog_name="pillm")
def main() -> None:
    """Evolve and audit interpretable anomaly-detection rules for HVAC data."""


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--fault", "fault_kind", type=click.Choice(FAULT_KINDS), default=None)
@click.option("--intensity", type=float, default=1.0, show_default=True)
@click.option("--window", "window_text", default=None, help="Fault row span START:END (half-open).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--length", type=int, default=2880, show_default=True)
def gen_data(out_dir: str, fault_kind: str | None, intensity: float, window_text: str | None, seed: int, length: int) -> None:
    """Simulate an HVAC corpus and write data.csv + meta.json."""
    fault = None
    if fault_kind is not None:
        if window_text is None:
            _fail("--window START:END is required when --fault is given", EXIT_BAD_CONFIG)
        try:
            start_text, end_text = window_text.split(":", 1)
            window = (int(start_text), int(end_text))
        except ValueError:
            _fail(f"cannot parse --window {window_text!r}; expected START:END", EXIT_BAD_CONFIG)
        fault = FaultSpec(kind=fault_kind, intensity=intensity, window=window)
    elif window_text is not None:
        _fail("--window has no effect without --fault", EXIT_BAD_CONFIG)

    try:
        cfg = SimConfig(length=length, seed=seed)
        table = generate_corpus(cfg, fault)
    except ValueError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "data.csv").write_bytes(save_csv(table))
    (out / "meta.json").write_text(save_meta(table.features), encoding="utf-8")
    click.echo(f"wrote {out / 'data.csv'} ({table.num_rows} rows) and {out / 'meta.json'}")


@main.command("check")
@click.option("--rule", "rule_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", "meta_path", type=click.Path(exists=True, dir_okay=False), default=None)
def check(rule_path: str, meta_path: str | None) -> None:
    """Parse and typecheck a rule file; print diagnostics on failure."""
    source = Path(rule_path).read_text(encoding="utf-8")
    try:
        ast = parse(source)
        if meta_path is not None:
            features = [m.name for m in load_meta(Path(meta_path).read_bytes())]
        else:
            # Without metadata, accept whatever features the rule references.
            names: list[str] = []
            stack = [ast.result, *(expr for _, expr in ast.bindings)]
            while stack:
                node = stack.pop()
                if isinstance(node, FeatureRef):
                    names.append(node.name)
                for attr in ("operand", "left", "right"):
                    child = getattr(node, attr, None)
                    if child is not None:
                        stack.append(child)
                stack.extend(getattr(node, "args", ()))
            features = names
        rule = typecheck(ast, features)
    except DslError as exc:
        _fail(str(exc))
    feature_list = ", ".join(sorted(rule.features)) or "(none)"
    click.echo(
        f"OK: {rule.node_count} nodes, max window {rule.max_window}, features: {feature_list}"
    )


@main.command("eval")
@click.option("--rule", "rule_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", "meta_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=click.Choice(sorted(_METRIC_FUNCS)), default="event-pa", show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
def eval_cmd(rule_path: str, data_path: str, meta_path: str, metric: str, threshold: float) -> None:
    """Score a rule against a labeled corpus and print one metric line."""
    try:
        table, _ = _load_table(data_path, meta_path)
    except TableError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)
    if not table.has_labels:
        _fail("data has no label column; scoring requires labels", EXIT_BAD_CONFIG)
    source = Path(rule_path).read_text(encoding="utf-8")
    try:
        rule = compile_rule(source, table.feature_names)
        flags = to_flags(evaluate(rule, table), threshold)
    except DslError as exc:
        _fail(str(exc))
    click.echo(_METRIC_FUNCS[metric](flags, table.labels).line())


def _build_provider(kind: str, provider_block: dict, script: str | None, config: EvolutionConfig, feature_names) -> Provider:
    if kind == "scripted":
        if script is None:
            script = provider_block.get("script")
        if not script:
            raise ProviderConfigError("scripted provider requires --script FILE")
        return ScriptedProvider.from_path(script)
    if kind == "sampler":
        return SamplerProvider(seed=config.seed, feature_names=feature_names)
    if kind == "http":
        endpoint = provider_block.get("endpoint", "")
        model = provider_block.get("model", "")
        timeout = float(provider_block.get("timeout_secs", 60.0))
        return HttpProvider(endpoint=endpoint, model=model, timeout_secs=timeout)
    raise ProviderConfigError(f"unknown provider {kind!r}")


def _unique_run_dir(root: Path, seed: int) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"run-{stamp}-s{seed}"
    run_id = base
    counter = 2
    while (root / run_id).exists():
        run_id = f"{base}-{counter}"
        counter += 1
    return run_id


@main.command("evolve")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", "meta_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--provider", "provider_kind", required=True, type=click.Choice(["http", "scripted", "sampler"]))
@click.option("--script", "script_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-pir", is_flag=True, help="Disable reflection (ablation).")
@click.option("--no-pic", is_flag=True, help="Replace crossover with extra elitist mutations (ablation).")
@click.option("--out", "out_root", required=True, type=click.Path(file_okay=False))
def evolve(
    data_path: str,
    meta_path: str,
    config_path: str,
    provider_kind: str,
    script_path: str | None,
    no_pir: bool,
    no_pic: bool,
    out_root: str,
) -> None:
    """Run the evolutionary loop and persist the run directory."""
    try:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        config = EvolutionConfig.from_dict(doc)
    except (json.JSONDecodeError, ConfigError) as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)
    if no_pir:
        config.enable_pir = False
    if no_pic:
        config.enable_pic = False

    try:
        table, metas = _load_table(data_path, meta_path)
    except TableError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)
    if not table.has_labels:
        _fail("training data must be labeled", EXIT_BAD_CONFIG)
    try:
        train_table, test_table = split(table, config.train_fraction)
    except TableError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)

    provider_block = doc.get("provider", {})
    if not isinstance(provider_block, dict):
        _fail("config key 'provider' must be an object", EXIT_BAD_CONFIG)
    try:
        provider = _build_provider(provider_kind, provider_block, script_path, config, table.feature_names)
    except ProviderConfigError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)

    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    run_id = _unique_run_dir(root, config.seed)
    snapshot = config.to_dict()
    snapshot["provider"] = {"type": provider_kind, **provider_block}
    if script_path is not None:
        snapshot["provider"]["script"] = str(Path(script_path).resolve())
    log = RunLog(root, run_id, config_snapshot=snapshot)
    log.dir.joinpath("train.csv").write_bytes(save_csv(train_table))
    log.dir.joinpath("test.csv").write_bytes(save_csv(test_table))
    log.dir.joinpath("meta.json").write_text(save_meta(metas), encoding="utf-8")

    result = run_evolution(config, train_table, provider, log=log)
    log.dir.joinpath("requests.log").write_text(
        "".join(f"{tag}\n" for tag in result.request_tags), encoding="utf-8"
    )

    click.echo(f"run_dir={log.dir}")
    click.echo(f"generations={result.generations_completed} llm_calls={result.llm_calls}")
    if result.best is not None:
        log.write_best(result.best.code, result.best.context)
        click.echo(f"best_id={result.best.id} best_fitness={result.best.fitness:.6f}")
    else:
        click.echo("best_id=none")
    if result.aborted:
        click.echo("aborted=true", err=True)
        sys.exit(EXIT_ABORTED)


@main.command("report")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--meta", "meta_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--narrate", is_flag=True, help="Elaborate the report through the run's provider.")
def report(run_dir: str, data_path: str, meta_path: str, narrate: bool) -> None:
    """Render the diagnostic report for a finished run."""
    run_path = Path(run_dir)
    log = RunLog(run_path.parent, run_path.name)
    records = log.records()
    best = best_record(records)
    if best is None:
        _fail("run log contains no valid candidate to report on")
    try:
        snapshot = log.config_snapshot()
        table, metas = _load_table(data_path, meta_path)
        train_csv = log.dir / "train.csv"
        if not train_csv.exists():
            _fail("run directory is missing train.csv, cannot compute evidence z-scores")
        train_table = load_csv(train_csv.read_bytes(), metas)
    except TableError as exc:
        _fail(str(exc), EXIT_BAD_CONFIG)

    from .evolution import RuleCandidate

    candidate = RuleCandidate(
        id=best["candidate_id"],
        code=best["code"],
        context=best["context"],
        operator=best["operator"],
        generation=best["generation"],
        fitness=best["fitness"],
    )
    try:
        doc = generate_report(candidate, table, float(snapshot.get("threshold", 0.5)), train_table)
    except DslError as exc:
        _fail(str(exc))
    text = doc.render()
    if narrate:
        provider_block = dict(snapshot.get("provider", {}))
        kind = provider_block.get("type", "sampler")
        try:
            config = EvolutionConfig.from_dict({k: v for k, v in snapshot.items() if k != "provider"})
            provider = _build_provider(kind, provider_block, provider_block.get("script"), config, table.feature_names)
        except (ProviderConfigError, ConfigError) as exc:
            _fail(str(exc), EXIT_BAD_CONFIG)
        text = narrate_report(text, provider)
    log.write_report(text)
    click.echo(text, nl=False)


if __name__ == "__main__":
    main()
