"""Run persistence and the three-part diagnostic report.

A run directory holds one line-oriented JSON log (`run.jsonl`, one record per
candidate, flushed per line so a crash loses at most the record in flight),
the config snapshot, the best rule, and the rendered report. The report
follows the identify / evidence / severity structure: quote the winning
rule's physical hypothesis, back each detected incident with the most
deviant referenced signals, then grade it.
"""

from __future__ import annotations

import json
import os
import textwrap
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .dsl import compile_rule, evaluate, to_flags
from .metrics import MetricReport, event_f1_pa
from .providers import CompletionRequest, Provider
from .timeseries import TimeSeriesTable, incidents_from_labels

if TYPE_CHECKING:
    from .evolution import RuleCandidate

RUN_LOG_NAME = "run.jsonl"
CONFIG_SNAPSHOT_NAME = "config.snapshot"
BEST_RULE_NAME = "best.rule"
REPORT_NAME = "report.txt"

RECORD_FIELDS = (
    "generation",
    "candidate_id",
    "parent_ids",
    "operator",
    "code",
    "context",
    "code_hash",
    "fitness",
    "precision",
    "recall",
    "request_tags_used",
)

SEVERITY_LOW_SCORE = 0.5
SEVERITY_MODERATE_FRACTION = 0.01

_ZSCORE_EPS = 1e-9


class RunLogError(Exception):
    """Run directory bookkeeping failed."""


class DuplicateRecordError(RunLogError):
    """A candidate_id was appended twice."""


class RunLog:
    """Single-writer, append-only candidate log inside `runs/<run_id>/`."""

    def __init__(self, root: str | Path, run_id: str, config_snapshot: dict | None = None):
        self.run_id = run_id
        self.dir = Path(root) / run_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / RUN_LOG_NAME
        self._seen: set[str] = set()
        for record in self.records():  # resuming an existing log keeps ids unique
            self._seen.add(record["candidate_id"])
        if config_snapshot is not None:
            snapshot_path = self.dir / CONFIG_SNAPSHOT_NAME
            snapshot_path.write_text(
                json.dumps(config_snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )

    def append(self, record: dict) -> None:
        """Append one candidate record, flushed to disk before returning."""
        missing = [key for key in RECORD_FIELDS if key not in record]
        if missing:
            raise RunLogError(f"record is missing fields: {', '.join(missing)}")
        candidate_id = record["candidate_id"]
        if candidate_id in self._seen:
            raise DuplicateRecordError(f"duplicate candidate_id {candidate_id!r}")
        line = json.dumps(record, ensure_ascii=False)
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        self._seen.add(candidate_id)

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    out.append(json.loads(line))
        return out

    def config_snapshot(self) -> dict:
        path = self.dir / CONFIG_SNAPSHOT_NAME
        if not path.exists():
            raise RunLogError(f"missing {CONFIG_SNAPSHOT_NAME} in {self.dir}")
        return json.loads(path.read_text(encoding="utf-8"))

    def write_best(self, code: str, context: str) -> None:
        body = code.rstrip("\n") + "\n\n# context:\n"
        body += "".join(f"# {line}\n" for line in context.splitlines() or [""])
        (self.dir / BEST_RULE_NAME).write_text(body, encoding="utf-8")

    def write_report(self, text: str) -> None:
        (self.dir / REPORT_NAME).write_text(text, encoding="utf-8")


def best_record(records: Sequence[dict]) -> dict | None:
    """Highest-fitness valid record; earliest candidate wins ties."""
    best = None
    for record in records:
        if record.get("fitness") is None:
            continue
        if (
            best is None
            or record["fitness"] > best["fitness"]
            or (record["fitness"] == best["fitness"] and record["candidate_id"] < best["candidate_id"])
        ):
            best = record
    return best


@dataclass(frozen=True)
class EvidenceItem:
    feature: str
    value: float
    z_score: float


@dataclass(frozen=True)
class IncidentFinding:
    span: tuple[int, int]  # inclusive row span
    peak_row: int
    peak_score: float
    evidence: tuple[EvidenceItem, ...]
    severity: str


@dataclass
class DiagnosticReport:
    incidents: tuple[IncidentFinding, ...]
    rule_code: str
    rule_context: str
    test_metrics: MetricReport | None
    num_rows: int

    def render(self) -> str:
        lines: list[str] = []

        lines.append("Identify the Fault")
        lines.append("==================")
        if not self.incidents:
            lines.append("No anomalies detected.")
        else:
            count = len(self.incidents)
            lines.append(
                f"Detected {count} incident{'s' if count != 1 else ''} "
                f"over {self.num_rows} evaluation rows."
            )
            lines.append("Working hypothesis from the rule's physical context:")
            lines.extend(
                textwrap.wrap(self.rule_context, width=78, initial_indent="  ", subsequent_indent="  ")
                or ["  (no context recorded)"]
            )
        lines.append("Rule:")
        for code_line in self.rule_code.splitlines():
            lines.append(f"    {code_line}")
        lines.append("")

        lines.append("Provide Evidence")
        lines.append("================")
        if not self.incidents:
            lines.append("No flagged rows, so there is no evidence to present.")
        for i, finding in enumerate(self.incidents, start=1):
            start, end = finding.span
            lines.append(
                f"Incident {i}: rows {start}..{end} ({end - start + 1} rows), "
                f"peak score {finding.peak_score:.4f} at row {finding.peak_row}."
            )
            for item in finding.evidence:
                lines.append(
                    f"  - {item.feature} = {item.value:.4f} at the peak row, "
                    f"{item.z_score:+.2f} standard deviations from its training mean"
                )
        lines.append("")

        lines.append("Assess Severity")
        lines.append("===============")
        if not self.incidents:
            lines.append("Severity: none.")
        for i, finding in enumerate(self.incidents, start=1):
            start, end = finding.span
            share = 100.0 * (end - start + 1) / self.num_rows
            lines.append(
                f"Incident {i}: {finding.severity} "
                f"({share:.2f}% of the evaluation window)."
            )
        if self.test_metrics is not None:
            lines.append("")
            lines.append(f"Test metrics: {self.test_metrics.line()}")
        return "\n".join(lines) + "\n"


def _severity(scores: np.ndarray, span: tuple[int, int], num_rows: int) -> str:
    start, end = span
    if float(np.mean(scores[start : end + 1])) < SEVERITY_LOW_SCORE:
        return "low"
    if (end - start + 1) / num_rows < SEVERITY_MODERATE_FRACTION:
        return "moderate"
    return "severe"


def generate_report(
    best: "RuleCandidate",
    test_table: TimeSeriesTable,
    threshold: float,
    train_table: TimeSeriesTable,
) -> DiagnosticReport:
    """Evaluate the winning rule on the test split and grade its findings.

    Evidence is computed per incident at the peak-score row: the rule's
    referenced features, ranked by |z-score| against the training split's
    mean and standard deviation, top three kept.
    """
    rule = compile_rule(best.code, test_table.feature_names)
    scores = evaluate(rule, test_table)
    flags = to_flags(scores, threshold)
    incidents = incidents_from_labels(flags)

    train_stats = {}
    for name in sorted(rule.features):
        column = train_table.column(name)
        train_stats[name] = (float(np.mean(column)), float(np.std(column)))

    findings = []
    for start, end in incidents:
        window = scores[start : end + 1]
        peak_row = start + int(np.argmax(window))
        evidence = []
        for name, (mu, sd) in train_stats.items():
            value = float(test_table.column(name)[peak_row])
            evidence.append(EvidenceItem(name, value, (value - mu) / (sd + _ZSCORE_EPS)))
        evidence.sort(key=lambda item: (-abs(item.z_score), item.feature))
        findings.append(
            IncidentFinding(
                span=(int(start), int(end)),
                peak_row=peak_row,
                peak_score=float(scores[peak_row]),
                evidence=tuple(evidence[:3]),
                severity=_severity(scores, (start, end), test_table.num_rows),
            )
        )

    metrics = None
    if test_table.has_labels:
        metrics = event_f1_pa(flags, test_table.labels)
    return DiagnosticReport(
        incidents=tuple(findings),
        rule_code=best.code,
        rule_context=best.context,
        test_metrics=metrics,
        num_rows=test_table.num_rows,
    )


def narrate_report(report_text: str, provider: Provider) -> str:
    """Send the rendered report through the provider for prose elaboration.

    Offline providers echo the skeleton unchanged, so narration is a no-op
    without a live endpoint.
    """
    request = CompletionRequest(
        system_prompt=(
            "You are an expert in the domain of building energy. Rewrite the "
            "following diagnostic report as clear prose for a facilities "
            "manager, keeping every number and the three section headings."
        ),
        user_prompt=report_text,
        tag="narrate",
        temperature=0.2,
    )
    return provider.complete(request).text
