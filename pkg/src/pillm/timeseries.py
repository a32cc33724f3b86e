"""Domain types for labeled multivariate HVAC time series.

A table is a fixed set of named feature columns over a shared, strictly
increasing timestamp axis, plus an optional 0/1 anomaly label column.
Tables are immutable after construction, so they can be shared freely
between threads and evaluated against many rules in parallel.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator, Sequence

import numpy as np

VALID_ROLES = ("sensor", "command", "status", "derived")

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_INT_RE = re.compile(r"[+-]?\d+\Z")


class TableError(ValueError):
    """Base class for table construction and ingestion failures."""


class SchemaError(TableError):
    """A required column or metadata field is absent or malformed."""


class ParseError(TableError):
    """A cell could not be parsed; the message names the offending row."""


class OrderError(TableError):
    """Timestamps are not strictly increasing."""


class SplitRangeError(TableError):
    """A chronological split would leave one side empty."""


@dataclass(frozen=True)
class FeatureMeta:
    """Physical description of one feature column.

    The description is not decorative: it is forwarded verbatim into LLM
    prompts so that generated rules can be grounded in what each signal
    physically means.
    """

    name: str
    unit: str
    description: str
    role: str

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise SchemaError(f"invalid feature name {self.name!r}")
        if not self.description.strip():
            raise SchemaError(f"feature {self.name!r} has an empty description")
        if self.role not in VALID_ROLES:
            raise SchemaError(
                f"feature {self.name!r} has unknown role {self.role!r}; "
                f"expected one of {', '.join(VALID_ROLES)}"
            )


@dataclass(frozen=True, eq=False)
class TimeSeriesTable:
    """Immutable table of feature columns over a shared timestamp axis."""

    features: tuple[FeatureMeta, ...]
    values: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        feats = tuple(self.features)
        values = np.asarray(self.values, dtype=np.float64)
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.uint8)

        if values.ndim != 2:
            raise SchemaError("values must be a 2-D (rows x features) array")
        n_rows, n_cols = values.shape
        if n_rows < 1:
            raise SchemaError("table must contain at least one row")
        if n_cols != len(feats):
            raise SchemaError(
                f"values have {n_cols} columns but {len(feats)} features are declared"
            )
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if timestamps.shape != (n_rows,):
            raise SchemaError("timestamps must have one entry per row")
        if n_rows > 1 and not np.all(np.diff(timestamps) > 0):
            raise OrderError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ParseError("values must be finite; missing cells are rejected")
        if labels is not None:
            if labels.shape != (n_rows,):
                raise SchemaError("labels must have one entry per row")
            if not np.all((labels == 0) | (labels == 1)):
                raise ParseError("labels must be 0 or 1")

        for arr in (values, timestamps, labels):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def column(self, name: str) -> np.ndarray:
        """Return one feature column as a read-only 1-D view."""
        index = self._index  # type: ignore[attr-defined]
        if name not in index:
            raise SchemaError(f"unknown feature {name!r}")
        return self.values[:, index[name]]

    def meta(self, name: str) -> FeatureMeta:
        index = self._index  # type: ignore[attr-defined]
        if name not in index:
            raise SchemaError(f"unknown feature {name!r}")
        return self.features[index[name]]

    def slice_rows(self, start: int, stop: int) -> "TimeSeriesTable":
        """Return the chronological sub-table covering rows [start, stop)."""
        if not 0 <= start < stop <= self.num_rows:
            raise SplitRangeError(f"invalid row span {start}:{stop}")
        labels = None if self.labels is None else self.labels[start:stop]
        return TimeSeriesTable(
            features=self.features,
            values=self.values[start:stop],
            timestamps=self.timestamps[start:stop],
            labels=labels,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeriesTable):
            return NotImplemented
        if self.features != other.features:
            return False
        if not np.array_equal(self.values, other.values):
            return False
        if not np.array_equal(self.timestamps, other.timestamps):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class IncidentSet:
    """Maximal runs of consecutive anomalous rows, as inclusive (start, end) spans."""

    incidents: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        prev_end = -2
        for start, end in self.incidents:
            if start < 0 or end < start:
                raise ValueError(f"invalid incident span ({start}, {end})")
            if start <= prev_end + 1:
                raise ValueError(
                    "incidents must be sorted, non-overlapping and non-adjacent"
                )
            prev_end = end

    def __len__(self) -> int:
        return len(self.incidents)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.incidents)

    def to_labels(self, length: int) -> np.ndarray:
        """Materialize the spans back into a 0/1 label vector of `length` rows."""
        labels = np.zeros(length, dtype=np.uint8)
        for start, end in self.incidents:
            if end >= length:
                raise ValueError(f"incident ({start}, {end}) exceeds length {length}")
            labels[start : end + 1] = 1
        return labels


def incidents_from_labels(labels: Sequence[int] | np.ndarray) -> IncidentSet:
    """Group a 0/1 label vector into maximal runs of consecutive ones."""
    lab = np.asarray(labels)
    if lab.ndim != 1:
        raise ValueError("labels must be 1-D")
    if lab.size and not np.all((lab == 0) | (lab == 1)):
        raise ValueError("labels must be 0 or 1")
    padded = np.concatenate(([0], lab.astype(np.int8), [0]))
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return IncidentSet(tuple(zip(starts.tolist(), ends.tolist())))


def _parse_timestamp(cell: str, row: int) -> int:
    text = cell.strip()
    if _INT_RE.match(text):
        return int(text)
    try:
        moment = datetime.fromisoformat(text)
    except ValueError:
        raise ParseError(f"row {row}: cannot parse timestamp {cell!r}") from None
    if moment.tzinfo is None:
        # Naive stamps are read as UTC so that ingestion does not depend on
        # the host timezone.
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp())


def load_csv(data: bytes | str, meta: Sequence[FeatureMeta]) -> TimeSeriesTable:
    """Parse CSV text into a table against the given feature metadata.

    The header must contain a ``timestamp`` column and every declared feature
    name; a ``label`` column is optional and extra columns are ignored. Row
    numbers in error messages count data rows from 1 (the header is row 0).
    """
    metas = tuple(meta)
    if not metas:
        raise SchemaError("feature metadata must declare at least one feature")
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("CSV is empty") from None
    header = [h.strip() for h in header]
    positions: dict[str, int] = {}
    for col_index, name in enumerate(header):
        positions.setdefault(name, col_index)
    if "timestamp" not in positions:
        raise SchemaError("missing required column 'timestamp'")
    for m in metas:
        if m.name not in positions:
            raise SchemaError(f"missing required column {m.name!r}")
    label_pos = positions.get("label")

    timestamps: list[int] = []
    rows: list[list[float]] = []
    labels: list[int] = []
    feature_pos = [positions[m.name] for m in metas]
    for row_num, record in enumerate(reader, start=1):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) < len(header):
            raise ParseError(f"row {row_num}: expected {len(header)} cells, got {len(record)}")
        ts = _parse_timestamp(record[positions["timestamp"]], row_num)
        if timestamps and ts <= timestamps[-1]:
            raise OrderError(f"row {row_num}: timestamp {ts} is not increasing")
        parsed = []
        for m, pos in zip(metas, feature_pos):
            cell = record[pos].strip()
            if not cell:
                raise ParseError(f"row {row_num}: missing value in column {m.name!r}")
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"row {row_num}: non-numeric value {record[pos]!r} in column {m.name!r}"
                ) from None
        if label_pos is not None:
            cell = record[label_pos].strip()
            if cell not in ("0", "1"):
                raise ParseError(f"row {row_num}: label must be 0 or 1, got {record[label_pos]!r}")
            labels.append(int(cell))
        timestamps.append(ts)
        rows.append(parsed)

    if not rows:
        raise SchemaError("CSV contains no data rows")
    return TimeSeriesTable(
        features=metas,
        values=np.array(rows, dtype=np.float64),
        timestamps=np.array(timestamps, dtype=np.int64),
        labels=np.array(labels, dtype=np.uint8) if label_pos is not None else None,
    )


def save_csv(table: TimeSeriesTable) -> bytes:
    """Serialize a table to CSV such that `load_csv` reproduces it exactly."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["timestamp", *table.feature_names]
    if table.has_labels:
        header.append("label")
    writer.writerow(header)
    for i in range(table.num_rows):
        row: list[str] = [str(int(table.timestamps[i]))]
        # repr() round-trips float64 exactly, which load_csv relies on.
        row.extend(repr(float(v)) for v in table.values[i])
        if table.has_labels:
            row.append(str(int(table.labels[i])))  # type: ignore[index]
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def load_meta(data: bytes | str) -> tuple[FeatureMeta, ...]:
    """Parse the feature-metadata JSON document (a list of feature objects)."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"metadata is not valid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise SchemaError("metadata must be a JSON list of feature objects")
    metas = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise SchemaError(f"metadata entry {i} must be an object")
        for key in ("name", "unit", "description", "role"):
            if key not in entry:
                raise SchemaError(f"metadata entry {i} is missing field {key!r}")
        metas.append(
            FeatureMeta(
                name=str(entry["name"]),
                unit=str(entry["unit"]),
                description=str(entry["description"]),
                role=str(entry["role"]),
            )
        )
    if not metas:
        raise SchemaError("metadata must declare at least one feature")
    return tuple(metas)


def save_meta(metas: Sequence[FeatureMeta]) -> str:
    doc = [
        {"name": m.name, "unit": m.unit, "description": m.description, "role": m.role}
        for m in metas
    ]
    return json.dumps(doc, indent=2) + "\n"


def split(table: TimeSeriesTable, train_fraction: float) -> tuple[TimeSeriesTable, TimeSeriesTable]:
    """Split chronologically at row floor(train_fraction * T).

    Both halves must be non-empty; anything else raises `SplitRangeError`.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitRangeError(f"train_fraction must be in (0, 1), got {train_fraction}")
    cut = math.floor(train_fraction * table.num_rows)
    if cut <= 0 or cut >= table.num_rows:
        raise SplitRangeError(
            f"split at row {cut} leaves an empty side for {table.num_rows} rows"
        )
    return table.slice_rows(0, cut), table.slice_rows(cut, table.num_rows)
