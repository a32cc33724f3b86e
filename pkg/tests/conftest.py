import numpy as np
import pytest

from pillm.simulate import FaultSpec, SimConfig, generate_corpus
from pillm.timeseries import FeatureMeta, TimeSeriesTable


@pytest.fixture(scope="session")
def bias_corpus() -> TimeSeriesTable:
    """The pinned regression corpus: seed 42, full-strength sensor bias."""
    cfg = SimConfig(length=2880, seed=42)
    return generate_corpus(cfg, FaultSpec("sensor_bias", 1.0, (1000, 1400)))


@pytest.fixture
def small_table() -> TimeSeriesTable:
    metas = (
        FeatureMeta("x", "degC", "a test signal", "sensor"),
        FeatureMeta("y", "binary", "a test command", "command"),
    )
    values = np.column_stack(
        [
            np.array([1.0, 2.0, 3.0, 4.0, 0.0, -1.0]),
            np.array([0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
        ]
    )
    labels = np.array([0, 0, 1, 1, 0, 0], dtype=np.uint8)
    return TimeSeriesTable(
        features=metas,
        values=values,
        timestamps=np.arange(6),
        labels=labels,
    )


def make_table(columns: dict[str, np.ndarray], labels=None) -> TimeSeriesTable:
    """Build a one-off table with generic sensor metadata."""
    metas = tuple(FeatureMeta(name, "unitless", f"test signal {name}", "sensor") for name in columns)
    values = np.column_stack([np.asarray(col, dtype=np.float64) for col in columns.values()])
    return TimeSeriesTable(
        features=metas,
        values=values,
        timestamps=np.arange(values.shape[0]),
        labels=labels,
    )
