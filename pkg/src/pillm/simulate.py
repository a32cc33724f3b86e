"""Deterministic single-zone HVAC simulator with fault injection.

The model is a first-order thermal zone under a bang-bang thermostat:

    outdoor[t]   = mean + amplitude * sin(2*pi*t / 1440) + noise
    zone[t + 1]  = zone[t] + a*(outdoor[t] - zone[t]) + b*heat[t]
                   - c*cool[t] + d*occupancy[t] + noise

One row per minute; the default horizon is two days. Faults follow a small
taxonomy: two sensor faults are overlays on the reported zone temperature,
while actuator/control faults are re-simulated so downstream variables
respond physically. Labels are 1 exactly on the fault window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeseries import FeatureMeta, TimeSeriesTable

SETPOINT_C = 22.0
HYSTERESIS_C = 0.5
MINUTES_PER_DAY = 1440
OCCUPIED_START_MIN = 480
OCCUPIED_END_MIN = 1080

FAULT_KINDS = (
    "heating_coil_leak",
    "damper_stuck",
    "sensor_bias",
    "sensor_drift",
    "simultaneous_heat_cool",
)

# Maximum sensor-fault magnitude; intensity scales it linearly.
SENSOR_FAULT_SPAN_C = 5.0

FEATURES = (
    FeatureMeta("outdoor_temp", "degC", "outdoor air dry-bulb temperature", "sensor"),
    FeatureMeta("zone_temp", "degC", "zone air temperature reported by the thermostat sensor", "sensor"),
    FeatureMeta("heat_cmd", "binary", "heating coil valve command, 0 closed or 1 open", "command"),
    FeatureMeta("cool_cmd", "binary", "cooling coil valve command, 0 closed or 1 open", "command"),
    FeatureMeta("damper_cmd", "fraction", "outdoor-air damper position command, fraction open", "command"),
    FeatureMeta("damper_pos", "fraction", "actual outdoor-air damper position, fraction open", "sensor"),
    FeatureMeta("fan_status", "binary", "supply fan on/off status from the schedule", "status"),
    FeatureMeta("fan_speed", "fraction", "supply fan speed, fraction of maximum", "sensor"),
    FeatureMeta("occupancy", "binary", "zone occupancy flag from the schedule", "status"),
)


class SimulationError(ValueError):
    """Invalid simulator configuration or fault specification."""


@dataclass(frozen=True)
class SimConfig:
    length: int = 2880
    seed: int = 0
    outdoor_mean: float = 15.0
    outdoor_amplitude: float = 4.0
    a: float = 0.03  # conduction gain toward outdoor, per step
    b: float = 0.4  # heating coil gain, degC per step
    c: float = 0.4  # cooling coil gain, degC per step
    d: float = 0.05  # occupancy heat gain, degC per step
    sigma: float = 0.02  # process/measurement noise, degC

    def __post_init__(self) -> None:
        if self.length < 2:
            raise SimulationError("length must be >= 2")
        if self.sigma < 0:
            raise SimulationError("sigma must be >= 0")
        if not 0.0 < self.a < 1.0:
            raise SimulationError("a must be in (0, 1)")


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    intensity: float
    window: tuple[int, int]  # half-open row span [start, end)

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise SimulationError(f"unknown fault kind {self.kind!r}")
        if not 0.0 < self.intensity <= 1.0:
            raise SimulationError("intensity must be in (0, 1]")
        start, end = self.window
        if start < 0 or end <= start:
            raise SimulationError("fault window must satisfy 0 <= start < end")

    def check_against(self, table: TimeSeriesTable) -> None:
        if self.window[1] > table.num_rows:
            raise SimulationError(
                f"fault window {self.window} extends past {table.num_rows} rows"
            )


def thermostat_step(mode: int, zone: float) -> int:
    """Advance the bang-bang state: -1 cooling, 0 idle, +1 heating.

    Heating engages below setpoint - hysteresis and holds until the zone
    recovers to the setpoint; cooling mirrors it above.
    """
    if mode == 1 and zone >= SETPOINT_C:
        mode = 0
    elif mode == -1 and zone <= SETPOINT_C:
        mode = 0
    if mode == 0:
        if zone < SETPOINT_C - HYSTERESIS_C:
            mode = 1
        elif zone > SETPOINT_C + HYSTERESIS_C:
            mode = -1
    return mode


def zone_step(cfg: SimConfig, zone: float, outdoor: float, heat: float, cool: float, occupancy: float) -> float:
    """Deterministic part of the zone temperature update."""
    return zone + cfg.a * (outdoor - zone) + cfg.b * heat - cfg.c * cool + cfg.d * occupancy


def _damper_schedule(t: int, occupied: float) -> float:
    # Demand-controlled ventilation: modulate around a base fraction while
    # occupied, minimum leakage position otherwise.
    if occupied:
        return 0.3 + 0.2 * math.sin(2.0 * math.pi * t / 240.0)
    return 0.05


def _run(cfg: SimConfig, fault: FaultSpec | None = None) -> TimeSeriesTable:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.length
    outdoor_noise = rng.normal(0.0, cfg.sigma, n)
    zone_noise = rng.normal(0.0, cfg.sigma, n)

    t_arr = np.arange(n)
    outdoor = (
        cfg.outdoor_mean
        + cfg.outdoor_amplitude * np.sin(2.0 * np.pi * t_arr / MINUTES_PER_DAY)
        + outdoor_noise
    )
    minute_of_day = t_arr % MINUTES_PER_DAY
    occupancy = (
        (minute_of_day >= OCCUPIED_START_MIN) & (minute_of_day < OCCUPIED_END_MIN)
    ).astype(np.float64)

    zone = np.empty(n)
    heat_cmd = np.zeros(n)
    cool_cmd = np.zeros(n)
    damper_cmd = np.empty(n)
    damper_pos = np.empty(n)
    fan_speed = np.zeros(n)

    def in_window(t: int) -> bool:
        return fault is not None and fault.window[0] <= t < fault.window[1]

    stuck_pos = None
    if fault is not None and fault.kind == "damper_stuck":
        start = fault.window[0]
        stuck_pos = _damper_schedule(start, occupancy[start] if start < n else 0.0)

    zone[0] = SETPOINT_C
    mode = 0
    for t in range(n):
        mode = thermostat_step(mode, zone[t])
        heat = 1.0 if mode == 1 else 0.0
        cool = 1.0 if mode == -1 else 0.0
        if fault is not None and fault.kind == "simultaneous_heat_cool" and in_window(t):
            heat, cool = 1.0, 1.0
        heat_cmd[t], cool_cmd[t] = heat, cool

        damper_cmd[t] = _damper_schedule(t, occupancy[t])
        damper_pos[t] = stuck_pos if in_window(t) and stuck_pos is not None else damper_cmd[t]
        fan_speed[t] = occupancy[t] * min(abs(zone[t] - SETPOINT_C) / 2.0, 1.0)

        if t + 1 < n:
            nxt = zone_step(cfg, zone[t], outdoor[t], heat, cool, occupancy[t])
            if fault is not None and fault.kind == "heating_coil_leak" and in_window(t) and heat == 0.0:
                nxt += cfg.b * fault.intensity
            zone[t + 1] = nxt + zone_noise[t]

    labels = np.zeros(n, dtype=np.uint8)
    if fault is not None:
        labels[fault.window[0] : fault.window[1]] = 1

    values = np.column_stack(
        [
            outdoor,
            zone,
            heat_cmd,
            cool_cmd,
            damper_cmd,
            damper_pos,
            occupancy,  # fan_status tracks the occupancy schedule
            fan_speed,
            occupancy,
        ]
    )
    return TimeSeriesTable(
        features=FEATURES,
        values=values,
        timestamps=t_arr.astype(np.int64),
        labels=labels,
    )


def simulate(cfg: SimConfig) -> TimeSeriesTable:
    """Fault-free run; labels are all zero."""
    return _run(cfg, fault=None)


def inject_fault(table: TimeSeriesTable, spec: FaultSpec, cfg: SimConfig) -> TimeSeriesTable:
    """Apply one fault to a clean run.

    Sensor faults overlay the reported zone temperature without touching the
    dynamics; all other faults re-simulate forward from the window start so
    downstream variables respond. `cfg` must be the config that produced
    `table`, since re-simulation replays the same noise streams.
    """
    spec.check_against(table)
    start, end = spec.window
    if spec.kind not in ("sensor_bias", "sensor_drift"):
        return _run(cfg, fault=spec)

    if "zone_temp" not in table.feature_names:
        raise SimulationError("sensor faults require a zone_temp column")

    values = table.values.copy()
    zone_col = table.feature_names.index("zone_temp")
    if spec.kind == "sensor_bias":
        values[start:end, zone_col] += SENSOR_FAULT_SPAN_C * spec.intensity
    else:
        values[start:end, zone_col] += np.linspace(
            0.0, SENSOR_FAULT_SPAN_C * spec.intensity, end - start
        )
    labels = np.zeros(table.num_rows, dtype=np.uint8)
    labels[start:end] = 1
    return TimeSeriesTable(
        features=table.features,
        values=values,
        timestamps=table.timestamps,
        labels=labels,
    )


def generate_corpus(cfg: SimConfig, fault: FaultSpec | None = None) -> TimeSeriesTable:
    """Simulate and optionally inject one fault, in a single call."""
    table = simulate(cfg)
    if fault is None:
        return table
    return inject_fault(table, fault, cfg)
