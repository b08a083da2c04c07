"""
Experiment timelines: the sequence model, the JSON configuration format and
builders for the splitting and detuning experiments.

Configuration documents use cyclic MHz, microseconds and microwatts.  This
module is the only place where MHz are converted to rad/us.
"""

from __future__ import annotations

import copy
import json
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional

import jsonschema

from .core import (
    DEFAULT_GAMMA_MHZ,
    DEFAULT_GAMMA_S_MHZ,
    DEFAULT_RAMP_US,
    TWO_PI,
    ConfigError,
    ControlField,
    SignalPulse,
    SimulationGrid,
    SwitchEvent,
    TripodMedium,
    angular_to_mhz,
    build_medium,
    mhz_to_angular,
    sequence_rates,
    validate_grid,
)
from .maxwell_bloch import FieldRecord, simulate_many

SCHEMA_VERSION = 1

# Rabi frequency (cyclic MHz) of a 100 uW control beam.  Rabi frequencies scale as sqrt(P).
DEFAULT_RABI_MHZ_AT_100UW = 1.5
REFERENCE_POWER_UW = 100.0

DEFAULT_RETRIEVAL_US = 1.0
FIRST_WINDOW_US = 0.2

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}

_event_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["t_us", "level", "ramp_us"],
    "properties": {"t_us": _number, "level": _nonneg, "ramp_us": _nonneg, "phase_rad": _number},
}

_control_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["power_uw", "detuning_mhz", "phase_rad", "events"],
    "properties": {
        "power_uw": _nonneg,
        "detuning_mhz": _number,
        "phase_rad": _number,
        "events": {"type": "array", "items": _event_schema},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "medium", "signal", "control_c1", "control_c2", "grid"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "medium": {
            "type": "object",
            "additionalProperties": False,
            "required": ["od", "gamma_mhz", "gamma_s_mhz"],
            "properties": {"od": _nonneg, "gamma_mhz": {"type": "number", "exclusiveMinimum": 0}, "gamma_s_mhz": _nonneg},
        },
        "signal": {
            "type": "object",
            "additionalProperties": False,
            "required": ["width_us", "center_us", "mean_photons", "detuning_mhz"],
            "properties": {
                "width_us": {"type": "number", "exclusiveMinimum": 0},
                "center_us": _number,
                "mean_photons": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "detuning_mhz": _number,
            },
        },
        "control_c1": _control_schema,
        "control_c2": _control_schema,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt_us", "t_end_us", "n_z"],
            "properties": {
                "dt_us": {"type": "number", "exclusiveMinimum": 0},
                "t_end_us": {"type": "number", "exclusiveMinimum": 0},
                "n_z": {"type": "integer", "minimum": 2},
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rabi_mhz_at_100uw"],
            "properties": {"rabi_mhz_at_100uw": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}


# ---------------------------------------------------------------------------
# Sequence model
# ---------------------------------------------------------------------------


def _switch_off_time(control: ControlField) -> Optional[float]:
    level = 0.0
    for ev in control.switch_events:
        if ev.level == 0 and level > 0:
            return ev.time
        level = ev.level
    return None


def _retrieval_time(control: ControlField) -> Optional[float]:
    level = 0.0
    seen_off = False
    for ev in control.switch_events:
        if seen_off and ev.level > 0:
            return ev.time
        if ev.level == 0 and level > 0:
            seen_off = True
        level = ev.level
    return None


@dataclass(frozen=True)
class TimelineEvent:
    time: float
    control: str
    level: float
    kind: str  # "on", "off", "switch-off", "retrieval" or "level"


@dataclass(frozen=True)
class PulseSequence:
    """Signal pulse plus both control arms.

    The storage instant is the moment the last control arm is switched off;
    a retrieval is any later switch-on.  Sequences without a switch-off (plain
    slow-light transmission) have ``storage_time`` None.
    """

    signal: SignalPulse
    c1: ControlField
    c2: ControlField
    power_c1_uw: float = REFERENCE_POWER_UW
    power_c2_uw: float = REFERENCE_POWER_UW
    rabi_at_100uw: float = TWO_PI * DEFAULT_RABI_MHZ_AT_100UW

    def __post_init__(self):
        off = self.switch_off_time
        if off is None:
            return
        for control in self.controls:
            first_off = _switch_off_time(control)
            if first_off is None:
                continue
            ret = _retrieval_time(control)
            if ret is not None and ret < off:
                raise ConfigError(
                    f"retrieval precedes switch-off: {control.label} switches back on at {ret} us "
                    f"before all controls are off at {off} us",
                    path=f"control_{control.label}.events",
                )
        if not self.signal.center < off:
            raise ConfigError(
                f"signal pulse center {self.signal.center} us must precede the switch-off at {off} us",
                path="signal.center_us",
            )

    @property
    def controls(self) -> tuple[ControlField, ControlField]:
        return (self.c1, self.c2)

    @property
    def switch_off_time(self) -> Optional[float]:
        offs = [t for t in map(_switch_off_time, self.controls) if t is not None]
        return max(offs) if offs else None

    @property
    def retrieval_times(self) -> dict[str, float]:
        off = self.switch_off_time
        out = {}
        if off is None:
            return out
        for control in self.controls:
            first_off = _switch_off_time(control)
            if first_off is None:
                continue
            ret = _retrieval_time(control)
            if ret is not None:
                out[control.label] = ret
        return out

    @property
    def retrieval_start(self) -> Optional[float]:
        times = self.retrieval_times
        return min(times.values()) if times else None

    @property
    def storage_time(self) -> Optional[float]:
        start = self.retrieval_start
        return None if start is None else start - self.switch_off_time

    @property
    def events(self) -> tuple[TimelineEvent, ...]:
        off = self.switch_off_time
        items = []
        for control in self.controls:
            level = 0.0
            for ev in control.switch_events:
                if ev.level == 0 and level > 0:
                    kind = "switch-off" if off is not None and ev.time == _switch_off_time(control) else "off"
                elif ev.level > 0 and level == 0:
                    kind = "retrieval" if off is not None and ev.time > off else "on"
                else:
                    kind = "level"
                items.append(TimelineEvent(ev.time, control.label, ev.level, kind))
                level = ev.level
        return tuple(sorted(items, key=lambda e: (e.time, e.control)))


@dataclass(frozen=True)
class ExperimentConfig:
    medium: TripodMedium
    sequence: PulseSequence
    grid: SimulationGrid

    def to_document(self) -> dict:
        return sequence_to_document(self.medium, self.sequence, self.grid)

    def validate(self) -> None:
        rates = sequence_rates(self.medium, self.sequence.controls, self.sequence.signal.detuning)
        validate_grid(self.grid, rates)

    def resolved(self) -> dict:
        """Angular-unit view of the configuration, for display."""
        seq = self.sequence
        return {
            "medium": {
                "optical_depth": self.medium.optical_depth,
                "gamma_rad_per_us": self.medium.gamma,
                "gamma_s_rad_per_us": self.medium.gamma_s,
                "collective_coupling": self.medium.collective_coupling,
            },
            "signal": {
                "width_us": seq.signal.width,
                "center_us": seq.signal.center,
                "mean_photons": seq.signal.mean_photons,
                "detuning_rad_per_us": seq.signal.detuning,
            },
            **{
                f"control_{c.label}": {
                    "rabi_rad_per_us": c.rabi,
                    "detuning_rad_per_us": c.detuning,
                    "phase_rad": c.phase,
                }
                for c in seq.controls
            },
            "timeline": {
                "switch_off_us": seq.switch_off_time,
                "retrieval_us": seq.retrieval_times,
                "storage_time_us": seq.storage_time,
            },
            "grid": {"dt_us": self.grid.dt, "t_end_us": self.grid.t_end, "n_z": self.grid.n_z},
        }


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _json_path(error: jsonschema.ValidationError) -> str:
    parts = []
    for p in error.absolute_path:
        if isinstance(p, int):
            parts[-1] = f"{parts[-1]}[{p}]" if parts else f"[{p}]"
        else:
            parts.append(str(p))
    if error.validator == "additionalProperties":
        extra = set(error.instance) - set(error.schema.get("properties", {}))
        parts.append(sorted(extra)[0])
        return ".".join(parts)
    if error.validator == "required":
        missing = [k for k in error.validator_value if k not in error.instance]
        parts.append(missing[0])
    return ".".join(parts) or "<root>"


def _control_from_doc(label: str, doc: dict, rabi_at_100uw: float) -> ControlField:
    rabi = rabi_at_100uw * math.sqrt(doc["power_uw"] / REFERENCE_POWER_UW)
    events = tuple(
        SwitchEvent(time=e["t_us"], level=e["level"], ramp=e["ramp_us"], phase=e.get("phase_rad"))
        for e in doc["events"]
    )
    try:
        return ControlField(
            label=label,
            rabi=rabi,
            detuning=mhz_to_angular(doc["detuning_mhz"]),
            phase=doc["phase_rad"],
            switch_events=events,
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), path=f"control_{label}.events") from None


def parse_document(doc: dict) -> ExperimentConfig:
    """Validate a decoded configuration tree and build the experiment."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, path=_json_path(err))

    m = doc["medium"]
    medium = build_medium(m["od"], mhz_to_angular(m["gamma_mhz"]), mhz_to_angular(m["gamma_s_mhz"]))
    cal = mhz_to_angular(doc.get("calibration", {}).get("rabi_mhz_at_100uw", DEFAULT_RABI_MHZ_AT_100UW))
    s = doc["signal"]
    try:
        signal = SignalPulse(
            width=s["width_us"],
            center=s["center_us"],
            mean_photons=s["mean_photons"],
            detuning=mhz_to_angular(s["detuning_mhz"]),
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), path="signal") from None
    sequence = PulseSequence(
        signal=signal,
        c1=_control_from_doc("c1", doc["control_c1"], cal),
        c2=_control_from_doc("c2", doc["control_c2"], cal),
        power_c1_uw=doc["control_c1"]["power_uw"],
        power_c2_uw=doc["control_c2"]["power_uw"],
        rabi_at_100uw=cal,
    )
    g = doc["grid"]
    grid = SimulationGrid(t_end=g["t_end_us"], dt=g["dt_us"], n_z=g["n_z"])
    return ExperimentConfig(medium, sequence, grid)


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    return parse_document(doc)


def parse_sequence(text: str) -> PulseSequence:
    """Parse a configuration document and return its pulse sequence."""
    return parse_config(text).sequence


def _control_to_doc(control: ControlField, power_uw: float) -> dict:
    events = []
    for ev in control.switch_events:
        e = {"t_us": ev.time, "level": ev.level, "ramp_us": ev.ramp}
        if ev.phase is not None:
            e["phase_rad"] = ev.phase
        events.append(e)
    return {
        "power_uw": power_uw,
        "detuning_mhz": angular_to_mhz(control.detuning),
        "phase_rad": control.phase,
        "events": events,
    }


def sequence_to_document(medium: TripodMedium, sequence: PulseSequence, grid: SimulationGrid) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "medium": {
            "od": medium.optical_depth,
            "gamma_mhz": angular_to_mhz(medium.gamma),
            "gamma_s_mhz": angular_to_mhz(medium.gamma_s),
        },
        "signal": {
            "width_us": sequence.signal.width,
            "center_us": sequence.signal.center,
            "mean_photons": sequence.signal.mean_photons,
            "detuning_mhz": angular_to_mhz(sequence.signal.detuning),
        },
        "control_c1": _control_to_doc(sequence.c1, sequence.power_c1_uw),
        "control_c2": _control_to_doc(sequence.c2, sequence.power_c2_uw),
        "grid": {"dt_us": grid.dt, "t_end_us": grid.t_end, "n_z": grid.n_z},
        "calibration": {"rabi_mhz_at_100uw": angular_to_mhz(sequence.rabi_at_100uw)},
    }


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical on-disk encoding: sorted keys, two-space indent, full float precision."""
    return json.dumps(config.to_document(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _round_up(t: float, dt: float) -> float:
    return round(dt * math.ceil(t / dt - 1e-9), 12)


def _base_document(
    *,
    od: float,
    gamma_mhz: float,
    gamma_s_mhz: float,
    width_us: float,
    center_us: float,
    mean_photons: float,
    dt_us: float,
    n_z: int,
    rabi_mhz_at_100uw: float,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "medium": {"od": od, "gamma_mhz": gamma_mhz, "gamma_s_mhz": gamma_s_mhz},
        "signal": {"width_us": width_us, "center_us": center_us, "mean_photons": mean_photons, "detuning_mhz": 0.0},
        "grid": {"dt_us": dt_us, "t_end_us": 0.0, "n_z": n_z},
        "calibration": {"rabi_mhz_at_100uw": rabi_mhz_at_100uw},
    }


def _event(t: float, level: float, ramp: float, phase: Optional[float] = None) -> dict:
    e = {"t_us": round(t, 12), "level": level, "ramp_us": ramp}
    if phase is not None:
        e["phase_rad"] = phase
    return e


def splitting_experiment(
    t1: float = 0.5,
    t2: float = 1.5,
    p_c1: float = 100.0,
    p_c2: float = 100.0,
    order: str = "c1-first",
    *,
    od: float = 1.3,
    gamma_mhz: float = DEFAULT_GAMMA_MHZ,
    gamma_s_mhz: float = DEFAULT_GAMMA_S_MHZ,
    rabi_mhz_at_100uw: float = DEFAULT_RABI_MHZ_AT_100UW,
    width_us: float = 0.3,
    center_us: float = 0.7,
    switch_off_us: float = 1.0,
    retrieval_us: float = DEFAULT_RETRIEVAL_US,
    ramp_us: float = DEFAULT_RAMP_US,
    mean_photons: float = 0.5,
    dt_us: float = 0.002,
    n_z: int = 64,
) -> ExperimentConfig:
    """Time-bin splitter: store with both arms, switch off together, retrieve one arm at a time.

    ``t1`` and ``t2`` are the storage times (measured from switch-off) at
    which the first and second arm are switched back on.  The first arm is
    ramped down so that it is fully off at ``t2``.
    """
    if not t1 < t2:
        raise ConfigError(f"t1 ({t1} us) must precede t2 ({t2} us)")
    if t2 - t1 < ramp_us:
        raise ConfigError("retrieval bins are shorter than the control ramp")
    if order not in ("c1-first", "c2-first"):
        raise ConfigError(f"order must be 'c1-first' or 'c2-first', got {order!r}")
    if p_c1 < 0 or p_c2 < 0:
        raise ConfigError("control powers must be >= 0")
    doc = _base_document(
        od=od,
        gamma_mhz=gamma_mhz,
        gamma_s_mhz=gamma_s_mhz,
        width_us=width_us,
        center_us=center_us,
        mean_photons=mean_photons,
        dt_us=dt_us,
        n_z=n_z,
        rabi_mhz_at_100uw=rabi_mhz_at_100uw,
    )
    off = switch_off_us
    first = [_event(0.0, 1.0, 0.0), _event(off, 0.0, ramp_us), _event(off + t1, 1.0, ramp_us), _event(off + t2 - ramp_us, 0.0, ramp_us)]
    second = [_event(0.0, 1.0, 0.0), _event(off, 0.0, ramp_us), _event(off + t2, 1.0, ramp_us), _event(off + t2 + retrieval_us, 0.0, ramp_us)]
    ev1, ev2 = (first, second) if order == "c1-first" else (second, first)
    doc["control_c1"] = {"power_uw": p_c1, "detuning_mhz": 0.0, "phase_rad": 0.0, "events": ev1}
    doc["control_c2"] = {"power_uw": p_c2, "detuning_mhz": 0.0, "phase_rad": 0.0, "events": ev2}
    doc["grid"]["t_end_us"] = _round_up(off + t2 + retrieval_us + 2 * ramp_us, dt_us)
    return parse_document(doc)


def detuning_experiment(
    delta_c_mhz: float = 2.0,
    storage_us: float = 0.5,
    phase_offset: float = 0.0,
    *,
    power_uw: float = 100.0,
    od: float = 1.3,
    gamma_mhz: float = DEFAULT_GAMMA_MHZ,
    gamma_s_mhz: float = DEFAULT_GAMMA_S_MHZ,
    rabi_mhz_at_100uw: float = DEFAULT_RABI_MHZ_AT_100UW,
    width_us: float = 0.3,
    center_us: float = 0.7,
    switch_off_us: float = 1.0,
    retrieval_us: float = DEFAULT_RETRIEVAL_US,
    ramp_us: float = DEFAULT_RAMP_US,
    mean_photons: float = 0.5,
    dt_us: float = 0.002,
    n_z: int = 64,
) -> ExperimentConfig:
    """Opposite control detunings (c1 at +delta_c, c2 at -delta_c), equal powers.

    Both arms are on while the pulse enters, switched off together for
    ``storage_us`` and switched back on together.  ``phase_offset`` is added
    to the c2 phase from the retrieval on.
    """
    if not storage_us > 0:
        raise ConfigError(f"storage time must be > 0, got {storage_us}")
    doc = _base_document(
        od=od,
        gamma_mhz=gamma_mhz,
        gamma_s_mhz=gamma_s_mhz,
        width_us=width_us,
        center_us=center_us,
        mean_photons=mean_photons,
        dt_us=dt_us,
        n_z=n_z,
        rabi_mhz_at_100uw=rabi_mhz_at_100uw,
    )
    off = switch_off_us
    ret = off + storage_us
    doc["control_c1"] = {
        "power_uw": power_uw,
        "detuning_mhz": delta_c_mhz,
        "phase_rad": 0.0,
        "events": [_event(0.0, 1.0, 0.0), _event(off, 0.0, ramp_us), _event(ret, 1.0, ramp_us)],
    }
    doc["control_c2"] = {
        "power_uw": power_uw,
        "detuning_mhz": -delta_c_mhz,
        "phase_rad": 0.0,
        "events": [_event(0.0, 1.0, 0.0), _event(off, 0.0, ramp_us), _event(ret, 1.0, ramp_us, phase=phase_offset)],
    }
    doc["grid"]["t_end_us"] = _round_up(ret + retrieval_us, dt_us)
    return parse_document(doc)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_PARAMETERS = ("detuning_mhz", "power_ratio", "storage_us")


class SweepError(RuntimeError):
    """A sweep point failed; ``value`` holds the parameter value(s)."""

    def __init__(self, message: str, value: Any):
        self.value = value
        super().__init__(message)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    base: ExperimentConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}; expected one of {SWEEP_PARAMETERS}")
        if len(self.values) == 0:
            raise ConfigError("sweep values must not be empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ConfigError("sweep values must be finite")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


def apply_parameter(doc: dict, parameter: str, value: float) -> dict:
    """Return a copy of a configuration document with one sweep parameter set."""
    doc = copy.deepcopy(doc)
    if parameter == "detuning_mhz":
        doc["control_c1"]["detuning_mhz"] = value
        doc["control_c2"]["detuning_mhz"] = -value
    elif parameter == "power_ratio":
        if value < 0:
            raise ConfigError(f"power ratio must be >= 0, got {value}")
        doc["control_c2"]["power_uw"] = value * doc["control_c1"]["power_uw"]
    elif parameter == "storage_us":
        base = parse_document(doc).sequence
        if base.storage_time is None:
            raise ConfigError("storage_us sweep needs a sequence with a storage period")
        if not value > 0:
            raise ConfigError(f"storage time must be > 0, got {value}")
        shift = value - base.storage_time
        start = base.retrieval_start
        for key in ("control_c1", "control_c2"):
            for e in doc[key]["events"]:
                if e["t_us"] >= start - 1e-12:
                    e["t_us"] = round(e["t_us"] + shift, 12)
        dt = doc["grid"]["dt_us"]
        doc["grid"]["t_end_us"] = _round_up(doc["grid"]["t_end_us"] + shift, dt)
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    return doc


def sweep_threads() -> int:
    raw = os.environ.get("TRIPOD_SIM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_sweep(spec: SweepSpec, max_batch: int = 64, snapshot_stride: int = 10) -> list[tuple[float, FieldRecord]]:
    """Simulate every sweep point; results come back in the order of ``spec.values``.

    Points sharing medium and grid are integrated as one batch.  Batches run
    on up to ``TRIPOD_SIM_THREADS`` worker threads.
    """
    base_doc = spec.base.to_document()
    configs = []
    for v in spec.values:
        try:
            cfg = parse_document(apply_parameter(base_doc, spec.parameter, v))
            cfg.validate()
        except ConfigError as exc:
            raise SweepError(f"{spec.parameter}={v}: {exc}", v) from exc
        configs.append(cfg)

    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, cfg in enumerate(configs):
        groups[(cfg.medium, cfg.grid)].append(i)
    jobs = []
    for (medium, grid), idx in groups.items():
        for k in range(0, len(idx), max_batch):
            jobs.append((medium, grid, idx[k : k + max_batch]))

    def run(job):
        medium, grid, idx = job
        try:
            return idx, simulate_many(medium, [configs[i].sequence for i in idx], grid, snapshot_stride)
        except Exception as exc:
            vals = [spec.values[i] for i in idx]
            raise SweepError(f"{spec.parameter} in {vals}: {exc}", vals) from exc

    records: list[Optional[FieldRecord]] = [None] * len(configs)
    threads = min(sweep_threads(), len(jobs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for idx, recs in results:
        for i, rec in zip(idx, recs):
            records[i] = rec
    return list(zip(spec.values, records))
