"""
Command-line entry point.

    tripod-sim validate --config run.json
    tripod-sim simulate --config run.json --out results/ [--format csv|json]
    tripod-sim sweep --config run.json --param detuning_mhz --range 0:2:0.05 --out results/

Exit codes: 0 success, 1 configuration error, 2 numerical instability,
3 file system error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    INITIAL_WINDOW_US,
    Waveform,
    poisson_sample,
    split_windows,
    splitting_ratio,
    window_counts,
)
from .core import ConfigError, SimulationInstabilityError
from .maxwell_bloch import FieldRecord, simulate
from .protocol import (
    SCHEMA_VERSION,
    SWEEP_PARAMETERS,
    ExperimentConfig,
    SweepError,
    SweepSpec,
    apply_parameter,
    parse_config,
    parse_document,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INSTABILITY = 2
EXIT_IO = 3

WAVEFORM_COLUMNS = ("t_us", "counts")
SWEEP_COLUMNS = ("param_value", "metric")


class _IOFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _csv_text(columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    # json emits shortest round-trip reprs of floats.
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _table(columns: Sequence[str], a, b, fmt: str) -> str:
    if fmt == "csv":
        return _csv_text(columns, zip(a, b))
    return _json_text({columns[0]: [float(x) for x in a], columns[1]: [float(x) for x in b]})


def _write_all(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file or none.  Content is staged in temporary files first."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        staged = []
        try:
            for name, text in files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
                staged.append((tmp, out_dir / name))
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            for tmp, final in staged:
                os.replace(tmp, final)
        finally:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.unlink(tmp)
    except OSError as exc:
        raise _IOFailure(f"cannot write to {out_dir}: {exc}") from exc


# ---------------------------------------------------------------------------
# Shared steps
# ---------------------------------------------------------------------------


def _load_document(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}", path="<root>") from exc
    parse_document(doc)
    return doc


def _waveform(record: FieldRecord, rng) -> Waveform:
    w = Waveform.from_record(record)
    return poisson_sample(w, rng) if rng is not None else w


def _record_summary(record: FieldRecord, w: Waveform) -> dict:
    out = record.summary()
    out["total_counts"] = w.total
    seq = record.sequence
    start = seq.retrieval_start if seq is not None else None
    if start is not None:
        lo, hi = w.span
        out["retrieval_start_us"] = start
        out["retrieved_counts"] = window_counts(w, start, hi)
        out["retrieval_efficiency"] = out["retrieved_counts"] / (record.mean_photons * record.input_photons)
        out["initial_window_counts"] = window_counts(w, start, min(hi, start + INITIAL_WINDOW_US))
        try:
            split = splitting_ratio(w, *split_windows(record))
        except ValueError:
            pass
        else:
            out["splitting"] = {"n_c1": split.n_c1, "n_c2": split.n_c2, "eta": split.eta}
    return out


def _metadata(config: ExperimentConfig, document: dict, extra: Optional[dict] = None) -> dict:
    meta = {
        "tool": "tripod-sim",
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": document,
        "resolved": config.resolved(),
    }
    if extra:
        meta.update(extra)
    return meta


def _rng(seed: Optional[int]):
    return None if seed is None else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    doc = _load_document(args.config)
    config = parse_document(doc)
    config.validate()
    sys.stdout.write(_json_text(config.resolved()))
    return EXIT_OK


def cmd_run(args) -> int:
    doc = _load_document(args.config)
    config = parse_document(doc)
    config.validate()
    record = simulate(config.medium, config.sequence, config.grid)
    w = _waveform(record, _rng(args.poisson_seed))
    files = {
        f"waveform.{args.format}": _table(WAVEFORM_COLUMNS, w.times, w.counts, args.format),
        "summary.json": _json_text(_record_summary(record, w)),
        "metadata.json": _json_text(_metadata(config, doc, {"poisson_seed": args.poisson_seed})),
    }
    _write_all(Path(args.out), files)
    for msg in record.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


def parse_range(text: str) -> list[float]:
    """``lo:hi:step`` -> inclusive list of values."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"range must look like lo:hi:step, got {text!r}", path="--range") from None
    if not all(math.isfinite(v) for v in (lo, hi, step)) or step <= 0 or hi < lo:
        raise ConfigError(f"empty range {text!r}: need step > 0 and hi >= lo", path="--range")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(n)]


def parse_values(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"values must be comma-separated numbers, got {text!r}", path="--values") from None
    if not values:
        raise ConfigError("no sweep values given", path="--values")
    return values


def sweep_metric(parameter: str, record: FieldRecord, w: Waveform) -> float:
    """Splitting proportion for power-ratio sweeps, initial-window counts otherwise."""
    if parameter == "power_ratio":
        return splitting_ratio(w, *split_windows(record)).eta
    start = record.sequence.retrieval_start
    if start is None:
        raise ConfigError("sweep metric needs a retrieval after the storage period", path="control_c1.events")
    return window_counts(w, start, start + INITIAL_WINDOW_US)


def cmd_sweep(args) -> int:
    if (args.values is None) == (args.range is None):
        raise ConfigError("give exactly one of --values or --range", path="--values")
    values = parse_values(args.values) if args.values is not None else parse_range(args.range)
    doc = _load_document(args.config)
    if args.storage_us is not None:
        doc = apply_parameter(doc, "storage_us", args.storage_us)
    base = parse_document(doc)
    base.validate()
    try:
        results = run_sweep(SweepSpec(args.param, tuple(values), base))
    except SweepError as exc:
        if isinstance(exc.__cause__, (ConfigError, SimulationInstabilityError)):
            raise exc.__cause__ from exc
        raise

    rng = _rng(args.poisson_seed)
    metrics = []
    files: dict[str, str] = {}
    for i, (value, record) in enumerate(results):
        w = _waveform(record, rng)
        metrics.append(sweep_metric(args.param, record, w))
        if args.keep_waveforms:
            files[f"waveform_{i:04d}.{args.format}"] = _table(WAVEFORM_COLUMNS, w.times, w.counts, args.format)
    files[f"sweep.{args.format}"] = _table(SWEEP_COLUMNS, values, metrics, args.format)
    metric_name = "eta" if args.param == "power_ratio" else "initial_window_counts"
    files["metadata.json"] = _json_text(
        _metadata(
            base,
            doc,
            {
                "sweep": {"parameter": args.param, "values": values, "metric": metric_name},
                "poisson_seed": args.poisson_seed,
            },
        )
    )
    _write_all(Path(args.out), files)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripod-sim", description="Tripod-scheme light storage simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a config and check the grid")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    def outputs(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--poisson-seed", type=int, default=None, help="sample counts instead of expectations")

    p = sub.add_parser("simulate", help="run one configuration")
    outputs(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="scan one parameter")
    outputs(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--range", help="lo:hi:step, inclusive")
    p.add_argument("--storage-us", type=float, default=None, help="set the storage time before sweeping")
    p.add_argument("--keep-waveforms", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationInstabilityError as exc:
        print(f"simulation unstable: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except _IOFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
