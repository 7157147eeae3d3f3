"""Trace ingestion: parsing, per-interval aggregation, Min-Max scaling and
sliding-window construction, plus a seeded synthetic workload generator.

Three CSV dialects are understood:

``canonical_csv``
    ``timestamp,vm_id,cpu_pct,mem_pct,net_pct`` with timestamps in seconds
    and usage in percent.  This is the interchange format written back by
    :func:`serialize_canonical`.
``gcd_like``
    ``start_time,end_time,job_id,task_index,machine_id,cpu_pct,mem_pct``
    modelled on the Google cluster task-usage table.  Times are in
    microseconds, every ``job_id-task_index`` pair is treated as one VM and
    the network column is absent (read as zero).
``bitbrains_like``
    The semicolon separated fastStorage/Rnd layout
    (``Timestamp [ms];CPU usage [%];Memory capacity provisioned [KB];...``).
    Timestamps are seconds despite the header label.  A ``vm_id`` column is
    optional; without it the caller supplies the VM id (the file stem in the
    Bitbrains archive).  Network throughput (rx + tx, KB/s) becomes a fraction
    of ``link_capacity_bps``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .resources import N_RESOURCES, ResourceVector

DEFAULT_INTERVAL_SECONDS = 300
DEFAULT_LINK_CAPACITY_BPS = 1e9

FORMATS = ("canonical_csv", "gcd_like", "bitbrains_like")
PATTERNS = ("sinusoid", "ramp", "step_burst", "noisy_constant")

CANONICAL_HEADER = ("timestamp", "vm_id", "cpu_pct", "mem_pct", "net_pct")
GCD_HEADER = ("start_time", "end_time", "job_id", "task_index", "machine_id", "cpu_pct", "mem_pct")
BB_TIMESTAMP = "Timestamp [ms]"
BB_CPU_PCT = "CPU usage [%]"
BB_MEM_PROV = "Memory capacity provisioned [KB]"
BB_MEM_USED = "Memory usage [KB]"
BB_NET_RX = "Network received throughput [KB/s]"
BB_NET_TX = "Network transmitted throughput [KB/s]"


class TraceFormatError(ValueError):
    """Unknown format name or unexpected header."""


class TraceParseError(ValueError):
    """A data line could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SeriesTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRow:
    timestamp: float
    vm_id: str
    usage: ResourceVector


@dataclass
class VmSeries:
    """Equally spaced usage of one VM; ``values`` has shape (T, n_resources)."""

    vm_id: str
    values: np.ndarray
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] < 1:
            raise ValueError("a series needs at least one interval")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NormRecord:
    mins: np.ndarray
    maxs: np.ndarray
    constant: tuple[bool, ...] = field(default=())

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(), "constant": list(self.constant)}


@dataclass
class WindowSet:
    l: int
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


# -- parsing -----------------------------------------------------------------

def _number(raw: str, line: int, name: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise TraceParseError(line, f"non-numeric {name} field {raw!r}") from None
    if not math.isfinite(value) or value < 0:
        raise TraceParseError(line, f"{name} must be finite and >= 0, got {raw!r}")
    return value


def _fraction(raw: str, line: int, name: str, scale: float = 100.0) -> float:
    return min(_number(raw, line, name) / scale, 1.0)


def _timestamp(raw: str, line: int, scale: float = 1.0) -> float:
    try:
        value = float(raw) / scale
    except ValueError:
        raise TraceParseError(line, f"non-numeric timestamp {raw!r}") from None
    if not math.isfinite(value) or value < 0:
        raise TraceParseError(line, f"timestamp must be finite and >= 0, got {raw!r}")
    return value


def _records(text: str, delimiter: str):
    reader = csv.reader(io.StringIO(text), delimiter=delimiter, skipinitialspace=True)
    for lineno, record in enumerate(reader, start=1):
        record = [c.strip() for c in record]
        if not record or all(c == "" for c in record):
            continue
        yield lineno, record


def parse_trace(fmt: str, raw: bytes | str, *, vm_id: str | None = None,
                link_capacity_bps: float = DEFAULT_LINK_CAPACITY_BPS) -> list[TraceRow]:
    """Parse one trace file into :class:`TraceRow` objects.

    Usage percentages are divided by 100 and saturate at 1.0.  Errors carry
    the 1-based line number of the offending record.
    """
    if fmt not in FORMATS:
        raise TraceFormatError(f"unknown trace format {fmt!r}; expected one of {FORMATS}")
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    delimiter = ";" if fmt == "bitbrains_like" else ","
    records = _records(text, delimiter)
    try:
        header_line, header = next(records)
    except StopIteration:
        return []

    if fmt == "canonical_csv":
        if tuple(header) != CANONICAL_HEADER:
            raise TraceFormatError(f"line {header_line}: expected header {','.join(CANONICAL_HEADER)}")
        parse_one = _canonical_row
    elif fmt == "gcd_like":
        if tuple(header) != GCD_HEADER:
            raise TraceFormatError(f"line {header_line}: expected header {','.join(GCD_HEADER)}")
        parse_one = _gcd_row
    else:
        parse_one = _bitbrains_parser(header, header_line, vm_id, link_capacity_bps)

    rows = []
    for lineno, record in records:
        rows.append(parse_one(lineno, record, len(header)))
    return rows


def _check_width(lineno: int, record: list[str], width: int) -> None:
    if len(record) != width:
        raise TraceParseError(lineno, f"expected {width} fields, got {len(record)}")


def _canonical_row(lineno, record, width) -> TraceRow:
    _check_width(lineno, record, width)
    ts, vm, cpu, mem, net = record
    if not vm:
        raise TraceParseError(lineno, "empty vm_id")
    return TraceRow(_timestamp(ts, lineno), vm, ResourceVector(
        _fraction(cpu, lineno, "cpu_pct"), _fraction(mem, lineno, "mem_pct"), _fraction(net, lineno, "net_pct")))


def _gcd_row(lineno, record, width) -> TraceRow:
    _check_width(lineno, record, width)
    start, _end, job, task, _machine, cpu, mem = record
    if not job or not task:
        raise TraceParseError(lineno, "empty job_id or task_index")
    return TraceRow(_timestamp(start, lineno, scale=1e6), f"{job}-{task}", ResourceVector(
        _fraction(cpu, lineno, "cpu_pct"), _fraction(mem, lineno, "mem_pct"), 0.0))


def _bitbrains_parser(header, header_line, vm_id, link_capacity_bps):
    index = {name: i for i, name in enumerate(header)}
    required = (BB_TIMESTAMP, BB_CPU_PCT, BB_MEM_PROV, BB_MEM_USED, BB_NET_RX, BB_NET_TX)
    missing = [c for c in required if c not in index]
    if missing:
        raise TraceFormatError(f"line {header_line}: bitbrains header lacks {missing}")
    id_col = index.get("vm_id")
    if id_col is None and not vm_id:
        raise TraceFormatError("bitbrains trace has no vm_id column; pass vm_id explicitly")
    # KB/s -> bit/s with 1 KB = 1000 bytes
    net_scale = link_capacity_bps / 8000.0

    def parse(lineno, record, width):
        _check_width(lineno, record, width)
        ts = _timestamp(record[index[BB_TIMESTAMP]], lineno)
        cpu = _fraction(record[index[BB_CPU_PCT]], lineno, BB_CPU_PCT)
        prov = _number(record[index[BB_MEM_PROV]], lineno, BB_MEM_PROV)
        used = _number(record[index[BB_MEM_USED]], lineno, BB_MEM_USED)
        mem = min(used / prov, 1.0) if prov > 0 else 0.0
        rx = _fraction(record[index[BB_NET_RX]], lineno, BB_NET_RX, scale=net_scale)
        tx = _fraction(record[index[BB_NET_TX]], lineno, BB_NET_TX, scale=net_scale)
        vm = record[id_col] if id_col is not None else vm_id
        return TraceRow(ts, vm, ResourceVector(cpu, mem, min(rx + tx, 1.0)))

    return parse


def serialize_canonical(rows: Iterable[TraceRow]) -> str:
    """Write rows as canonical CSV (percent columns at 6 decimals)."""
    out = io.StringIO()
    out.write(",".join(CANONICAL_HEADER) + "\n")
    for row in rows:
        cpu, mem, net = (100.0 * v for v in row.usage)
        out.write(f"{row.timestamp:.6f},{row.vm_id},{cpu:.6f},{mem:.6f},{net:.6f}\n")
    return out.getvalue()


# -- aggregation and scaling -------------------------------------------------

def aggregate_per_interval(rows: Sequence[TraceRow],
                           interval_seconds: int = DEFAULT_INTERVAL_SECONDS) -> dict[str, VmSeries]:
    """Bucket rows by ``floor(timestamp / interval)`` and average each bucket.

    All series share the span from the earliest to the latest bucket in the
    trace.  Leading empty buckets are 0; later gaps carry the previous value.
    """
    if interval_seconds <= 0:
        raise ValueError("interval_seconds must be positive")
    if not rows:
        return {}
    buckets: dict[str, dict[int, list[ResourceVector]]] = {}
    for row in rows:
        b = int(math.floor(row.timestamp / interval_seconds))
        buckets.setdefault(row.vm_id, {}).setdefault(b, []).append(row.usage)
    first = min(min(per_vm) for per_vm in buckets.values())
    last = max(max(per_vm) for per_vm in buckets.values())
    span = last - first + 1

    result = {}
    for vm in sorted(buckets):
        values = np.zeros((span, N_RESOURCES))
        previous = np.zeros(N_RESOURCES)
        per_vm = buckets[vm]
        for k in range(span):
            samples = per_vm.get(first + k)
            if samples:
                # fsum keeps the mean independent of row order
                previous = np.array([math.fsum(s[r] for s in samples) / len(samples)
                                     for r in range(N_RESOURCES)])
            values[k] = previous
        result[vm] = VmSeries(vm, values, interval_seconds)
    return result


def normalize_minmax(series: VmSeries) -> tuple[VmSeries, NormRecord]:
    values = series.values
    mins = values.min(axis=0)
    maxs = values.max(axis=0)
    span = maxs - mins
    constant = tuple(bool(s == 0) for s in span)
    safe = np.where(span == 0, 1.0, span)
    scaled = np.where(span == 0, 0.0, (values - mins) / safe)
    return VmSeries(series.vm_id, scaled, series.interval_seconds), NormRecord(mins, maxs, constant)


def denormalize(values, record: NormRecord) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values * (record.maxs - record.mins) + record.mins


def build_windows(series: VmSeries | np.ndarray, l: int) -> WindowSet:
    """Unroll a series into (l-step history -> next step) training pairs.

    Input rows are flattened time-major, resource-minor: entry ``j*n + i`` is
    resource ``i`` at lag position ``j``.
    """
    values = series.values if isinstance(series, VmSeries) else np.atleast_2d(np.asarray(series, dtype=float))
    if l < 1:
        raise ValueError("window length must be >= 1")
    if values.shape[0] < l + 1:
        raise SeriesTooShortError(f"need at least l + 1 = {l + 1} intervals, got {values.shape[0]}")
    m = values.shape[0] - l
    n = values.shape[1]
    stride = np.lib.stride_tricks.sliding_window_view(values, (l, n))[:m, 0]
    inputs = stride.reshape(m, l * n).copy()
    targets = values[l:].copy()
    return WindowSet(l, inputs, targets)


def stack_windows(sets: Sequence[WindowSet]) -> WindowSet:
    if not sets:
        raise ValueError("no window sets to stack")
    l = sets[0].l
    return WindowSet(l, np.vstack([s.inputs for s in sets]), np.vstack([s.targets for s in sets]))


# -- synthetic traces --------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for :func:`generate_synthetic_trace`.

    ``amplitude`` is the wave amplitude for ``sinusoid``/``ramp`` and the
    uniform noise half-width for ``noisy_constant``.  ``noise`` is an extra
    Gaussian standard deviation for the other patterns.
    """

    n_vms: int
    n_intervals: int
    pattern: str = "sinusoid"
    seed: int = 0
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS
    period: int = 12
    amplitude: float = 0.25
    noise: float = 0.0
    base_range: tuple[float, float] = (0.3, 0.6)
    burst_probability: float = 0.03
    burst_duration: tuple[int, int] = (3, 8)
    burst_level: tuple[float, float] = (0.88, 1.0)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticSpec":
        data = dict(data)
        for key in ("base_range", "burst_duration", "burst_level"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def _triangle(phase: np.ndarray) -> np.ndarray:
    """Unit triangle wave in [-1, 1] with period 1."""
    frac = np.mod(phase, 1.0)
    return 4.0 * np.abs(frac - 0.5) - 1.0


def synthetic_matrix(spec: SyntheticSpec) -> np.ndarray:
    """Usage values of shape (n_vms, n_intervals, n_resources) in [0, 1]."""
    if spec.n_vms < 1 or spec.n_intervals < 1:
        raise ValueError("n_vms and n_intervals must be >= 1")
    if spec.pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {spec.pattern!r}")
    rng = np.random.default_rng(spec.seed)
    shape = (spec.n_vms, spec.n_intervals, N_RESOURCES)
    t = np.arange(spec.n_intervals, dtype=float)[None, :, None]
    lo, hi = spec.base_range
    base = rng.uniform(lo, hi, size=(spec.n_vms, 1, N_RESOURCES))
    phase = rng.uniform(0.0, 1.0, size=(spec.n_vms, 1, N_RESOURCES))

    if spec.pattern == "sinusoid":
        values = base + spec.amplitude * np.sin(2.0 * np.pi * (t / spec.period + phase))
    elif spec.pattern == "ramp":
        values = base + spec.amplitude * _triangle(t / spec.period + phase)
    elif spec.pattern == "noisy_constant":
        values = base + spec.amplitude * rng.uniform(-1.0, 1.0, size=shape)
    else:
        values = np.broadcast_to(base, shape).copy()
        dmin, dmax = spec.burst_duration
        blo, bhi = spec.burst_level
        for v in range(spec.n_vms):
            k = 0
            while k < spec.n_intervals:
                if rng.random() < spec.burst_probability:
                    length = int(rng.integers(dmin, dmax + 1))
                    level = rng.uniform(blo, bhi, size=N_RESOURCES)
                    values[v, k:k + length] = np.maximum(values[v, k:k + length], level)
                    k += length
                else:
                    k += 1
    if spec.noise > 0 and spec.pattern != "noisy_constant":
        values = values + rng.normal(0.0, spec.noise, size=shape)
    return np.clip(values, 0.0, 1.0)


def generate_synthetic_trace(spec: SyntheticSpec) -> list[TraceRow]:
    values = synthetic_matrix(spec)
    rows = []
    width = max(4, len(str(spec.n_vms - 1)))
    for k in range(spec.n_intervals):
        ts = float(k * spec.interval_seconds)
        for v in range(spec.n_vms):
            rows.append(TraceRow(ts, f"vm{v:0{width}d}", ResourceVector.of(values[v, k])))
    return rows
