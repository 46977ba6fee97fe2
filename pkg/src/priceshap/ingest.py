"""Hourly CSV ingestion and feature engineering.

Raw tables carry NaN for missing cells; a finalized frame carries none.
Timestamps are UTC hours stored as ``datetime64[s]``.
"""

from __future__ import annotations

import csv
import io
import math
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ROLES = ("power-system", "fuel", "target")
RESOLUTIONS = ("hourly", "daily")
TIMESTAMP_COLUMN = "timestamp"
HOUR = np.timedelta64(3600, "s")


class IngestError(ValueError):
    pass


class DuplicateTimestamp(IngestError):
    pass


class OverlapDetected(IngestError):
    pass


class EmptyDataset(IngestError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    role: str
    unit: str = ""
    aggregate_of: tuple[str, ...] | None = None
    resolution: str = "hourly"
    make_ramp: bool = False
    drop_sources: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise IngestError(f"feature {self.name!r}: unknown role {self.role!r}")
        if self.resolution not in RESOLUTIONS:
            raise IngestError(f"feature {self.name!r}: unknown resolution {self.resolution!r}")
        if self.resolution == "daily" and self.role != "fuel":
            raise IngestError(f"feature {self.name!r}: daily resolution is only allowed for fuel prices")
        if self.aggregate_of is not None:
            object.__setattr__(self, "aggregate_of", tuple(self.aggregate_of))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "unit": self.unit,
            "aggregate_of": list(self.aggregate_of) if self.aggregate_of else None,
            "resolution": self.resolution,
            "make_ramp": self.make_ramp,
            "drop_sources": self.drop_sources,
        }


def validate_schema(schema: Sequence[FeatureSpec]) -> None:
    targets = [s.name for s in schema if s.role == "target"]
    if len(targets) != 1:
        raise IngestError(f"schema needs exactly one target column, found {targets}")
    names = [s.name for s in schema]
    if len(set(names)) != len(names):
        raise IngestError(f"schema has duplicate feature names: {names}")


def load_schema(path: str | Path) -> list[FeatureSpec]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    schema = [FeatureSpec(**item) for item in raw]
    validate_schema(schema)
    return schema


def dump_schema(schema: Sequence[FeatureSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in schema], indent=2) + "\n", encoding="utf-8")


def required_columns(schema: Sequence[FeatureSpec]) -> list[str]:
    """Columns the raw CSV must provide: plain features plus aggregate sources."""
    out: list[str] = []
    derived = {s.name for s in schema if s.aggregate_of}
    for s in schema:
        cols = list(s.aggregate_of) if s.aggregate_of else [s.name]
        for c in cols:
            if c not in out and c not in derived:
                out.append(c)
    return out


@dataclass(frozen=True)
class RawTable:
    timestamps: np.ndarray  # datetime64[s], strictly increasing
    columns: tuple[str, ...]
    values: np.ndarray  # rows x columns, NaN = missing
    column_units: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.timestamps), len(self.columns)):
            raise IngestError("values shape does not match timestamps x columns")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > np.timedelta64(0, "s")):
            raise IngestError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise IngestError(f"unknown column {name!r}") from None

    def with_column(self, name: str, data: np.ndarray, unit: str = "") -> RawTable:
        data = np.asarray(data, dtype=float)
        units = dict(self.column_units)
        units.setdefault(name, unit)
        if name in self.columns:
            values = self.values.copy()
            values[:, self.columns.index(name)] = data
            return RawTable(self.timestamps, self.columns, values, units)
        return RawTable(self.timestamps, self.columns + (name,), np.column_stack([self.values, data]), units)

    def without_columns(self, names: Sequence[str]) -> RawTable:
        keep = [i for i, c in enumerate(self.columns) if c not in names]
        units = {c: u for c, u in self.column_units.items() if c not in names}
        return RawTable(self.timestamps, tuple(self.columns[i] for i in keep), self.values[:, keep], units)


def _parse_timestamps(raw: pd.Series) -> np.ndarray:
    ts = pd.to_datetime(raw, utc=True, format="ISO8601")
    return ts.dt.tz_localize(None).to_numpy().astype("datetime64[s]")


def _parse_number(cell) -> float:
    # Python's float() round-trips repr exactly; pandas' fast parser does not
    try:
        v = float(cell)
    except (TypeError, ValueError):
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_csv(path: str | Path, schema: Sequence[FeatureSpec]) -> RawTable:
    """Read an hourly CSV restricted to the columns the schema needs.

    Empty or unparseable numeric cells become NaN. Extra columns are ignored.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestError(f"{path}: cannot read CSV ({exc})") from exc
    if TIMESTAMP_COLUMN not in df.columns:
        raise IngestError(f"{path}: missing required column {TIMESTAMP_COLUMN!r}")
    needed = required_columns(schema)
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: missing required column(s) {', '.join(missing)}")
    try:
        ts = _parse_timestamps(df[TIMESTAMP_COLUMN])
    except (ValueError, TypeError) as exc:
        raise IngestError(f"{path}: unparseable timestamp ({exc})") from exc
    values = np.column_stack(
        [df[c].map(_parse_number).to_numpy(dtype=float) for c in needed]
    ) if needed else np.empty((len(df), 0))
    order = np.argsort(ts, kind="stable")
    ts, values = ts[order], values[order]
    dup = np.flatnonzero(np.diff(ts) == np.timedelta64(0, "s"))
    if dup.size:
        stamp = np.datetime_as_string(ts[dup[0]], unit="s")
        raise DuplicateTimestamp(f"{path}: duplicate timestamp {stamp}Z")
    units = {}
    for s in schema:
        if s.aggregate_of:
            for c in s.aggregate_of:
                units.setdefault(c, s.unit)
        else:
            units[s.name] = s.unit
    return RawTable(ts, tuple(needed), values, {c: units.get(c, "") for c in needed})


def join_series(segments: Sequence[RawTable]) -> RawTable:
    if not segments:
        raise IngestError("join_series needs at least one segment")
    cols = segments[0].columns
    for seg in segments[1:]:
        if set(seg.columns) != set(cols):
            raise IngestError(f"segments have different columns: {cols} vs {seg.columns}")
    parts = [seg.values[:, [seg.columns.index(c) for c in cols]] for seg in segments]
    ts = np.concatenate([seg.timestamps for seg in segments])
    values = np.concatenate(parts, axis=0)
    order = np.argsort(ts, kind="stable")
    ts, values = ts[order], values[order]
    dup = np.flatnonzero(np.diff(ts) == np.timedelta64(0, "s"))
    if dup.size:
        stamp = np.datetime_as_string(ts[dup[0]], unit="s")
        raise OverlapDetected(f"segments overlap at {stamp}Z")
    units: dict[str, str] = {}
    for seg in segments:
        for c, u in seg.column_units.items():
            units.setdefault(c, u)
    return RawTable(ts, cols, values, units)


def aggregate_columns(table: RawTable, spec: FeatureSpec) -> RawTable:
    """Sum ``spec.aggregate_of`` into ``spec.name``; NaN in any source gives NaN."""
    if not spec.aggregate_of:
        raise IngestError(f"feature {spec.name!r} has no aggregate_of sources")
    missing = [c for c in spec.aggregate_of if c not in table.columns]
    if missing:
        raise IngestError(f"aggregate {spec.name!r}: missing source column(s) {', '.join(missing)}")
    total = np.zeros(len(table))
    for c in spec.aggregate_of:
        total = total + table.column(c)
    out = table.with_column(spec.name, total, spec.unit)
    if spec.drop_sources:
        out = out.without_columns([c for c in spec.aggregate_of if c != spec.name])
    return out


def interpolate_daily(table: RawTable, column: str) -> RawTable:
    """Linear interpolation between daily 00:00 anchors onto every row.

    Rows before the first or after the last anchor hold that anchor's value.
    """
    data = table.column(column)
    seconds = table.timestamps.astype(np.int64)
    at_midnight = seconds % 86400 == 0
    anchors = at_midnight & ~np.isnan(data)
    if anchors.sum() < 2:
        raise IngestError(f"column {column!r}: need at least two daily anchors, found {int(anchors.sum())}")
    filled = np.interp(seconds.astype(float), seconds[anchors].astype(float), data[anchors])
    return table.with_column(column, filled)


def ramp_name(column: str) -> str:
    return f"{column}_ramp"


def compute_ramps(table: RawTable, columns: Sequence[str]) -> RawTable:
    """Add ``<c>_ramp = f(t) - f(t-1)``; NaN where the previous hour is absent."""
    out = table
    has_prev = np.zeros(len(table), dtype=bool)
    has_prev[1:] = np.diff(table.timestamps) == HOUR
    for c in columns:
        f = table.column(c)
        ramp = np.full(len(table), np.nan)
        ramp[1:] = f[1:] - f[:-1]
        ramp[~has_prev] = np.nan
        out = out.with_column(ramp_name(c), ramp, table.column_units.get(c, ""))
    return out


@dataclass(frozen=True)
class Column:
    name: str
    unit: str
    role: str


@dataclass(frozen=True)
class TimeSeriesFrame:
    timestamps: np.ndarray
    columns: tuple[Column, ...]
    values: np.ndarray
    target_name: str
    dropped_rows: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.isnan(self.values).any():
            raise IngestError("frame contains missing values")
        if self.target_name not in self.names:
            raise IngestError(f"target {self.target_name!r} not among columns")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.name != self.target_name]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise IngestError(f"unknown column {name!r}") from None

    @property
    def X(self) -> np.ndarray:
        idx = [i for i, c in enumerate(self.columns) if c.name != self.target_name]
        return self.values[:, idx]

    @property
    def y(self) -> np.ndarray:
        return self.column(self.target_name)

    def meta_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "unit": c.unit, "role": c.role} for c in self.columns],
            "target": self.target_name,
            "rows": len(self),
            "dropped_rows": self.dropped_rows,
            "metadata": self.metadata,
        }


def frame_columns(schema: Sequence[FeatureSpec]) -> list[Column]:
    cols = []
    for s in schema:
        cols.append(Column(s.name, s.unit, s.role))
        if s.make_ramp:
            cols.append(Column(ramp_name(s.name), s.unit, s.role))
    return cols


def finalize(table: RawTable, schema: Sequence[FeatureSpec], metadata: dict | None = None) -> TimeSeriesFrame:
    validate_schema(schema)
    cols = frame_columns(schema)
    missing = [c.name for c in cols if c.name not in table.columns]
    if missing:
        raise IngestError(f"missing column(s) for frame: {', '.join(missing)}")
    values = np.column_stack([table.column(c.name) for c in cols])
    keep = ~np.isnan(values).any(axis=1)
    dropped = int((~keep).sum())
    if not keep.any():
        raise EmptyDataset(f"all {len(table)} rows contain missing values")
    target = next(s.name for s in schema if s.role == "target")
    logger.info("finalize: kept %d rows, dropped %d", int(keep.sum()), dropped)
    return TimeSeriesFrame(table.timestamps[keep], tuple(cols), values[keep], target, dropped, dict(metadata or {}))


def build_frame(table: RawTable, schema: Sequence[FeatureSpec], metadata: dict | None = None) -> TimeSeriesFrame:
    """Aggregate, interpolate fuel prices, add ramps, drop incomplete rows."""
    validate_schema(schema)
    for s in schema:
        if s.aggregate_of:
            table = aggregate_columns(table, s)
    for s in schema:
        if s.resolution == "daily":
            table = interpolate_daily(table, s.name)
    ramps = [s.name for s in schema if s.make_ramp]
    if ramps:
        table = compute_ramps(table, ramps)
    return finalize(table, schema, metadata)


def ingest_files(paths: Sequence[str | Path], schema: Sequence[FeatureSpec]) -> TimeSeriesFrame:
    validate_schema(schema)
    segments = [load_csv(p, schema) for p in paths]
    return build_frame(join_series(segments), schema)


def format_timestamp(ts: np.datetime64) -> str:
    return np.datetime_as_string(ts, unit="s") + "Z"


def frame_to_csv(frame: TimeSeriesFrame) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([TIMESTAMP_COLUMN] + frame.names)
    for ts, row in zip(frame.timestamps, frame.values):
        writer.writerow([format_timestamp(ts)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def write_frame(frame: TimeSeriesFrame, path: str | Path) -> Path:
    """Write ``<path>`` (CSV) and ``<path stem>.meta.json`` (units, roles, target)."""
    path = Path(path)
    path.write_text(frame_to_csv(frame), encoding="utf-8")
    meta = path.with_suffix(".meta.json")
    meta.write_text(json.dumps(frame.meta_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def read_frame(path: str | Path) -> TimeSeriesFrame:
    path = Path(path)
    meta_path = path.with_suffix(".meta.json")
    if not meta_path.exists():
        raise IngestError(f"frame metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    cols = tuple(Column(**c) for c in meta["columns"])
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    ts = _parse_timestamps(df[TIMESTAMP_COLUMN])
    values = np.column_stack([df[c.name].astype(float).to_numpy() for c in cols])
    return TimeSeriesFrame(ts, cols, values, meta["target"], meta.get("dropped_rows", 0), meta.get("metadata", {}))
