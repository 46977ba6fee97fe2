"""Synthetic hourly market data with known ground truth.

Price = g(w_L*L - w_W*W - w_S*S) + gamma * gas * 1[L > load_high]
        + step * 1[oil > oil_threshold] + noise,   g cubic.

Series are built as raw component columns (four control-area loads, on- and
offshore wind, daily fuel anchors) and pushed through the regular ingest
steps, so the emitted CSV re-ingests to the identical frame.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ingest
from .benchmark import fit_benchmark, predict_benchmark
from .ingest import FeatureSpec, RawTable, TimeSeriesFrame

LOAD_AREAS = ("load_50hertz", "load_amprion", "load_tennet", "load_transnetbw")
LOAD_SHARES = (0.18, 0.33, 0.27, 0.22)
WIND_PARTS = ("wind_onshore", "wind_offshore")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    hours: int = 2 * 8760
    start: str = "2017-01-01T00:00:00"
    seed: int = 0
    cubic: tuple[float, float, float, float] = (-10.0, 1.2, -0.012, 0.00015)
    load_weight: float = 1.0
    wind_weight: float = 1.5
    solar_weight: float = 0.6
    gas_interaction: float = 0.25
    load_high: float = 60.0
    step: float = 4.0
    oil_threshold: float = 69.0
    noise_sigma: float = 0.0
    # when set, noise_sigma is solved so a full-data cubic fit lands on this R2
    target_benchmark_r2: float | None = 0.65

    def __post_init__(self):
        if self.hours < 24 * 7 * 8:
            raise SpecError(f"hours must be >= {24 * 7 * 8} (eight weeks), got {self.hours}")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.target_benchmark_r2 is not None and not 0 < self.target_benchmark_r2 < 1:
            raise SpecError("target_benchmark_r2 must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cubic"] = list(self.cubic)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        d = dict(d)
        if "cubic" in d:
            d["cubic"] = tuple(float(c) for c in d["cubic"])
        return cls(**d)


def noiseless(spec: SyntheticSpec) -> SyntheticSpec:
    """Price exactly cubic in L - W - S: unit weights, no extra terms, no noise."""
    return replace(spec, load_weight=1.0, wind_weight=1.0, solar_weight=1.0, gas_interaction=0.0,
                   step=0.0, noise_sigma=0.0, target_benchmark_r2=None)


def schema() -> list[FeatureSpec]:
    return [
        FeatureSpec("load", "power-system", "GW", aggregate_of=LOAD_AREAS, make_ramp=True),
        FeatureSpec("wind", "power-system", "GW", aggregate_of=WIND_PARTS, make_ramp=True),
        FeatureSpec("solar", "power-system", "GW", make_ramp=True),
        FeatureSpec("total_generation", "power-system", "GW", make_ramp=True),
        FeatureSpec("import_export", "power-system", "GW"),
        FeatureSpec("oil", "fuel", "USD/bbl", resolution="daily"),
        FeatureSpec("gas", "fuel", "EUR/MWh", resolution="daily"),
        FeatureSpec("price", "target", "EUR/MWh"),
    ]


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    """Unit-variance stationary AR(1) path."""
    eps = rng.normal(0.0, math.sqrt(1.0 - phi * phi), n)
    out = np.empty(n)
    out[0] = rng.normal()
    for t in range(1, n):
        out[t] = phi * out[t - 1] + eps[t]
    return out


def _raw_table(spec: SyntheticSpec) -> RawTable:
    rng = np.random.default_rng(spec.seed)
    n = spec.hours
    t0 = np.datetime64(spec.start.rstrip("Z"), "h")
    ts = (t0 + np.arange(n)).astype("datetime64[s]")
    hour = (np.arange(n) + t0.astype(object).hour) % 24
    day = np.arange(n) // 24
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]").astype("datetime64[D]")).astype(int)
    weekday = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7  # 0 = Monday
    season = np.cos(2 * np.pi * doy / 365.25)  # +1 in January

    load = (55.0 + 7.0 * -np.cos(2 * np.pi * (hour - 2) / 24) + 5.0 * season
            - 6.0 * (weekday >= 5) + 2.0 * _ar1(rng, n, 0.95))
    z = _ar1(rng, n, 0.97)
    wind = 45.0 / (1.0 + np.exp(-(1.3 * z + 0.4 * season - 0.9)))
    cloud = np.clip(0.65 + 0.25 * _ar1(rng, n, 0.9), 0.1, 1.0)
    amplitude = 25.0 - 13.0 * season
    solar = amplitude * np.clip(np.sin(np.pi * (hour - 5) / 15), 0.0, None) * cloud
    imp = -0.15 * (wind - 13.0) + 3.0 * _ar1(rng, n, 0.98)
    total = load - imp + 0.8 * _ar1(rng, n, 0.5)

    n_days = int(day[-1]) + 1
    oil_daily = 67.0 + 9.0 * np.sin(2 * np.pi * np.arange(n_days) / 300 + 0.5) + np.cumsum(rng.normal(0, 0.4, n_days))
    gas_daily = 20.0 + 4.0 * np.sin(2 * np.pi * np.arange(n_days) / 365 + 1.0) + np.cumsum(rng.normal(0, 0.15, n_days))
    at_midnight = hour == 0
    oil = np.where(at_midnight, oil_daily[day], np.nan)
    gas = np.where(at_midnight, gas_daily[day], np.nan)

    cols: dict[str, np.ndarray] = {}
    for name, share in zip(LOAD_AREAS, LOAD_SHARES):
        cols[name] = load * share
    cols["wind_onshore"] = 0.8 * wind
    cols["wind_offshore"] = 0.2 * wind
    cols["solar"] = solar
    cols["total_generation"] = total
    cols["import_export"] = imp
    cols["oil"] = oil
    cols["gas"] = gas
    units = {c: "GW" for c in cols}
    units.update(oil="USD/bbl", gas="EUR/MWh")
    return RawTable(ts, tuple(cols), np.column_stack(list(cols.values())), units)


def price_terms(spec: SyntheticSpec, load, wind, solar, gas, oil) -> tuple[np.ndarray, np.ndarray]:
    """(noise-free price, effective residual load) from hourly inputs."""
    r = spec.load_weight * load - spec.wind_weight * wind - spec.solar_weight * solar
    c0, c1, c2, c3 = spec.cubic
    g = ((c3 * r + c2) * r + c1) * r + c0
    price = g + spec.gas_interaction * gas * (load > spec.load_high) + spec.step * (oil > spec.oil_threshold)
    return price, r


def solve_sigma(clean_price: np.ndarray, residual: np.ndarray, target_r2: float) -> float:
    """Noise level giving an expected full-data benchmark R2 of ``target_r2``."""
    fit = fit_benchmark(residual, clean_price)
    e0 = float(np.mean((clean_price - predict_benchmark(fit, residual)) ** 2))
    var = float(np.var(clean_price))
    s2 = ((1.0 - target_r2) * var - e0) / target_r2
    return math.sqrt(s2) if s2 > 0 else 0.0


def generate_table(spec: SyntheticSpec) -> tuple[RawTable, float]:
    """Raw table with a price column appended, and the noise sigma used."""
    raw = _raw_table(spec)
    table = raw
    for s in schema():
        if s.aggregate_of:
            table = ingest.aggregate_columns(table, s)
    for s in schema():
        if s.resolution == "daily":
            table = ingest.interpolate_daily(table, s.name)
    clean, _ = price_terms(spec, table.column("load"), table.column("wind"), table.column("solar"),
                           table.column("gas"), table.column("oil"))
    sigma = spec.noise_sigma
    if spec.target_benchmark_r2 is not None:
        residual = table.column("load") - table.column("wind") - table.column("solar")
        sigma = solve_sigma(clean, residual, spec.target_benchmark_r2)
    # separate stream so the noise never perturbs the feature draws
    noise = np.random.default_rng([spec.seed, 1]).normal(0.0, 1.0, len(clean)) * sigma if sigma > 0 else 0.0
    return raw.with_column("price", clean + noise, "EUR/MWh"), float(sigma)


def generate(spec: SyntheticSpec | None = None) -> TimeSeriesFrame:
    spec = spec or SyntheticSpec()
    table, sigma = generate_table(spec)
    frame = ingest.build_frame(table, schema())
    meta = {"generator": spec.to_dict(), "noise_sigma_used": sigma}
    return TimeSeriesFrame(frame.timestamps, frame.columns, frame.values, frame.target_name,
                           frame.dropped_rows, meta)


def table_to_csv(table: RawTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([ingest.TIMESTAMP_COLUMN, *table.columns])
    for ts, row in zip(table.timestamps, table.values):
        w.writerow([ingest.format_timestamp(ts)] + ["" if math.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def write_dataset(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write raw.csv and schema.json in the ingest contract."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, sigma = generate_table(spec)
    paths = {"data": out / "raw.csv", "schema": out / "schema.json"}
    paths["data"].write_text(table_to_csv(table), encoding="utf-8")
    ingest.dump_schema(schema(), paths["schema"])
    return paths
