"""Merit-order benchmark: price as a cubic polynomial of residual load."""

from __future__ import annotations

import json
from math import comb
from dataclasses import dataclass, field

import numpy as np

from .gbt import safe_r2
from .ingest import TimeSeriesFrame

DEGREE = 3


class RankDeficient(ValueError):
    pass


@dataclass(frozen=True)
class ResidualLoadColumns:
    load: str = "load"
    wind: str = "wind"
    solar: str = "solar"


@dataclass(frozen=True)
class BenchmarkModel:
    coefficients: np.ndarray  # c0..c3 in raw residual-load units
    mean: float  # standardization of the residual load
    scale: float
    columns: ResidualLoadColumns = field(default_factory=ResidualLoadColumns)
    condition: float = float("nan")  # of the standardized design matrix
    train_r2: float | None = None

    def to_dict(self) -> dict:
        return {
            "degree": DEGREE,
            "coefficients": [float(c) for c in self.coefficients],
            "standardization": {"mean": self.mean, "scale": self.scale},
            "residual_load": {"load": self.columns.load, "wind": self.columns.wind, "solar": self.columns.solar},
            "diagnostics": {"condition": self.condition, "train_r2": self.train_r2},
        }

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkModel:
        return cls(
            np.asarray(d["coefficients"], dtype=float),
            float(d["standardization"]["mean"]),
            float(d["standardization"]["scale"]),
            ResidualLoadColumns(**d["residual_load"]),
            float(d["diagnostics"]["condition"]),
            d["diagnostics"]["train_r2"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def residual_load(frame: TimeSeriesFrame, columns: ResidualLoadColumns | None = None) -> np.ndarray:
    """Load minus wind minus solar, row by row."""
    columns = columns or ResidualLoadColumns()
    return frame.column(columns.load) - frame.column(columns.wind) - frame.column(columns.solar)


def _binomial_expand(a: np.ndarray, mean: float, scale: float) -> np.ndarray:
    """Coefficients of sum_k a_k ((r - mean) / scale)^k as a polynomial in r."""
    c = np.zeros(DEGREE + 1)
    for k, ak in enumerate(a):
        for i in range(k + 1):
            c[i] += ak * comb(k, i) * (-mean) ** (k - i) / scale ** k
    return c


def fit_benchmark(residual, price, columns: ResidualLoadColumns | None = None) -> BenchmarkModel:
    """Least-squares cubic via QR on the standardized Vandermonde matrix."""
    r = np.asarray(residual, dtype=float)
    p = np.asarray(price, dtype=float)
    if r.shape != p.shape or r.ndim != 1:
        raise ValueError("residual and price must be equal-length vectors")
    if len(np.unique(r)) < DEGREE + 1:
        raise RankDeficient(f"cubic fit needs at least {DEGREE + 1} distinct residual-load values")
    mean = float(r.mean())
    scale = float(r.std())
    z = (r - mean) / scale
    V = np.vander(z, DEGREE + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    sv = np.linalg.svd(R, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficient(f"standardized design matrix is rank deficient (condition {cond:.3g})")
    a = np.linalg.solve(R, Q.T @ p)
    coef = _binomial_expand(a, mean, scale)
    model = BenchmarkModel(coef, mean, scale, columns or ResidualLoadColumns(), cond)
    return BenchmarkModel(coef, mean, scale, model.columns, cond, safe_r2(p, predict_benchmark(model, r)))


def predict_benchmark(model: BenchmarkModel, residual) -> np.ndarray:
    r = np.asarray(residual, dtype=float)
    c = model.coefficients
    out = np.full(r.shape, c[DEGREE])
    for k in range(DEGREE - 1, -1, -1):
        out = out * r + c[k]
    return out
