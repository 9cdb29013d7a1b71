"""Convergence tables, log-log rate fits and deterministic report files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

__all__ = ["RateFit", "fit_rate", "ConvergenceReport", "format_value", "write_csv"]


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_rate(params: Sequence[float], values: Sequence[float]) -> RateFit:
    """Least squares of ``log value`` on ``log param`` over rows with positive entries."""
    p = np.asarray(params, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (p > 0) & (v > 0) & np.isfinite(p) & np.isfinite(v)
    if np.count_nonzero(keep) < 3:
        raise ValueError("rate fit needs at least 3 rows with positive parameter and value")
    x, y = np.log(p[keep]), np.log(v[keep])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("rate fit needs at least two distinct parameters")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    # constant data is fitted exactly by a flat line
    r2 = 1.0 if ss_tot <= 1e-300 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(slope, intercept, r2)


def format_value(v: Any) -> str:
    """Deterministic text form: ``repr`` for floats (shortest round-trip)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(target, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


@dataclass
class ConvergenceReport:
    """Rows of ``(parameter, value, stderr, ...)`` with a log-log fit of value on parameter."""

    parameter: str
    value: str
    rows: list[dict] = field(default_factory=list)
    anchor: str = ""
    meta: dict = field(default_factory=dict)

    def add(self, **row) -> None:
        self.rows.append(row)

    @property
    def params(self) -> np.ndarray:
        return np.array([r[self.parameter] for r in self.rows], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([r[self.value] for r in self.rows], dtype=float)

    @property
    def fit(self) -> RateFit | None:
        try:
            return fit_rate(self.params, self.values)
        except ValueError:
            return None

    @property
    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, target) -> None:
        write_csv(target, self.columns, self.rows)

    def to_dict(self) -> dict:
        fit = self.fit
        return _jsonable({
            "parameter": self.parameter,
            "value": self.value,
            "anchor": self.anchor,
            "rows": self.rows,
            "fit": None if fit is None else fit._asdict(),
            "meta": self.meta,
        })

    def to_json(self, target) -> None:
        Path(target).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_dat(self, target) -> None:
        """Whitespace-separated table for gnuplot."""
        cols = [c for c in self.columns if all(isinstance(r.get(c), (int, float, np.number)) and not isinstance(r.get(c), bool) for r in self.rows)]
        with open(target, "w") as fh:
            fh.write("# " + " ".join(cols) + "\n")
            for r in self.rows:
                fh.write(" ".join(format_value(r[c]) for c in cols) + "\n")
