"""Coupled-noise stability experiments and exponential functionals of SDE paths."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .coefficients import (ExponentPair, Field, GridField, MollificationFamily, bessel_norm,
                           mixed_norm, mollify)
from .noise import BrownianPath, RngStream, TimeGrid, refine, sample_brownian
from .parallel import concat, map_chunks
from .reports import ConvergenceReport, RateFit, fit_rate, write_csv
from .sde import SdeProblem, SolvedPath, euler_maruyama, solve_stratonovich

__all__ = [
    "NormSpec",
    "CoupledError",
    "StabilityReport",
    "FunctionalEstimate",
    "solve",
    "coupled_error",
    "coupled_error_paths",
    "moment_error",
    "refinement_change",
    "stability_scan",
    "stability_scan_stratonovich",
    "perturbation_scan",
    "khasminskii_functional",
    "envelope_constant",
    "distributional_functional",
    "moment_bounds",
]


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

_ESTIMATES = ("drift", "negative", "bessel", "none")


@dataclass(frozen=True)
class NormSpec:
    """How coefficient differences are measured.

    ``kind="mixed"`` is ``L^q_t L^p_x``; ``kind="negative"`` is
    ``L^q_t W^{-beta,p}_x``.  Norms are computed on the periodised box
    ``[-half_width, half_width)^d``.  ``estimate`` names the exponent class the
    pair must belong to: ``"drift"`` needs ``(p, q)`` in ``J_0``,
    ``"negative"`` needs ``4/q + d/p < 1``, ``"bessel"`` needs ``J_beta``.
    """

    kind: str = "mixed"
    p: float = 2.0
    q: float = math.inf
    beta: float = 0.0
    dim: int = 1
    estimate: str = "drift"
    half_width: float = 2 * math.pi
    resolution: int = 1024

    def __post_init__(self):
        if self.kind not in ("mixed", "negative"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.estimate not in _ESTIMATES:
            raise ValueError(f"unknown estimate {self.estimate!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.kind == "mixed" and self.beta != 0.0:
            raise ValueError("mixed norms have beta = 0")
        pair = ExponentPair(self.p, self.q)
        ok = {
            "drift": lambda: pair.in_class(self.dim, 0.0),
            "negative": lambda: pair.satisfies_strong(self.dim),
            "bessel": lambda: pair.in_class(self.dim, self.beta),
            "none": lambda: True,
        }[self.estimate]()
        if not ok:
            raise ValueError(f"(p, q) = ({self.p}, {self.q}) is outside the class for the {self.estimate} estimate")

    @property
    def label(self) -> str:
        q = "inf" if math.isinf(self.q) else f"{self.q:g}"
        p = "inf" if math.isinf(self.p) else f"{self.p:g}"
        if self.kind == "mixed":
            return f"L^{q}_t L^{p}_x"
        return f"L^{q}_t W^-{self.beta:g},{p}_x"

    def grid(self, f: Field, horizon: float = 1.0, times=None) -> GridField:
        return GridField.from_field(f, self.half_width, self.resolution, times=times, horizon=horizon)

    def evaluate(self, f: Field, horizon: float = 1.0, times=None) -> float:
        g = self.grid(f, horizon, times)
        if self.kind == "mixed":
            return mixed_norm(g, self.p, self.q)
        return bessel_norm(g, -self.beta, self.p, self.q)


# ---------------------------------------------------------------------------
# coupled errors
# ---------------------------------------------------------------------------


class CoupledError(NamedTuple):
    error: float
    stderr: float
    sups: np.ndarray


def solve(prob: SdeProblem, W: BrownianPath) -> SolvedPath:
    return solve_stratonovich(prob, W) if prob.convention == "stratonovich" else euler_maruyama(prob, W)


def moment_error(sups: np.ndarray, m: float) -> tuple[float, float]:
    """``E[S^m]^{1/m}`` and its delta-method standard error."""
    s = np.asarray(sups, dtype=float)
    if m < 1:
        raise ValueError("moment order must be >= 1")
    pw = s ** m
    mean = float(pw.mean())
    if mean == 0.0:
        return 0.0, 0.0
    se_mean = float(pw.std(ddof=1) / math.sqrt(len(pw))) if len(pw) > 1 else 0.0
    return mean ** (1.0 / m), se_mean * mean ** (1.0 / m - 1.0) / m


def coupled_error_paths(X1: SolvedPath, X2: SolvedPath) -> np.ndarray:
    """Per-path ``sup_nodes |X1 - X2|``."""
    if X1.grid != X2.grid:
        raise ValueError("solutions live on different grids")
    diff = X1.states - X2.states
    return np.max(np.linalg.norm(diff, axis=-1), axis=-1)


def coupled_error(prob1: SdeProblem, prob2: SdeProblem, grid: TimeGrid, M: int, m: float,
                  rng: RngStream, chunk: int = 1024, workers: int | None = None) -> CoupledError:
    """``E[sup |X^1 - X^2|^m]^{1/m}`` with both solves driven by the same Brownian path."""
    if prob1.dim != prob2.dim:
        raise ValueError("problems have different dimensions")

    def work(r: RngStream, size: int):
        W = sample_brownian(grid, prob1.dim, r, size)
        return coupled_error_paths(solve(prob1, W), solve(prob2, W))

    sups = concat(map_chunks(work, M, rng, chunk, workers))
    err, se = moment_error(sups, m)
    return CoupledError(err, se, sups)


def refinement_change(prob1: SdeProblem, prob2: SdeProblem, grid: TimeGrid, M: int, m: float,
                      rng: RngStream) -> float:
    """Relative change of the coupled error when ``dt`` is halved on the same paths."""
    W = sample_brownian(grid, prob1.dim, rng.for_purpose("coarse"), M)
    Wf = refine(W, 2, rng.for_purpose("bridge"))
    e1, _ = moment_error(coupled_error_paths(solve(prob1, W), solve(prob2, W)), m)
    e2, _ = moment_error(coupled_error_paths(solve(prob1, Wf), solve(prob2, Wf)), m)
    if e2 == 0:
        return 0.0 if e1 == 0 else math.inf
    return abs(e1 - e2) / e2


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass
class StabilityReport:
    """Rows ``(epsilon, norm_value, error, stderr)`` with a fit of log error on log norm."""

    norm_kind: str
    m: float
    rows: list[dict] = field(default_factory=list)
    anchor: str = ""

    def __post_init__(self):
        self.rows.sort(key=lambda r: r["epsilon"])

    def add(self, epsilon: float, norm_value: float, error: float, stderr: float) -> None:
        self.rows.append(dict(epsilon=float(epsilon), norm_value=float(norm_value), norm_kind=self.norm_kind,
                              m=self.m, error=float(error), stderr=float(stderr)))
        self.rows.sort(key=lambda r: r["epsilon"])

    def _positive(self):
        return [r for r in self.rows if r["norm_value"] > 0 and r["error"] > 0]

    @property
    def fit(self) -> RateFit:
        pos = self._positive()
        return fit_rate([r["norm_value"] for r in pos], [r["error"] for r in pos])

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def envelope(self) -> float:
        """Median of ``error / norm`` over rows with a positive norm."""
        pos = self._positive()
        if not pos:
            return 0.0
        return float(np.median([r["error"] / r["norm_value"] for r in pos]))

    @property
    def violations(self) -> list[int]:
        """Row indices whose error exceeds ``1.5 A norm``."""
        A = self.envelope
        return [i for i, r in enumerate(self.rows) if r["error"] > 1.5 * A * r["norm_value"] + 1e-15]

    def to_csv(self, target) -> None:
        write_csv(target, ["epsilon", "norm_value", "norm_kind", "m", "error", "stderr"], self.rows)

    def to_dict(self) -> dict:
        try:
            fit = self.fit._asdict()
        except ValueError:
            fit = None
        return {"anchor": self.anchor, "norm_kind": self.norm_kind, "m": self.m, "fit": fit,
                "envelope": self.envelope, "violations": self.violations, "rows": self.rows}

    def to_json(self, target) -> None:
        Path(target).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _as_field(f) -> Field:
    return f.field if hasattr(f, "field") and not isinstance(f, Field) else f


def stability_scan(b: Field, h: Field, sigma: Field, eps: Sequence[float], norm: NormSpec, m: float,
                   M: int, rng: RngStream, x0, grid: TimeGrid, chunk: int = 1024,
                   workers: int | None = None) -> StabilityReport:
    """Coupled errors between drifts ``b`` and ``b + eps h`` against ``||eps h||``.

    ``b`` and ``h`` may be mollified members (matched index).  Every ``eps``
    reuses the same Brownian paths.
    """
    b, h, sigma = _as_field(b), _as_field(h), _as_field(sigma)
    base = SdeProblem(b, sigma, x0)
    h_norm = norm.evaluate(h, grid.horizon)
    report = StabilityReport(norm.label, m, anchor="drift stability: sup-error linear in the drift-difference norm")
    for e in eps:
        if e < 0:
            raise ValueError("epsilon must be nonnegative")
        other = SdeProblem(b + h.scale(e), sigma, x0)
        res = coupled_error(base, other, grid, M, m, rng, chunk, workers)
        report.add(e, e * h_norm, res.error, res.stderr)
    return report


def stability_scan_stratonovich(b: Field, sigma: Field, h: Field, eps: Sequence[float], norm: NormSpec,
                                m: float, M: int, rng: RngStream, x0, grid: TimeGrid, chunk: int = 1024,
                                workers: int | None = None) -> StabilityReport:
    """Stratonovich problems with diffusions ``sigma`` and ``sigma + eps h``."""
    b, sigma, h = _as_field(b), _as_field(sigma), _as_field(h)
    base = SdeProblem(b, sigma, x0, "stratonovich")
    h_norm = norm.evaluate(h, grid.horizon)
    report = StabilityReport(norm.label, m, anchor="Stratonovich stability under diffusion perturbations")
    for e in eps:
        other = SdeProblem(b, sigma + h.scale(e), x0, "stratonovich")
        res = coupled_error(base, other, grid, M, m, rng, chunk, workers)
        report.add(e, e * h_norm, res.error, res.stderr)
    return report


def perturbation_scan(b: Field, sigma: Field, perturbations: Sequence[tuple[float, Field]],
                      norms: Sequence[NormSpec], m: float, M: int, rng: RngStream, x0, grid: TimeGrid,
                      parameter: str = "k", chunk: int = 1024, workers: int | None = None) -> ConvergenceReport:
    """Coupled errors for a labelled family of drift perturbations, with several norms per row.

    The meta block holds the fit of log error against log norm for each norm
    whose values vary across the family.
    """
    b, sigma = _as_field(b), _as_field(sigma)
    base = SdeProblem(b, sigma, x0)
    report = ConvergenceReport(parameter, "error", anchor="coupled error against norms of the drift perturbation")
    for key, h in perturbations:
        res = coupled_error(base, SdeProblem(b + h, sigma, x0), grid, M, m, rng, chunk, workers)
        row = {parameter: key, "error": res.error, "stderr": res.stderr}
        for spec in norms:
            row[spec.label] = spec.evaluate(h, grid.horizon)
        report.add(**row)
    fits = {}
    for spec in norms:
        vals = np.array([r[spec.label] for r in report.rows])
        spread = float(vals.max() / vals.min()) if vals.min() > 0 else math.inf
        entry = {"spread": spread}
        if spread > 1.01:
            entry["fit"] = fit_rate(vals, report.values)._asdict()
        fits[spec.label] = entry
    report.meta["norm_fits"] = fits
    report.meta["m"] = m
    return report


# ---------------------------------------------------------------------------
# exponential functionals
# ---------------------------------------------------------------------------


class FunctionalEstimate(NamedTuple):
    estimate: float
    stderr: float
    log_estimate: float


def _exp_mean(lam: float, integrals: np.ndarray) -> FunctionalEstimate:
    a = lam * np.asarray(integrals, dtype=float)
    M = a.size
    log_est = float(logsumexp(a) - math.log(M))
    top = float(a.max())
    scaled = np.exp(a - top)
    se = float(scaled.std(ddof=1) / math.sqrt(M)) * math.exp(top) if M > 1 else 0.0
    est = math.exp(log_est) if log_est < 709 else math.inf
    return FunctionalEstimate(est, se, log_est)


def _time_integrals(f: Field, X: SolvedPath) -> np.ndarray:
    """Cumulative trapezoid of ``f(t, X_t)`` along each path; shape ``(..., steps+1)``."""
    t = X.grid.times
    vals = np.stack([np.asarray(f(float(tk), X.states[..., k, :])) for k, tk in enumerate(t)], axis=-1)
    inc = 0.5 * (vals[..., 1:] + vals[..., :-1]) * X.grid.dt
    return np.concatenate([np.zeros(vals.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)


def _path_integrals(prob: SdeProblem, f: Field, grid: TimeGrid, M: int, rng: RngStream,
                    chunk: int, workers: int | None) -> np.ndarray:
    if f.kind != "scalar":
        raise ValueError("functional integrands must be scalar fields")

    def work(r: RngStream, size: int):
        X = solve(prob, sample_brownian(grid, prob.dim, r, size))
        return _time_integrals(f, X)

    return concat(map_chunks(work, M, rng, chunk, workers))


def khasminskii_functional(prob: SdeProblem, f: Field, lam: float, M: int, rng: RngStream, grid: TimeGrid,
                           chunk: int = 1024, workers: int | None = None) -> FunctionalEstimate:
    """Monte Carlo ``E[exp(lam int_0^T f(r, X_r) dr)]`` accumulated in log space."""
    I = _path_integrals(prob, f, grid, M, rng, chunk, workers)[..., -1]
    return _exp_mean(lam, I)


def envelope_constant(lams: Sequence[float], log_estimates: Sequence[float], f_norm: float, q: float) -> float:
    """Smallest ``C`` with ``log E(lam) <= log C + C lam^q ||f||^q`` for every ``lam``."""
    if f_norm < 0 or q <= 0:
        raise ValueError("need a nonnegative norm and a positive exponent")
    best = 0.0
    for lam, le in zip(lams, log_estimates):
        a = lam ** q * f_norm ** q
        g = lambda c: math.log(c) + c * a - le
        lo, hi = 1e-300, 1.0
        while g(hi) < 0:
            hi *= 2.0
        best = max(best, brentq(g, lo, hi, xtol=1e-14, rtol=1e-12))
    return best


def distributional_functional(prob: SdeProblem, f_family: MollificationFamily, lam: float, M: int,
                              rng: RngStream, grid: TimeGrid, schedule: Sequence[int],
                              chunk: int = 1024, workers: int | None = None) -> ConvergenceReport:
    """``E[exp(lam sup_t |int_0^t f^n(X_r) dr|)]`` across mollification members ``f^n``.

    All members see the same paths.  A row's ``increment`` is the change from
    the previous member; the sequence is flagged non-Cauchy when an increment
    exceeds the previous one by more than three paired standard errors.
    """
    schedule = [int(n) for n in schedule]
    if not schedule:
        raise ValueError("schedule must be nonempty")
    members = [mollify(f_family, n).field for n in schedule]

    def work(r: RngStream, size: int):
        X = solve(prob, sample_brownian(grid, prob.dim, r, size))
        return np.stack([np.max(np.abs(_time_integrals(f, X)), axis=-1) for f in members], axis=-1)

    sups = concat(map_chunks(work, M, rng, chunk, workers))
    report = ConvergenceReport("n", "estimate", anchor="exponential sup-functional of distributional integrands")
    prev_scaled = None
    prev_inc = None
    cauchy = True
    top = float(lam * sups.max()) if sups.size else 0.0
    for i, n in enumerate(schedule):
        est = _exp_mean(lam, sups[:, i])
        scaled = np.exp(lam * sups[:, i] - top)
        inc, inc_se = math.nan, math.nan
        if prev_scaled is not None:
            d = (scaled - prev_scaled) * math.exp(top)
            inc = abs(float(d.mean()))
            inc_se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
            if prev_inc is not None and inc > prev_inc + 3 * inc_se:
                cauchy = False
            prev_inc = inc
        report.add(n=n, estimate=est.estimate, stderr=est.stderr, log_estimate=est.log_estimate,
                   increment=inc, increment_stderr=inc_se)
        prev_scaled = scaled
    report.meta.update(lam=lam, cauchy=cauchy, paths=M)
    return report


def moment_bounds(prob: SdeProblem, f: Field, orders: Sequence[float], M: int, rng: RngStream,
                  grid: TimeGrid, f_norm: float, chunk: int = 1024,
                  workers: int | None = None) -> list[dict]:
    """``E|int_0^T f(X_r) dr|^m`` and its ratio to ``||f||^m`` for each order ``m``."""
    I = np.abs(_path_integrals(prob, f, grid, M, rng, chunk, workers)[..., -1])
    rows = []
    for m in orders:
        mom = float(np.mean(I ** m))
        rows.append({"m": m, "moment": mom, "norm_power": f_norm ** m,
                     "ratio": mom / f_norm ** m if f_norm > 0 else math.inf})
    return rows
