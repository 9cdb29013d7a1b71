"""Wong-Zakai approximations of the Wiener process and the two-step scheme.

Smooth approximations are stored as piecewise polynomials in the local
variable ``u = s - breaks[k]``, so pathwise integrals such as
``int W_i dW^n_j`` are computed exactly, piece by piece.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import Field, MollificationFamily, mollify, wz_correction
from .noise import BrownianPath, RngStream, TimeGrid, refine, restrict, sample_brownian
from .parallel import concat, map_chunks
from .reports import ConvergenceReport, fit_rate
from .sde import SdeProblem, SolvedPath, euler_maruyama

__all__ = [
    "WienerApproxFamily",
    "SmoothPath",
    "CorrectionEstimate",
    "build_approximation",
    "estimate_s",
    "estimate_c",
    "estimate_s_and_c",
    "solve_driven_ode",
    "wz_limit_problem",
    "two_step_experiment",
    "hfn_quantity",
    "moment_constant",
    "sup_distance",
]

KINDS = ("piecewise-linear", "kernel", "custom")


@dataclass(frozen=True)
class WienerApproxFamily:
    """``W^n`` built from ``W`` at mesh ``1/n``.

    ``piecewise-linear`` interpolates ``W`` at ``k/n``.  ``kernel`` averages that
    interpolant with the centred box kernel of width ``1/n`` (the path is
    extended by ``0`` before time 0 and by ``W_T`` after ``T``), which gives a
    C^1 piecewise quadratic with ``W^n_0 != 0``.  ``custom`` calls
    ``builder(W, n)`` and must declare ``s_limit`` and ``rate``.
    """

    kind: str = "piecewise-linear"
    n: int = 1
    s_limit: Optional[np.ndarray] = None
    rate: Optional[Callable[[int], float]] = None
    builder: Optional[Callable[[BrownianPath, int], "SmoothPath"]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown approximation kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.kind == "custom" and (self.builder is None or self.s_limit is None or self.rate is None):
            raise ValueError("custom families must provide builder, s_limit and rate")

    def with_n(self, n: int) -> "WienerApproxFamily":
        return WienerApproxFamily(self.kind, n, self.s_limit, self.rate, self.builder)

    def limit_s(self, d: int) -> np.ndarray:
        return np.zeros((d, d)) if self.s_limit is None else np.asarray(self.s_limit, dtype=float)

    def limit_c(self, d: int) -> np.ndarray:
        return self.limit_s(d) + 0.5 * np.eye(d)


@dataclass(frozen=True)
class SmoothPath:
    """Piecewise-polynomial path; ``coeffs`` has shape ``(..., pieces, degree+1, d)``."""

    breaks: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim < 3 or c.shape[-3] != len(b) - 1:
            raise ValueError("coeffs must have shape (..., pieces, degree+1, d)")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "coeffs", c)

    @property
    def kinks(self) -> np.ndarray:
        return self.breaks

    @property
    def pieces(self) -> int:
        return len(self.breaks) - 1

    @property
    def degree(self) -> int:
        return self.coeffs.shape[-2] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def horizon(self) -> float:
        return float(self.breaks[-1])

    @property
    def derivative_coeffs(self) -> np.ndarray:
        powers = np.arange(1, self.degree + 1, dtype=float)[:, None]
        return self.coeffs[..., 1:, :] * powers

    def _piece(self, s: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.breaks, s, side="right") - 1, 0, self.pieces - 1)

    @staticmethod
    def _horner(c: np.ndarray, u) -> np.ndarray:
        out = c[..., -1, :]
        for p in range(c.shape[-2] - 2, -1, -1):
            out = out * u + c[..., p, :]
        return out

    def value_on(self, piece: int, u) -> np.ndarray:
        return self._horner(self.coeffs[..., piece, :, :], u)

    def derivative_on(self, piece: int, u) -> np.ndarray:
        dc = self.derivative_coeffs[..., piece, :, :]
        if dc.shape[-2] == 0:
            return np.zeros(self.coeffs.shape[:-3] + (self.dim,))
        return self._horner(dc, u)

    def __call__(self, times) -> np.ndarray:
        """Values at ``times`` with shape ``(..., len(times), d)``."""
        s = np.atleast_1d(np.asarray(times, dtype=float))
        k = self._piece(s)
        u = (s - self.breaks[k])[:, None]
        c = self.coeffs[..., k, :, :]
        out = c[..., -1, :]
        for p in range(self.degree - 1, -1, -1):
            out = out * u + c[..., p, :]
        return out

    def derivative(self, times) -> np.ndarray:
        """Right derivative at ``times`` (valid between kinks)."""
        return SmoothPath(self.breaks, self.derivative_coeffs if self.degree else
                          np.zeros(self.coeffs.shape[:-2] + (1, self.dim)))(times)

    def node_values(self) -> np.ndarray:
        return self(self.breaks)

    def integrated_derivative(self) -> np.ndarray:
        """``int_{b_k}^{b_{k+1}} dW^n/ds ds`` for every piece, exactly."""
        h = np.diff(self.breaks)
        powers = np.arange(1, self.degree + 1)
        hp = h[:, None] ** powers[None, :]
        return np.einsum("...kpd,kp->...kd", self.coeffs[..., 1:, :], hp)

    def pair_integrals(self, upto: float | None = None) -> np.ndarray:
        """``I[..., i, j] = int_0^t W^n_i dW^n_j`` exactly, summed over pieces up to ``t``."""
        t = self.horizon if upto is None else upto
        last = int(np.searchsorted(self.breaks, t - 1e-12 * max(1.0, t), side="right"))
        if not math.isclose(self.breaks[min(last, self.pieces)], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t={t} is not a breakpoint of the path")
        c = self.coeffs[..., :last, :, :]
        dc = self.derivative_coeffs[..., :last, :, :]
        h = np.diff(self.breaks)[:last]
        P, Q = c.shape[-2], dc.shape[-2]
        expo = np.arange(P)[:, None] + np.arange(Q)[None, :] + 1
        hmat = h[:, None, None] ** expo[None] / expo[None]
        return np.einsum("...kpi,...kqj,kpq->...ij", c, dc, hmat)


def _mesh_nodes(W: BrownianPath, n: int) -> tuple[np.ndarray, np.ndarray]:
    T = W.grid.horizon
    pieces = T * n
    if not math.isclose(pieces, round(pieces), rel_tol=1e-9):
        raise ValueError(f"horizon {T} is not a multiple of 1/{n}")
    pieces = int(round(pieces))
    if W.grid.steps % pieces:
        raise ValueError(f"Brownian path with {W.grid.steps} steps is too coarse for mesh 1/{n}")
    stride = W.grid.steps // pieces
    return np.arange(pieces + 1) / n, W.values[..., ::stride, :]


def build_approximation(W: BrownianPath, fam: WienerApproxFamily) -> SmoothPath:
    n = fam.n
    if fam.kind == "custom":
        return fam.builder(W, n)
    breaks, nodes = _mesh_nodes(W, n)
    if fam.kind == "piecewise-linear":
        slope = np.diff(nodes, axis=-2) * n
        coeffs = np.stack([nodes[..., :-1, :], slope], axis=-2)
        return SmoothPath(breaks, coeffs)
    # centred box average of the interpolant, on the half mesh
    pieces = len(breaks) - 1
    mid = 0.5 * (nodes[..., :-1, :] + nodes[..., 1:, :])
    half = np.empty(nodes.shape[:-2] + (2 * pieces + 1, nodes.shape[-1]))
    half[..., 0::2, :] = nodes
    half[..., 1::2, :] = mid
    zero = np.zeros_like(half[..., :1, :])
    ext = np.concatenate([zero, half, half[..., -1:, :]], axis=-2)
    L_prev, L_cur, L_next = ext[..., :-2, :], ext[..., 1:-1, :], ext[..., 2:, :]
    value = 0.25 * (L_prev + 2.0 * L_cur + L_next)
    slope = n * (L_next - L_prev)
    dh = 0.5 / n
    curv = (slope[..., 1:, :] - slope[..., :-1, :]) / (2.0 * dh)
    coeffs = np.stack([value[..., :-1, :], slope[..., :-1, :], curv], axis=-2)
    hb = np.arange(2 * pieces + 1) * dh
    return SmoothPath(hb, coeffs)


def sup_distance(W: BrownianPath, Wn: SmoothPath) -> np.ndarray:
    """``sup_t |W_t - W^n_t|^2`` over the nodes of ``W``, per path."""
    diff = W.values - Wn(W.grid.times)
    return np.max(np.sum(diff * diff, axis=-1), axis=-1)


@dataclass(frozen=True)
class CorrectionEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    samples: int

    def within(self, target, k: float = 3.0) -> bool:
        """Entrywise ``|estimate - target| <= k * stderr``."""
        return bool(np.all(np.abs(self.matrix - np.asarray(target)) <= k * self.stderr))

    def skew_consistent(self, k: float = 3.0) -> bool:
        s, e = self.matrix, self.stderr
        return bool(np.all(np.abs(s + s.T) <= k * (e + e.T)))


def _mc(values: np.ndarray) -> CorrectionEstimate:
    m = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(m)
    return CorrectionEstimate(mean, se, m)


def _pathwise_s_c(fam: WienerApproxFamily, t: float, d: int, rng: RngStream, size: int):
    n = fam.n
    pieces = int(round(t * n)) + 1
    W = sample_brownian(TimeGrid(pieces / n, pieces), d, rng, size)
    Wn = build_approximation(W, fam)
    I = Wn.pair_integrals(t)
    s = (I - np.swapaxes(I, -1, -2)) / (2.0 * t)
    wt = Wn([t])[..., 0, :]
    w0 = Wn([0.0])[..., 0, :]
    c = ((wt - w0)[..., :, None] * wt[..., None, :] - np.swapaxes(I, -1, -2)) / t
    return s, c


def _check_mc_args(fam: WienerApproxFamily, t: float, M: int):
    if M < 100:
        raise ValueError("need at least 100 samples for a meaningful standard error")
    if t <= 0 or not math.isclose(t * fam.n, round(t * fam.n), rel_tol=1e-9):
        raise ValueError(f"t={t} must be a positive multiple of 1/{fam.n}")


def estimate_s_and_c(fam: WienerApproxFamily, t: float, M: int, rng: RngStream, d: int = 2,
                     chunk: int = 8192, workers: int | None = None):
    """Joint Monte Carlo of the skew matrix ``s(t, n)`` and ``c(t, n)`` on shared paths."""
    _check_mc_args(fam, t, M)
    parts = map_chunks(lambda r, m: _pathwise_s_c(fam, t, d, r, m), M, rng, chunk, workers)
    s = concat([p[0] for p in parts])
    c = concat([p[1] for p in parts])
    return _mc(s), _mc(c), _mc(c - s)


def estimate_s(fam: WienerApproxFamily, t: float, M: int, rng: RngStream, d: int = 2, **kw) -> CorrectionEstimate:
    """``(1/2t) E int_0^t (W^n_i dW^n_j - W^n_j dW^n_i)``."""
    return estimate_s_and_c(fam, t, M, rng, d, **kw)[0]


def estimate_c(fam: WienerApproxFamily, t: float, M: int, rng: RngStream, d: int = 2, **kw) -> CorrectionEstimate:
    """``(1/t) E int_0^t dW^n_i (W^n_j(t) - W^n_j(s))``."""
    return estimate_s_and_c(fam, t, M, rng, d, **kw)[1]


def moment_constant(fam: WienerApproxFamily, schedule: Sequence[int], M: int, rng: RngStream,
                    d: int = 1, nodes: int = 16) -> dict:
    """``n^3 E[(int_0^{1/n} |dW^n/ds| ds)^6]`` and ``n^3 E|W^n_0|^6`` per ``n``."""
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    out = {}
    for n in schedule:
        f = fam.with_n(n)
        W = sample_brownian(TimeGrid(2.0 / n, 2), d, rng.child(n), M)
        Wn = build_approximation(W, f)
        total = 0.0
        for k in range(Wn.pieces):
            a, b = Wn.breaks[k], Wn.breaks[k + 1]
            if a >= 1.0 / n - 1e-15:
                break
            b = min(b, 1.0 / n)
            u = 0.5 * (b - a) * (gx + 1.0)
            der = np.stack([Wn.derivative_on(k, ui) for ui in u], axis=-2)
            total = total + 0.5 * (b - a) * np.einsum("...q,q->...", np.linalg.norm(der, axis=-1), gw)
        w0 = np.linalg.norm(Wn([0.0])[..., 0, :], axis=-1)
        out[n] = {
            "derivative": float(n ** 3 * np.mean(total ** 6)),
            "initial": float(n ** 3 * np.mean(w0 ** 6)),
        }
    return out


def solve_driven_ode(b: Field, sigma: Field, Wn: SmoothPath, substeps: int, x0,
                     blowup: float = 1e8) -> SolvedPath:
    """Classical RK4 for ``x' = b(x) + sigma(x) dW^n/dt`` with ``substeps`` steps per piece."""
    if substeps < 1:
        raise ValueError("substeps must be positive")
    widths = np.diff(Wn.breaks)
    if not np.allclose(widths, widths[0], rtol=1e-9):
        raise ValueError("driven ODE output needs uniformly spaced kinks")
    batch = Wn.coeffs.shape[:-3]
    d = Wn.dim
    x = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), batch + (d,)).copy()
    grid = TimeGrid(Wn.horizon, Wn.pieces * substeps)
    states = np.empty(batch + (grid.steps + 1, d))
    states[..., 0, :] = x
    dead = np.zeros(batch, dtype=bool)
    col = 1
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(Wn.pieces):
            a = Wn.breaks[k]
            h = widths[k] / substeps

            def rhs(u, y):
                return b(a + u, y) + np.einsum("...ij,...j->...i", sigma(a + u, y), Wn.derivative_on(k, u))

            for j in range(substeps):
                u = j * h
                k1 = rhs(u, x)
                k2 = rhs(u + 0.5 * h, x + 0.5 * h * k1)
                k3 = rhs(u + 0.5 * h, x + 0.5 * h * k2)
                k4 = rhs(u + h, x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                bad = ~np.isfinite(x).all(axis=-1) | (np.linalg.norm(x, axis=-1) > blowup)
                if np.any(bad):
                    dead = dead | bad
                    x = np.where(dead[..., None], np.nan, x)
                states[..., col, :] = x
                col += 1
    return SolvedPath(grid, states, dead)


def wz_limit_problem(b: Field, sigma: Field, c, x0, **kw) -> SdeProblem:
    """Ito problem with drift ``b + c : sigma . grad sigma``."""
    return SdeProblem(b + wz_correction(sigma, c), sigma, x0, "ito", **kw)


def hfn_quantity(r_n: float, b_norm: float, sigma_norm: float, f_n: float, n: int, constant: float) -> float:
    """``exp(C r(n)^2 (||b||^2 + ||sigma||^2)) (f_n^2 + n^{-1/5})``."""
    return math.exp(constant * r_n ** 2 * (b_norm ** 2 + sigma_norm ** 2)) * (f_n ** 2 + n ** -0.2)


def _measured_fn(fam: WienerApproxFamily, n: int, d: int, M: int, rng: RngStream) -> float:
    """Statistically resolved ``max_ij |s^n_ij(1/n) - s_ij|`` (zero when within 3 se)."""
    est = estimate_s(fam.with_n(n), 1.0 / n, M, rng.for_purpose(f"fn-{n}"), d)
    dev = np.abs(est.matrix - fam.limit_s(d)) - 3.0 * est.stderr
    return float(max(0.0, dev.max()))


def two_step_experiment(
    b_family: MollificationFamily,
    sigma_family: MollificationFamily,
    approx: WienerApproxFamily,
    schedule: Sequence[int],
    M: int,
    rng: RngStream,
    x0,
    horizon: float = 1.0,
    ref_factor: int = 64,
    reference: Optional[Callable[[BrownianPath], np.ndarray]] = None,
    hfn_constant: float = 0.001,
    fn_samples: int = 2000,
    clamp_radius: Optional[float] = None,
    chunk: int = 512,
    workers: int | None = None,
) -> ConvergenceReport:
    """Mollify ``(b, sigma)`` at index ``n``, drive with ``W^n`` and compare to the limit SDE.

    The reference is Euler-Maruyama for the corrected limit problem built from
    the finest members, on a grid ``ref_factor`` times finer than the largest
    ``n`` and driven by the same Brownian path (Brownian-bridge refinement);
    ``reference(W_fine)`` replaces it with an exact solution when one exists.
    Errors are ``E sup |X - X^n|^2`` over the reference nodes.
    """
    schedule = [int(n) for n in schedule]
    if not schedule or any(n2 <= n1 for n1, n2 in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be nonempty and strictly increasing")
    d = b_family.base.dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    members_b = {n: mollify(b_family, n) for n in schedule}
    members_s = {n: mollify(sigma_family, n) for n in schedule}
    n_max = schedule[-1]
    c = approx.limit_c(d)
    coarse = TimeGrid(horizon, int(round(horizon * n_max)))
    fine = coarse.refined(ref_factor)
    ref_problem = wz_limit_problem(members_b[n_max].field, members_s[n_max].field, c, x0,
                                   clamp_radius=clamp_radius)

    def work(r: RngStream, m: int):
        W0 = sample_brownian(coarse, d, r.for_purpose("coarse"), m)
        W = refine(W0, ref_factor, r.for_purpose("bridge"))
        if reference is not None:
            X = reference(W)
            clamps = 0
        else:
            sol = euler_maruyama(ref_problem, W)
            X, clamps = sol.states, sol.clamp_events
        errs, finals = [], []
        for n in schedule:
            Wn = build_approximation(restrict(W, TimeGrid(horizon, int(round(horizon * n)))), approx.with_n(n))
            sub = fine.steps // Wn.pieces
            Xn = solve_driven_ode(members_b[n].field, members_s[n].field, Wn, sub, x0)
            diff = X - Xn.states
            errs.append(np.max(np.sum(diff * diff, axis=-1), axis=-1))
            finals.append(Xn.states[..., -1, :])
        return np.stack(errs, axis=-1), np.stack(finals, axis=-2), X[..., -1, :], clamps

    parts = map_chunks(work, M, rng, chunk, workers)
    err = concat([p[0] for p in parts])
    finals = concat([p[1] for p in parts])
    ref_final = concat([p[2] for p in parts])
    clamps = sum(p[3] for p in parts)

    b_norm = b_family.base_norm()
    s_norm = sigma_family.base_norm()
    report = ConvergenceReport("n", "error", anchor="two-step Wong-Zakai: mollified coefficients driven by W^n")
    prev_q = math.inf
    all_hfn = True
    for i, n in enumerate(schedule):
        if approx.kind == "piecewise-linear":
            f_n = 0.0
        elif approx.kind == "custom":
            f_n = max(float(approx.rate(n)), _measured_fn(approx, n, d, fn_samples, rng))
        else:
            f_n = _measured_fn(approx, n, d, fn_samples, rng)
        q = hfn_quantity(b_family.r(n), b_norm, s_norm, f_n, n, hfn_constant)
        ok = q < prev_q
        all_hfn = all_hfn and ok
        prev_q = q
        e = err[:, i]
        report.add(
            n=n,
            error=float(e.mean()),
            stderr=float(e.std(ddof=1) / math.sqrt(len(e))) if len(e) > 1 else 0.0,
            f_n=f_n,
            hfn_value=q,
            hfn_satisfied=ok,
            final_mean=float(finals[:, i].mean()),
            b_lp_error=members_b[n].lp_error,
            b_smooth_norm=members_b[n].smooth_norm,
            bound=members_b[n].bound,
        )
    env = [r["error"] / (r["f_n"] ** 2 + r["n"] ** -0.2) for r in report.rows]
    report.meta.update(
        paths=M,
        reference_final_mean=float(ref_final.mean(axis=0)[0]),
        reference_final_stderr=float(ref_final.std(axis=0, ddof=1)[0] / math.sqrt(M)) if M > 1 else 0.0,
        hfn_constant=hfn_constant,
        hfn_satisfied=all_hfn,
        envelope_constant=float(max(env)),
        clamp_events=int(clamps),
        reference="exact" if reference is not None else f"euler-maruyama x{ref_factor}",
    )
    return report
