"""Distribution-dependent SDEs: Picard iteration on empirical laws and particle systems."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .coefficients import Field, GridField, bessel_norm, ellipticity_margin, mixed_norm
from .noise import BrownianPath, RngStream, TimeGrid, sample_brownian
from .reports import ConvergenceReport, fit_rate

__all__ = [
    "EmpiricalMeasure",
    "MkvProblem",
    "IterateDistance",
    "FixedPointResult",
    "NonContractionError",
    "wasserstein",
    "wasserstein_brute_force",
    "convolve_measure",
    "convolution_ratio",
    "ou_variance",
    "iterate_distance",
    "fixed_point_solve",
    "particle_system_solve",
    "default_lambda",
    "chaos_report",
    "EXACT_ASSIGNMENT_MAX",
]

EXACT_ASSIGNMENT_MAX = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform mixture of ``N`` Dirac masses.

    Point carrier: ``atoms`` has shape ``(N, d)``.  Path carrier: ``atoms`` has
    shape ``(N, steps+1, d)`` on ``grid``; ``stop`` (a node index) turns it into
    the law of the stopped paths ``X_{. and t}``.
    """

    atoms: np.ndarray = field(repr=False)
    grid: Optional[TimeGrid] = None
    stop: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one atom")
        if self.grid is not None and (a.ndim != 3 or a.shape[1] != self.grid.steps + 1):
            raise ValueError("path atoms must have shape (N, steps+1, d)")
        if self.grid is None and a.ndim != 2:
            raise ValueError("point atoms must have shape (N, d)")
        object.__setattr__(self, "atoms", a)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[-1]

    @property
    def is_path(self) -> bool:
        return self.grid is not None

    @property
    def points(self) -> np.ndarray:
        """Current positions (the stop node for path measures)."""
        if not self.is_path:
            return self.atoms
        return self.atoms[:, self.grid.steps if self.stop is None else self.stop, :]

    @property
    def paths(self) -> np.ndarray:
        if not self.is_path:
            raise ValueError("point measure has no paths")
        if self.stop is None:
            return self.atoms
        out = self.atoms.copy()
        out[:, self.stop + 1:, :] = out[:, self.stop: self.stop + 1, :]
        return out

    def marginal(self, k: int) -> "EmpiricalMeasure":
        if not self.is_path:
            raise ValueError("point measure has no time marginals")
        return EmpiricalMeasure(self.atoms[:, k, :])

    def marginal_at(self, t: float) -> "EmpiricalMeasure":
        k = int(round(t / self.grid.dt))
        if not math.isclose(k * self.grid.dt, t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t={t} is not a grid node")
        return self.marginal(k)

    def stopped(self, k: int) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms, self.grid, k)

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def permuted(self, order) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms[np.asarray(order)], self.grid, self.stop)

    def to_csv(self, target) -> None:
        """Rows ``particle, t, x_1..x_d`` (path carrier) or ``particle, x_1..x_d``."""
        d = self.dim
        with open(target, "w") as fh:
            if self.is_path:
                fh.write("particle,t," + ",".join(f"x_{i + 1}" for i in range(d)) + "\n")
                times = self.grid.times
                for i, path in enumerate(self.paths):
                    for t, row in zip(times, path):
                        fh.write(f"{i},{float(t)!r}," + ",".join(repr(float(v)) for v in row) + "\n")
            else:
                fh.write("particle," + ",".join(f"x_{i + 1}" for i in range(d)) + "\n")
                for i, row in enumerate(self.atoms):
                    fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------


def _ground_cost(a: EmpiricalMeasure, b: EmpiricalMeasure) -> np.ndarray:
    if a.is_path != b.is_path:
        raise ValueError("cannot compare point and path measures")
    if a.is_path:
        diff = a.paths[:, None, :, :] - b.paths[None, :, :, :]
        return np.max(np.linalg.norm(diff, axis=-1), axis=-1)
    diff = a.points[:, None, :] - b.points[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def _quantile_1d(x: np.ndarray, y: np.ndarray, m: float) -> float:
    """Exact ``W_m`` between uniform empirical laws on the line (any sizes)."""
    xs, ys = np.sort(x), np.sort(y)
    nx, ny = len(xs), len(ys)
    if nx == ny:
        return float(np.mean(np.abs(xs - ys) ** m) ** (1.0 / m))
    cuts = np.union1d(np.arange(1, nx + 1) / nx, np.arange(1, ny + 1) / ny)
    lo = np.concatenate([[0.0], cuts[:-1]])
    mid = 0.5 * (lo + cuts)
    qx = xs[np.minimum((mid * nx).astype(int), nx - 1)]
    qy = ys[np.minimum((mid * ny).astype(int), ny - 1)]
    return float(np.sum(np.abs(qx - qy) ** m * (cuts - lo)) ** (1.0 / m))


def wasserstein(a: EmpiricalMeasure, b: EmpiricalMeasure, m: float = 1.0, method: str = "exact-1d",
                projections: int = 64, rng: Optional[RngStream] = None) -> float:
    """``W_m`` between two empirical measures.

    ``exact-1d``: quantile pairing (points in d = 1, any sizes).
    ``exact-assignment``: optimal permutation (equal sizes, N <= 64), ground
    distance Euclidean for points and grid sup-norm for paths.
    ``sliced``: mean of exact 1-d distances over random projections
    (an approximation, not a metric on the original space).
    """
    if m < 1:
        raise ValueError("order m must be >= 1")
    if a.dim != b.dim:
        raise ValueError("measures live in different dimensions")
    if method == "exact-1d":
        if a.is_path or b.is_path or a.dim != 1:
            raise ValueError("exact-1d needs point measures on the line")
        return _quantile_1d(a.points[:, 0], b.points[:, 0], m)
    if method == "exact-assignment":
        if a.size != b.size:
            raise ValueError("exact assignment needs equal particle counts")
        if a.size > EXACT_ASSIGNMENT_MAX:
            raise ValueError(f"exact assignment is limited to N <= {EXACT_ASSIGNMENT_MAX}; use sliced")
        cost = _ground_cost(a, b) ** m
        rows, cols = linear_sum_assignment(cost)
        return float(np.mean(cost[rows, cols]) ** (1.0 / m))
    if method == "sliced":
        xa = a.paths.reshape(a.size, -1) if a.is_path else a.points
        xb = b.paths.reshape(b.size, -1) if b.is_path else b.points
        gen = (rng or RngStream(0, "sliced")).generator()
        dirs = gen.standard_normal((projections, xa.shape[1]))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return float(np.mean([_quantile_1d(xa @ u, xb @ u, m) for u in dirs]))
    raise ValueError(f"unknown method {method!r}")


def wasserstein_brute_force(a: EmpiricalMeasure, b: EmpiricalMeasure, m: float = 1.0) -> float:
    """Minimum over all ``N!`` permutations (reference oracle for tiny N)."""
    if a.size != b.size or a.size > 9:
        raise ValueError("brute force needs equal sizes N <= 9")
    cost = _ground_cost(a, b) ** m
    idx = np.arange(a.size)
    best = min(cost[idx, list(p)].sum() for p in itertools.permutations(range(a.size)))
    return float((best / a.size) ** (1.0 / m))


def convolve_measure(f: Field, mu: EmpiricalMeasure) -> Field:
    """``x -> (1/N) sum_i f(t, x - X_i)``."""
    if mu.is_path and mu.stop is None:
        raise ValueError("convolution needs a point measure (or a time marginal)")
    pts = mu.points

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        return np.mean(f(t, x[..., None, :] - pts), axis=x.ndim - 1)

    grad = None
    if f.has_gradient:
        grad = lambda t, x: np.mean(f.gradient(t, np.asarray(x)[..., None, :] - pts), axis=np.ndim(x) - 1)
    return Field(f.kind, f.dim, fn, grad, f.exponents, name=f"{f.name}*mu", autonomous=f.autonomous)


def convolution_ratio(f: Field, mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0,
                      half_width: float = math.pi, resolution: int = 1024) -> float:
    """``||f * (mu - nu)||_{W^{-1,p}} / (||f||_{L^p} W_1(mu, nu))`` on the periodised box (d = 1).

    Atoms are wrapped into the box and ``f`` is periodised by summing its
    translates, so the box must contain essentially all of its mass.
    """
    if f.dim != 1 or mu.dim != 1:
        raise ValueError("convolution ratio is implemented for d = 1")
    L = 2 * half_width
    shifts = np.array([-L, 0.0, L])

    def periodic(g: Field) -> Field:
        return Field(g.kind, 1, lambda t, x: sum(g(t, x + s) for s in shifts), name=g.name)

    diff = Field(f.kind, 1, lambda t, x: convolve_measure(periodic(f), mu)(t, x) - convolve_measure(periodic(f), nu)(t, x))
    num = bessel_norm(GridField.from_field(diff, half_width, resolution), -1.0, p)
    den = mixed_norm(GridField.from_field(periodic(f), half_width, resolution), p)
    w = wasserstein(mu, nu, 1.0, "exact-1d")
    if w == 0 or den == 0:
        return 0.0 if num == 0 else math.inf
    return num / (den * w)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

Coefficient = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]


@dataclass(frozen=True)
class MkvProblem:
    """``dX = B(t, X, mu_t) dt + Sigma(t, X, mu_t) dW`` with ``mu_t`` the law of ``X``.

    ``carrier`` selects what ``mu_t`` is: ``"marginal"`` (law of ``X_t``) or
    ``"path"`` (law of the stopped path).  ``initial(rng, N)`` samples the
    initial law.
    """

    drift: Coefficient
    diffusion: Coefficient
    initial: Callable[[RngStream, int], np.ndarray]
    dim: int
    carrier: str = "marginal"
    order: float = 1.0
    measure_free: bool = False

    def __post_init__(self):
        if self.carrier not in ("marginal", "path"):
            raise ValueError("carrier must be 'marginal' or 'path'")

    @classmethod
    def measure_free_problem(cls, b: Field, sigma: Field, initial, **kw) -> "MkvProblem":
        return cls(lambda t, x, mu: b(t, x), lambda t, x, mu: sigma(t, x), initial, b.dim,
                   measure_free=True, **kw)

    @classmethod
    def convolutional(cls, b: Field, sigma: Field, initial, pi: Optional[Field] = None,
                      delta: float = 0.1, probes=None, **kw) -> "MkvProblem":
        """``B = (b * mu)(x)`` and ``Sigma = sigma(x) - (pi * mu)(x)``.

        ``pi`` must satisfy ``sup |pi| <= (1 - delta) K^{-1/2}`` where ``K`` is the
        ellipticity constant of ``sigma`` measured on ``probes``.
        """
        d = b.dim
        if pi is not None:
            if probes is None:
                probes = np.linspace(-5, 5, 41)[:, None] * np.ones(d)
            ell = ellipticity_margin(sigma, probes)
            if ell.degenerate:
                raise ValueError("sigma is degenerate on the probes")
            K = max(ell.high, 1.0 / ell.low)
            pi_sup = float(np.max(np.linalg.norm(np.asarray(pi(0.0, probes)), ord=2, axis=(-2, -1))))
            limit = (1.0 - delta) * K ** -0.5
            if pi_sup > limit * (1 + 1e-12):
                raise ValueError(f"sup|pi| = {pi_sup:.4g} exceeds (1-delta) K^(-1/2) = {limit:.4g}")

        def drift(t, x, mu):
            return np.mean(b(t, x[:, None, :] - mu.points[None, :, :]), axis=1)

        def diffusion(t, x, mu):
            s = sigma(t, x)
            if pi is None:
                return s
            return s - np.mean(pi(t, x[:, None, :] - mu.points[None, :, :]), axis=1)

        return cls(drift, diffusion, initial, d, **kw)

    @classmethod
    def statistic(cls, b: Field, sigma: Field, initial, phi: Optional[Callable] = None, **kw) -> "MkvProblem":
        """``B = b(x - <phi, mu>)``; ``phi`` maps atoms to R^d (identity by default)."""
        phi = phi or (lambda atoms: atoms)

        def drift(t, x, mu):
            atoms = mu.paths if (mu.is_path and kw.get("carrier") == "path") else mu.points
            return b(t, x - np.mean(phi(atoms), axis=0))

        return cls(drift, lambda t, x, mu: sigma(t, x), initial, b.dim, **kw)

    @classmethod
    def mean_field_ou(cls, initial_mean: float = 0.0, initial_std: float = 1.0, **kw) -> "MkvProblem":
        """``dX = -(X - E X) dt + dW`` in d = 1 with Gaussian initial law."""
        b = Field("vector", 1, lambda t, x: -x, lambda t, x: -np.ones(x.shape + (1,)), name="-x")
        sigma = Field.identity_matrix(1)

        def initial(rng, n):
            return initial_mean + initial_std * rng.normal((n, 1))

        return cls.statistic(b, sigma, initial, **kw)


def ou_variance(t, v0: float) -> np.ndarray:
    """Solution of ``v' = -2 v + 1``, ``v(0) = v0``."""
    t = np.asarray(t, dtype=float)
    return v0 * np.exp(-2 * t) + 0.5 * (1 - np.exp(-2 * t))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IterateDistance:
    lam: float
    value: float


@dataclass
class FixedPointResult:
    bundle: EmpiricalMeasure
    history: list[float]
    lam: float
    iterations: int
    converged: bool


class NonContractionError(RuntimeError):
    def __init__(self, history):
        super().__init__(f"iterate distances increased three times in a row: {history}")
        self.history = list(history)


def iterate_distance(Y: np.ndarray, Z: np.ndarray, grid: TimeGrid, lam: float, m: float = 1.0) -> IterateDistance:
    """``sup_t e^{-lam t} (mean_i sup_{s<=t} |Y_i(s) - Z_i(s)|^m)^{1/m}`` over grid nodes."""
    gap = np.linalg.norm(np.asarray(Y) - np.asarray(Z), axis=-1)
    running = np.maximum.accumulate(gap, axis=-1)
    moment = np.mean(running ** m, axis=0) ** (1.0 / m)
    return IterateDistance(lam, float(np.max(np.exp(-lam * grid.times) * moment)))


def _measure_at(prob: MkvProblem, states: np.ndarray, grid: TimeGrid, k: int) -> EmpiricalMeasure:
    if prob.carrier == "path":
        return EmpiricalMeasure(states, grid, k)
    return EmpiricalMeasure(states[:, k, :])


def _inputs(prob: MkvProblem, N: int, grid: TimeGrid, rng: RngStream, initial=None, noise=None):
    x0 = prob.initial(rng.for_purpose("initial"), N) if initial is None else np.asarray(initial, float)
    x0 = np.asarray(x0, dtype=float).reshape(N, prob.dim)
    W = sample_brownian(grid, prob.dim, rng.for_purpose("noise"), N) if noise is None else noise
    return x0, W


def _solve_frozen_law(prob: MkvProblem, x0: np.ndarray, W: BrownianPath, law_states: Optional[np.ndarray]) -> np.ndarray:
    """Euler pass; ``law_states=None`` uses the current particles (interacting system)."""
    grid = W.grid
    dt = grid.dt
    dW = W.increments
    N = x0.shape[0]
    states = np.empty((N, grid.steps + 1, prob.dim))
    states[:, 0, :] = x0
    x = x0
    for k in range(grid.steps):
        t = k * dt
        src = states if law_states is None else law_states
        mu = _measure_at(prob, src, grid, k)
        b = prob.drift(t, x, mu)
        s = prob.diffusion(t, x, mu)
        x = x + b * dt + np.einsum("nij,nj->ni", s, dW[:, k, :])
        states[:, k + 1, :] = x
    return states


def fixed_point_solve(prob: MkvProblem, N: int, grid: TimeGrid, lam: float, tol: float, max_iter: int,
                      rng: RngStream, m: Optional[float] = None, initial=None, noise=None) -> FixedPointResult:
    """Picard iteration ``Y -> I(Y)`` with the law of ``Y`` frozen in the coefficients.

    The initial particles and the N Brownian paths are drawn once and reused by
    every iteration, so ``d_E`` measures the map, not Monte Carlo noise.
    """
    if N < 2:
        raise ValueError("need at least two particles")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    m = prob.order if m is None else m
    x0, W = _inputs(prob, N, grid, rng, initial, noise)
    Y = np.repeat(x0[:, None, :], grid.steps + 1, axis=1)
    history: list[float] = []
    rises = 0
    for it in range(1, max_iter + 1):
        Z = _solve_frozen_law(prob, x0, W, Y)
        dist = iterate_distance(Z, Y, grid, lam, m).value
        if history and dist > history[-1]:
            rises += 1
            if rises >= 3:
                raise NonContractionError(history + [dist])
        else:
            rises = 0
        history.append(dist)
        Y = Z
        if dist < tol:
            return FixedPointResult(EmpiricalMeasure(Y, grid), history, lam, it, True)
    return FixedPointResult(EmpiricalMeasure(Y, grid), history, lam, max_iter, False)


def default_lambda(prob: MkvProblem, N: int, grid: TimeGrid, rng: RngStream, q: float = 2.0,
                   floor: float = 0.5) -> float:
    """``q log(2 C)`` from a pilot contraction ratio ``C`` measured at ``lambda = 0``."""
    x0, W = _inputs(prob, N, grid, rng.for_purpose("pilot"))
    Y0 = np.repeat(x0[:, None, :], grid.steps + 1, axis=1)
    Y1 = _solve_frozen_law(prob, x0, W, Y0)
    Y2 = _solve_frozen_law(prob, x0, W, Y1)
    d1 = iterate_distance(Y1, Y0, grid, 0.0, prob.order).value
    d2 = iterate_distance(Y2, Y1, grid, 0.0, prob.order).value
    if d1 == 0:
        return floor
    return max(floor, q * math.log(2.0 * d2 / d1)) if d2 > 0 else floor


def particle_system_solve(prob: MkvProblem, N: int, grid: TimeGrid, rng: RngStream,
                          initial=None, noise=None) -> EmpiricalMeasure:
    """Euler scheme for the N-particle system, ``mu^N_t`` recomputed every step."""
    if N < 2:
        raise ValueError("need at least two particles")
    x0, W = _inputs(prob, N, grid, rng, initial, noise)
    states = _solve_frozen_law(prob, x0, W, None)
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("particle system blew up")
    return EmpiricalMeasure(states, grid)


def _w1(a: EmpiricalMeasure, b: EmpiricalMeasure) -> tuple[float, str]:
    if a.dim == 1:
        return wasserstein(a, b, 1.0, "exact-1d"), "exact-1d"
    if a.size == b.size and a.size <= EXACT_ASSIGNMENT_MAX:
        return wasserstein(a, b, 1.0, "exact-assignment"), "exact-assignment"
    return wasserstein(a, b, 1.0, "sliced"), "sliced"


def chaos_report(systems: Mapping[int, Sequence[EmpiricalMeasure] | EmpiricalMeasure],
                 reference: EmpiricalMeasure, times: Sequence[float]) -> ConvergenceReport:
    """``W_1`` between time marginals of each N-particle system and the reference.

    Several replicas per ``N`` are averaged.  The fit is over the rows at the
    last requested time.
    """
    report = ConvergenceReport("N", "w1", anchor="propagation of chaos: particle marginals vs McKean-Vlasov reference")
    last = times[-1]
    for N in sorted(systems):
        reps = systems[N]
        reps = [reps] if isinstance(reps, EmpiricalMeasure) else list(reps)
        for t in times:
            ref_t = reference.marginal_at(t)
            vals, methods = zip(*(_w1(r.marginal_at(t), ref_t) for r in reps))
            v = np.asarray(vals)
            report.add(N=N, t=float(t), w1=float(v.mean()),
                       stderr=float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0,
                       replicas=len(v), method=methods[0], approximate=methods[0] == "sliced")
    final = [r for r in report.rows if r["t"] == last]
    report.meta["final_time"] = float(last)
    if len(final) >= 3:
        fit = fit_rate([r["N"] for r in final], [r["w1"] for r in final])
        report.meta["final_fit"] = fit._asdict()
    return report
