"""Pathwise Euler-Maruyama solvers and exact-solution oracles.

All solvers are vectorised over a leading batch of paths: a
:class:`BrownianPath` with values of shape ``(M, steps+1, d)`` yields states of
shape ``(M, steps+1, d)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import Field, stratonovich_correction
from .noise import BrownianPath, TimeGrid

__all__ = [
    "SdeProblem",
    "SolvedPath",
    "euler_maruyama",
    "euler_maruyama_frozen",
    "solve_stratonovich",
    "exact_gbm",
    "ito_problem",
    "DEFAULT_BLOWUP",
]

DEFAULT_BLOWUP = 1e8


@dataclass(frozen=True)
class SdeProblem:
    """``dX = b(t, X) dt + sigma(t, X) dW`` (Ito) or ``... o dW`` (Stratonovich).

    ``clamp_radius`` is a hard state clamp ``|X| <= clamp_radius`` applied after
    every step (counted in the diagnostics); ``blowup`` marks paths whose norm
    exceeds it as failed.
    """

    drift: Field
    diffusion: Field
    x0: np.ndarray
    convention: str = "ito"
    clamp_radius: Optional[float] = None
    blowup: float = DEFAULT_BLOWUP

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "x0", x0)
        d = self.drift.dim
        if self.drift.kind != "vector":
            raise ValueError("drift must be a vector field")
        if self.diffusion.kind != "matrix":
            raise ValueError("diffusion must be a matrix field")
        if self.diffusion.dim != d or x0.shape[-1] != d:
            raise ValueError("drift, diffusion and x0 dimensions disagree")
        if self.convention not in ("ito", "stratonovich"):
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.convention == "stratonovich" and not self.diffusion.has_gradient:
            raise ValueError("Stratonovich problems need the diffusion gradient")

    @property
    def dim(self) -> int:
        return self.drift.dim


def ito_problem(drift: Field, diffusion: Field, x0, **kw) -> SdeProblem:
    return SdeProblem(drift, diffusion, x0, "ito", **kw)


@dataclass(frozen=True)
class SolvedPath:
    grid: TimeGrid
    states: np.ndarray = field(repr=False)
    blowup: np.ndarray = field(repr=False)
    clamp_events: int = 0

    @property
    def max_abs(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanmax(np.linalg.norm(self.states, axis=-1), axis=-1)

    @property
    def any_blowup(self) -> bool:
        return bool(np.any(self.blowup))

    def at(self, index) -> "SolvedPath":
        return SolvedPath(self.grid, self.states[index], np.asarray(self.blowup)[index], self.clamp_events)

    def to_csv(self, target) -> None:
        if self.states.ndim != 2:
            raise ValueError("CSV export is for a single path; select one with .at()")
        d = self.states.shape[-1]
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"X_{i + 1}" for i in range(d)])
            for t, row in zip(self.grid.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def summary(self) -> dict:
        return {
            "steps": self.grid.steps,
            "horizon": self.grid.horizon,
            "paths": int(np.prod(self.states.shape[:-2], dtype=int)),
            "blowups": int(np.sum(self.blowup)),
            "clamp_events": int(self.clamp_events),
            "max_abs": float(np.nanmax(self.max_abs)),
        }


def _initial(prob: SdeProblem, batch: tuple) -> np.ndarray:
    return np.broadcast_to(prob.x0, batch + (prob.dim,)).astype(float).copy()


def _march(prob: SdeProblem, W: BrownianPath, drift: Field, freeze_every: int = 1) -> SolvedPath:
    """Explicit Euler with coefficients read at the last freezing node."""
    if W.dim != prob.dim:
        raise ValueError(f"Brownian path has dimension {W.dim}, problem has {prob.dim}")
    grid = W.grid
    dt = grid.dt
    dW = W.increments
    batch = W.batch_shape
    x = _initial(prob, batch)
    states = np.empty(batch + (grid.steps + 1, prob.dim))
    states[..., 0, :] = x
    dead = np.zeros(batch, dtype=bool)
    clamps = 0
    frozen = x
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(grid.steps):
            t = k * dt
            if k % freeze_every == 0:
                frozen = x
            b = drift(t, frozen)
            s = prob.diffusion(t, frozen)
            x = x + b * dt + np.einsum("...ij,...j->...i", s, dW[..., k, :])
            if prob.clamp_radius is not None:
                r = np.linalg.norm(x, axis=-1)
                over = r > prob.clamp_radius
                if np.any(over):
                    clamps += int(np.count_nonzero(over & ~dead))
                    x = np.where(over[..., None], x * (prob.clamp_radius / np.maximum(r, 1e-300))[..., None], x)
            bad = ~np.isfinite(x).all(axis=-1) | (np.linalg.norm(x, axis=-1) > prob.blowup)
            if np.any(bad):
                dead = dead | bad
                x = np.where(dead[..., None], np.nan, x)
            states[..., k + 1, :] = x
    return SolvedPath(grid, states, dead, clamps)


def euler_maruyama(prob: SdeProblem, W: BrownianPath) -> SolvedPath:
    """``X_{k+1} = X_k + b(t_k, X_k) dt + sigma(t_k, X_k) dW_k``."""
    if prob.convention != "ito":
        raise ValueError("euler_maruyama takes Ito problems; use solve_stratonovich")
    return _march(prob, W, prob.drift)


def euler_maruyama_frozen(prob: SdeProblem, W: BrownianPath, freeze_n: int) -> SolvedPath:
    """Euler steps on the grid of ``W`` with coefficients frozen at ``floor(t n)/n``."""
    if prob.convention != "ito":
        raise ValueError("frozen scheme takes Ito problems")
    if freeze_n < 1:
        raise ValueError("freeze_n must be positive")
    ratio = W.grid.steps / (freeze_n * W.grid.horizon)
    every = int(round(ratio))
    if every < 1 or not math.isclose(ratio, every, rel_tol=1e-9):
        raise ValueError(
            f"solve grid with dt={W.grid.dt:g} does not refine the freezing mesh 1/{freeze_n}"
        )
    return _march(prob, W, prob.drift, freeze_every=every)


def solve_stratonovich(prob: SdeProblem, W: BrownianPath) -> SolvedPath:
    """Convert to Ito by adding ``1/2 (sigma . grad) sigma`` and run Euler-Maruyama."""
    if prob.convention != "stratonovich":
        raise ValueError("problem is not tagged Stratonovich")
    drift = prob.drift + stratonovich_correction(prob.diffusion)
    return _march(prob, W, drift)


def exact_gbm(mu: float, theta: float, x0: float, W: BrownianPath) -> SolvedPath:
    """``x0 exp((mu - theta^2/2) t + theta W_t)`` on the nodes of ``W`` (d = 1)."""
    if W.dim != 1:
        raise ValueError("exact GBM oracle is one-dimensional")
    t = W.grid.times[:, None]
    states = x0 * np.exp((mu - 0.5 * theta * theta) * t + theta * W.values)
    return SolvedPath(W.grid, states, np.zeros(W.batch_shape, dtype=bool))
