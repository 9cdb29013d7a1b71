"""Reproducible Brownian paths on uniform grids.

Random numbers come from counter-based Philox generators keyed by
``(master_seed, scenario, index, purpose)``.  A stream never depends on how
many other streams were drawn before it, so path batches can be generated in
any order, on any number of workers, with bit-identical output.

Gaussian variates are produced by numpy's ``Generator.standard_normal``
(ziggurat) on top of the Philox bit stream; that pairing is fixed and is what
replay tools must use.
"""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TimeGrid",
    "RngStream",
    "BrownianPath",
    "sample_brownian",
    "refine",
    "restrict",
    "read_path_csv",
]


def _tag(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_steps = horizon``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)

    def coarsened(self, factor: int) -> "TimeGrid":
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps cannot be coarsened by {factor}")
        return TimeGrid(self.horizon, self.steps // factor)

    def ratio_to(self, coarse: "TimeGrid") -> int:
        """Integer refinement factor of ``self`` over ``coarse`` (ValueError if none)."""
        if not math.isclose(self.horizon, coarse.horizon, rel_tol=1e-12):
            raise ValueError("grids have different horizons")
        if self.steps % coarse.steps:
            raise ValueError(f"grid with {self.steps} steps does not refine {coarse.steps} steps")
        return self.steps // coarse.steps


@dataclass(frozen=True)
class RngStream:
    """Stateless key for an independent random stream.

    Two streams with equal keys yield identical numbers; streams with distinct
    keys are independent (distinct Philox keys derived through SeedSequence).
    """

    master_seed: int
    scenario: str = "default"
    index: int = 0
    purpose: str = "noise"

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.index < 0:
            raise ValueError("stream index must be nonnegative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            int(self.master_seed),
            spawn_key=(_tag(self.scenario), int(self.index), _tag(self.purpose)),
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RngStream":
        """Stream for work unit ``index`` under the same scenario and purpose."""
        return RngStream(self.master_seed, self.scenario, index, self.purpose)

    def for_purpose(self, purpose: str) -> "RngStream":
        return RngStream(self.master_seed, self.scenario, self.index, purpose)

    def normal(self, shape) -> np.ndarray:
        return self.generator().standard_normal(shape)


@dataclass(frozen=True)
class BrownianPath:
    """Wiener trajectory sampled on a uniform grid.

    ``values`` has shape ``(..., steps + 1, d)``; leading axes index independent
    paths of a batch.  ``values[..., 0, :]`` is zero.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2 or v.shape[-2] != self.grid.steps + 1:
            raise ValueError(
                f"values must have shape (..., {self.grid.steps + 1}, d), got {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[:-2]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def at(self, index) -> "BrownianPath":
        """Select path(s) of a batch along the leading axis."""
        return BrownianPath(self.grid, self.values[index])

    def to_csv(self, target) -> None:
        """Write ``t, W_1..W_d`` rows for a single (unbatched) path."""
        if self.batch_shape:
            raise ValueError("CSV export is for a single path; select one with .at()")
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"W_{i + 1}" for i in range(self.dim)])
            for t, row in zip(self.grid.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def read_path_csv(source) -> BrownianPath:
    data = np.loadtxt(Path(source), delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    grid = TimeGrid(float(t[-1]), len(t) - 1)
    return BrownianPath(grid, data[:, 1:])


def sample_brownian(grid: TimeGrid, d: int, rng: RngStream, n_paths: int | None = None) -> BrownianPath:
    """Draw one path (``n_paths=None``) or a batch of ``n_paths`` paths."""
    if d < 1:
        raise ValueError("dimension must be positive")
    shape = (grid.steps, d) if n_paths is None else (n_paths, grid.steps, d)
    dw = math.sqrt(grid.dt) * rng.normal(shape)
    values = np.concatenate([np.zeros(shape[:-2] + (1, d)), np.cumsum(dw, axis=-2)], axis=-2)
    return BrownianPath(grid, values)


def refine(path: BrownianPath, factor: int, rng: RngStream) -> BrownianPath:
    """Insert ``factor - 1`` Brownian-bridge points inside every coarse cell.

    Coarse nodes are kept exactly; the new interior points are sampled
    sequentially from the bridge law conditioned on the previous fine point
    and the right coarse node.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"refinement factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return path
    v = path.values
    left, right = v[..., :-1, :], v[..., 1:, :]
    h = path.grid.dt / factor
    z = rng.normal(v.shape[:-2] + (factor - 1,) + left.shape[-2:])
    fine = np.empty(v.shape[:-2] + (path.grid.steps, factor, path.dim))
    fine[..., 0, :] = left
    cur = left
    for j in range(1, factor):
        remaining = factor - j + 1
        mean = cur + (right - cur) / remaining
        std = math.sqrt(h * (remaining - 1) / remaining)
        cur = mean + std * z[..., j - 1, :, :]
        fine[..., j, :] = cur
    flat = fine.reshape(v.shape[:-2] + (path.grid.steps * factor, path.dim))
    values = np.concatenate([flat, v[..., -1:, :]], axis=-2)
    # coarse nodes are copied, never recomputed
    values[..., ::factor, :] = v
    return BrownianPath(path.grid.refined(factor), values)


def restrict(path: BrownianPath, coarse: TimeGrid) -> BrownianPath:
    """View of ``path`` at the nodes of a coarser grid."""
    k = path.grid.ratio_to(coarse)
    return BrownianPath(coarse, path.values[..., ::k, :])
