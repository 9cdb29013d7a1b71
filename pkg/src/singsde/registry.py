"""Named closed-form coefficient fields for scenario configs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import Field

__all__ = ["FieldEntry", "FIELDS", "build_field", "field_names"]


@dataclass(frozen=True)
class FieldEntry:
    builder: Callable[..., Field]
    description: str
    params: dict


def _zero(kind="vector", dim=1):
    return Field.zero(kind, int(dim))


def _identity(dim=1, scale=1.0):
    return Field.constant(float(scale) * np.eye(int(dim)), int(dim), name="identity")


def _constant(value=0.0, kind="scalar", dim=1):
    d = int(dim)
    v = {"scalar": np.asarray(float(value)), "vector": np.full(d, float(value)),
         "matrix": float(value) * np.eye(d)}[kind]
    return Field.constant(v, d, name=f"const({value:g})")


def _linear_drift(mu=0.0):
    mu = float(mu)
    return Field("vector", 1, lambda t, x: mu * x, lambda t, x: np.full(x.shape + (1,), mu), name=f"{mu:g}x")


def _linear_diffusion(theta=1.0):
    th = float(theta)
    return Field("matrix", 1, lambda t, x: th * x[..., None],
                 lambda t, x: np.full(x.shape[:-1] + (1, 1, 1), th), name=f"{th:g}x")


def _sine(k=1.0, amplitude=1.0):
    k, a = float(k), float(amplitude)
    return Field("vector", 1, lambda t, x: a * np.sin(k * x),
                 lambda t, x: (a * k * np.cos(k * x))[..., None], name=f"{a:g}sin({k:g}x)")


def _cosine(k=1.0, amplitude=1.0):
    k, a = float(k), float(amplitude)
    return Field("vector", 1, lambda t, x: a * np.cos(k * x),
                 lambda t, x: (-a * k * np.sin(k * x))[..., None], name=f"{a:g}cos({k:g}x)")


def _truncated_power(a=0.25, radius=1.0):
    """``sign(x) |x|^{-a}`` on ``|x| <= radius``, zero outside (d = 1)."""
    a, R = float(a), float(radius)

    def fn(t, x):
        ax = np.abs(x)
        return np.where(ax <= R, np.sign(x) * np.maximum(ax, 1e-300) ** (-a), 0.0)

    return Field("vector", 1, fn, name=f"trunc|x|^-{a:g}", exponents=(1.0 / a,))


def _gaussian_bump(height=1.0, width=1.0, dim=1):
    h, w = float(height), float(width)
    return Field("scalar", int(dim), lambda t, x: h * np.exp(-np.sum(x * x, axis=-1) / (w * w)),
                 lambda t, x: (-2.0 * h / (w * w)) * np.exp(-np.sum(x * x, axis=-1) / (w * w))[..., None] * x,
                 name="gaussian")


def _hat_derivative(radius=1.0):
    """Derivative of the hat ``max(0, 1 - |x|/R)``: ``-sign(x)/R`` on ``|x| < R``."""
    R = float(radius)
    return Field("scalar", 1, lambda t, x: np.where(np.abs(x[..., 0]) < R, -np.sign(x[..., 0]) / R, 0.0),
                 name="hat'")


FIELDS: dict[str, FieldEntry] = {
    "zero": FieldEntry(_zero, "identically zero field", {"kind": "vector", "dim": 1}),
    "identity": FieldEntry(_identity, "constant multiple of the identity matrix", {"dim": 1, "scale": 1.0}),
    "constant": FieldEntry(_constant, "constant scalar, vector or scaled identity", {"value": 0.0, "kind": "scalar", "dim": 1}),
    "linear-drift": FieldEntry(_linear_drift, "b(x) = mu x in d = 1", {"mu": 0.0}),
    "linear-diffusion": FieldEntry(_linear_diffusion, "sigma(x) = theta x in d = 1", {"theta": 1.0}),
    "sine": FieldEntry(_sine, "amplitude * sin(k x) in d = 1", {"k": 1.0, "amplitude": 1.0}),
    "cosine": FieldEntry(_cosine, "amplitude * cos(k x) in d = 1", {"k": 1.0, "amplitude": 1.0}),
    "truncated-power": FieldEntry(_truncated_power, "sign(x)|x|^-a on |x| <= radius", {"a": 0.25, "radius": 1.0}),
    "gaussian-bump": FieldEntry(_gaussian_bump, "scalar height * exp(-|x|^2 / width^2)", {"height": 1.0, "width": 1.0, "dim": 1}),
    "hat-derivative": FieldEntry(_hat_derivative, "scalar derivative of a compact hat function", {"radius": 1.0}),
}


def field_names() -> list[str]:
    return sorted(FIELDS)


def build_field(spec) -> Field:
    """Build from ``"name"`` or ``{"name": ..., **params}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name not in FIELDS:
        raise KeyError(f"unknown field {name!r}; known: {', '.join(field_names())}")
    entry = FIELDS[name]
    unknown = set(spec) - set(entry.params)
    if unknown:
        raise KeyError(f"field {name!r} has no parameter(s) {sorted(unknown)}")
    return entry.builder(**{**entry.params, **spec})
