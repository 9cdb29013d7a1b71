"""Coefficient fields, function-space norms and mollification families.

A :class:`Field` is a vectorised evaluator ``(t, x) -> value`` where ``x`` has
shape ``(..., d)`` and the value has shape ``(...,)``, ``(..., d)`` or
``(..., d, d)`` depending on the field kind.  The optional gradient returns the
spatial derivative as an extra trailing axis, i.e. ``grad[..., j, k, l] =
d/dx_l sigma_jk``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

__all__ = [
    "Field",
    "GridField",
    "ExponentPair",
    "MollificationFamily",
    "MollifiedMember",
    "CertificationError",
    "Ellipticity",
    "mixed_norm",
    "bessel_norm",
    "mollify",
    "directional_product",
    "stratonovich_correction",
    "wz_correction",
    "ellipticity_margin",
    "bump",
]

KINDS = ("scalar", "vector", "matrix")


class CertificationError(RuntimeError):
    """A mollified member violates its declared C^1 / C^2 growth bound."""


def _value_shape(kind: str, d: int) -> tuple:
    return {"scalar": (), "vector": (d,), "matrix": (d, d)}[kind]


@dataclass(frozen=True)
class Field:
    kind: str
    dim: int
    fn: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    grad: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, repr=False)
    exponents: Optional[tuple] = None
    name: str = ""
    autonomous: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    @property
    def value_shape(self) -> tuple:
        return _value_shape(self.kind, self.dim)

    @property
    def has_gradient(self) -> bool:
        return self.grad is not None

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(t, x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + self.value_shape)

    def gradient(self, t: float, x) -> np.ndarray:
        if self.grad is None:
            raise ValueError(f"field {self.name or self.kind} has no gradient")
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.grad(t, x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + self.value_shape + (self.dim,))

    # -- construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, value, dim: int, name: str = "") -> "Field":
        value = np.asarray(value, dtype=float)
        kind = {0: "scalar", 1: "vector", 2: "matrix"}[value.ndim]
        shape = _value_shape(kind, dim)
        value = np.broadcast_to(value, shape).copy()
        zero = np.zeros(shape + (dim,))
        return cls(kind, dim, lambda t, x: value, lambda t, x: zero, name=name or "constant")

    @classmethod
    def zero(cls, kind: str, dim: int) -> "Field":
        return cls.constant(np.zeros(_value_shape(kind, dim)), dim, name="zero")

    @classmethod
    def identity_matrix(cls, dim: int) -> "Field":
        return cls.constant(np.eye(dim), dim, name="identity")

    def with_name(self, name: str) -> "Field":
        return replace(self, name=name)

    def shift(self, c) -> "Field":
        """``x -> f(t, x - c)``."""
        c = np.asarray(c, dtype=float)
        g = None
        if self.grad is not None:
            g = lambda t, x, _g=self.grad: _g(t, np.asarray(x) - c)
        return replace(self, fn=lambda t, x, _f=self.fn: _f(t, np.asarray(x) - c), grad=g)

    def scale(self, a: float) -> "Field":
        g = None
        if self.grad is not None:
            g = lambda t, x, _g=self.grad: a * np.asarray(_g(t, x))
        return replace(self, fn=lambda t, x, _f=self.fn: a * np.asarray(_f(t, x)), grad=g,
                       name=f"{a:g}*{self.name}")

    def __add__(self, other: "Field") -> "Field":
        if (self.kind, self.dim) != (other.kind, other.dim):
            raise ValueError("cannot add fields of different kind or dimension")
        g = None
        if self.grad is not None and other.grad is not None:
            g = lambda t, x: self.gradient(t, x) + other.gradient(t, x)
        return Field(self.kind, self.dim, lambda t, x: self(t, x) + other(t, x), g,
                     name=f"({self.name}+{other.name})",
                     autonomous=self.autonomous and other.autonomous)

    def __sub__(self, other: "Field") -> "Field":
        return self + other.scale(-1.0)

    def check_gradient(self, probes, t: float = 0.0, rel_tol: float = 1e-4, step: float = 1e-6) -> float:
        """Largest relative mismatch between ``gradient`` and central differences.

        Raises ``AssertionError`` when it exceeds ``rel_tol``.
        """
        x = np.atleast_2d(np.asarray(probes, dtype=float))
        exact = self.gradient(t, x)
        fd = np.empty_like(exact)
        for l in range(self.dim):
            e = np.zeros(self.dim)
            e[l] = step
            fd[..., l] = (self(t, x + e) - self(t, x - e)) / (2 * step)
        scale = max(1.0, float(np.max(np.abs(exact))))
        err = float(np.max(np.abs(exact - fd))) / scale
        if err > rel_tol:
            raise AssertionError(f"gradient mismatch {err:.3e} > {rel_tol:.1e}")
        return err


def _pointwise_magnitude(values: np.ndarray, value_ndim: int) -> np.ndarray:
    if value_ndim == 0:
        return np.abs(values)
    axes = tuple(range(values.ndim - value_ndim, values.ndim))
    return np.sqrt(np.sum(values * values, axis=axes))


# ---------------------------------------------------------------------------
# grid-sampled fields and norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridField:
    """Samples on the periodic lattice ``x_j = -L + j * 2L / res`` of ``[-L, L)^d``.

    ``values`` has shape ``(n_times, res, ..., res, *value_shape)``.  A single
    time slice represents an autonomous field on ``[0, horizon]``.
    """

    half_width: float
    resolution: int
    dim: int
    times: np.ndarray
    values: np.ndarray = field(repr=False)
    periodic: bool = True
    horizon: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        lattice = (len(t),) + (self.resolution,) * self.dim
        if v.shape[: 1 + self.dim] != lattice:
            raise ValueError(f"values shape {v.shape} does not start with {lattice}")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / self.resolution

    @property
    def value_ndim(self) -> int:
        return self.values.ndim - 1 - self.dim

    @staticmethod
    def lattice(half_width: float, resolution: int, dim: int) -> np.ndarray:
        """Lattice points with shape ``(res, ..., res, dim)``."""
        axis = -half_width + np.arange(resolution) * (2 * half_width / resolution)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @classmethod
    def from_field(cls, f: Field, half_width: float, resolution: int, times=None,
                   horizon: float = 1.0, periodic: bool = True) -> "GridField":
        pts = cls.lattice(half_width, resolution, f.dim)
        times = [0.0] if times is None else list(np.atleast_1d(times))
        vals = np.stack([np.asarray(f(t, pts)) for t in times])
        return cls(half_width, resolution, f.dim, np.asarray(times), vals, periodic, horizon)

    @classmethod
    def from_function(cls, fn, half_width: float, resolution: int, dim: int = 1,
                      horizon: float = 1.0) -> "GridField":
        """Autonomous grid field from ``fn(x)`` with ``x`` of shape ``(..., dim)``."""
        pts = cls.lattice(half_width, resolution, dim)
        return cls(half_width, resolution, dim, np.array([0.0]), np.asarray(fn(pts))[None], True, horizon)

    def with_values(self, values: np.ndarray) -> "GridField":
        return replace(self, values=values)

    def __sub__(self, other: "GridField") -> "GridField":
        return self.with_values(self.values - other.values)

    def scale(self, a: float) -> "GridField":
        return self.with_values(a * self.values)

    # -- self-describing CSV ---------------------------------------------------

    def to_csv(self, target) -> None:
        header = {
            "d": self.dim,
            "L": self.half_width,
            "resolution": self.resolution,
            "times": [float(t) for t in self.times],
            "value_shape": list(self.values.shape[1 + self.dim:]),
            "periodic": self.periodic,
            "horizon": self.horizon,
        }
        n_comp = int(np.prod(header["value_shape"], dtype=int))
        body = self.values.reshape(-1, n_comp)
        with open(target, "w") as fh:
            fh.write("# " + json.dumps(header) + "\n")
            for row in body:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def read_csv(cls, source) -> "GridField":
        with open(source) as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError("missing GridField header line")
            header = json.loads(first[2:])
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        shape = ((len(header["times"]),) + (header["resolution"],) * header["d"]
                 + tuple(header["value_shape"]))
        return cls(header["L"], header["resolution"], header["d"], np.asarray(header["times"]),
                   body.reshape(shape), header["periodic"], header.get("horizon", 1.0))


def _space_norm(f: GridField, p: float) -> np.ndarray:
    """Per-time-slice lattice Riemann sum of the spatial L^p norm."""
    mag = _pointwise_magnitude(f.values, f.value_ndim)
    axes = tuple(range(1, 1 + f.dim))
    if math.isinf(p):
        return np.max(mag, axis=axes)
    cell = f.spacing ** f.dim
    return (np.sum(mag ** p, axis=axes) * cell) ** (1.0 / p)


def _time_norm(slices: np.ndarray, f: GridField, q: float) -> float:
    if len(f.times) == 1:
        s = float(slices[0])
        return s if math.isinf(q) else s * f.horizon ** (1.0 / q)
    if math.isinf(q):
        return float(np.max(slices))
    return float(np.trapezoid(slices ** q, f.times) ** (1.0 / q))


def mixed_norm(f: GridField, p: float, q: float | None = None) -> float:
    """``||f||_{L^q_t L^p_x}``: lattice sum in space, trapezoid in time (``q`` defaults to ``p``)."""
    if not np.all(np.isfinite(f.values)):
        raise ValueError("grid field has nonfinite samples")
    if p < 1 or (q is not None and q < 1):
        raise ValueError("exponents must be >= 1")
    return _time_norm(_space_norm(f, p), f, p if q is None else q)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _wavenumbers(f: GridField) -> np.ndarray:
    """``|k|^2`` on the FFT lattice of the periodised box."""
    k = 2 * np.pi * np.fft.fftfreq(f.resolution, d=f.spacing)
    mesh = np.meshgrid(*([k] * f.dim), indexing="ij")
    return sum(m * m for m in mesh)


def bessel_potential(f: GridField, beta: float) -> GridField:
    """Apply the Fourier multiplier ``(1 + |k|^2)^(beta/2)`` on the periodised box."""
    if not f.periodic:
        raise ValueError("Bessel potentials need a periodic grid field")
    if not _is_pow2(f.resolution):
        raise ValueError(f"resolution {f.resolution} is not a power of two")
    if not np.all(np.isfinite(f.values)):
        raise ValueError("grid field has nonfinite samples")
    mult = (1.0 + _wavenumbers(f)) ** (beta / 2.0)
    mult = mult.reshape((1,) + mult.shape + (1,) * f.value_ndim)
    axes = tuple(range(1, 1 + f.dim))
    out = np.fft.ifftn(np.fft.fftn(f.values, axes=axes) * mult, axes=axes).real
    return f.with_values(out)


def bessel_norm(f: GridField, beta: float, p: float, q: float | None = None) -> float:
    """``||(I - Laplacian)^(beta/2) f||`` in ``L^q_t L^p_x`` on the periodised box.

    ``beta = -1`` gives the ``W^{-1,p}`` norm used by the negative-norm
    stability estimate.
    """
    if not -1.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [-1, 1]")
    if beta == 0.0:
        return mixed_norm(f, p, q)
    return mixed_norm(bessel_potential(f, beta), p, q)


def plancherel_norm(f: GridField, beta: float) -> float:
    """Closed-form ``W^{beta,2}`` norm of an autonomous field via Parseval."""
    axes = tuple(range(1, 1 + f.dim))
    coef = np.fft.fftn(f.values[0:1], axes=axes)[0]
    w = (1.0 + _wavenumbers(f)) ** beta
    w = w.reshape(w.shape + (1,) * f.value_ndim)
    energy = np.sum(w * np.abs(coef) ** 2) * f.spacing ** f.dim / f.resolution ** f.dim
    return float(math.sqrt(energy) * f.horizon ** 0.5)


# ---------------------------------------------------------------------------
# exponent classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float = math.inf

    def __post_init__(self):
        if not (self.p > 1 and self.q > 1):
            raise ValueError("exponents must lie in (1, inf]")

    def in_class(self, d: int, beta: float) -> bool:
        """Krylov-Rockner membership ``2/q + d/p < 2 - beta`` with ``p, q > 2/(2-beta)``."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        low = 2.0 / (2.0 - beta)
        if self.p <= low or self.q <= low:
            return False
        return 2.0 / self.q + d / self.p < 2.0 - beta

    def satisfies_strong(self, d: int) -> bool:
        """``4/q + d/p < 1``, needed for the negative-norm stability estimate."""
        return 4.0 / self.q + d / self.p < 1.0


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def bump(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised C^2 kernel ``(1 - |u|^2)^3`` on the unit ball and its gradient."""
    r2 = np.sum(u * u, axis=-1)
    inside = r2 < 1.0
    s = np.where(inside, 1.0 - r2, 0.0)
    val = s ** 3
    grad = (-6.0 * s ** 2)[..., None] * u
    return val, grad


def _discrete_mollify(base: Field, eps: float, radius: float | None, per_eps: int):
    """Normalised lattice convolution ``sum_j w_j b(z_j) chi(z_j) / sum_j w_j``.

    The lattice is the infinite cell-centred lattice of spacing ``eps/per_eps``;
    only nodes within ``eps`` of ``x`` carry weight, so the result is C^2 in
    ``x`` whatever the regularity of ``b``, and reproduces constants exactly.
    """
    d = base.dim
    h = eps / per_eps
    m = per_eps + 1
    rng1 = np.arange(-m, m + 1)
    offsets = np.stack(np.meshgrid(*([rng1] * d), indexing="ij"), axis=-1).reshape(-1, d)
    vdim = len(base.value_shape)

    def nodes(x):
        i0 = np.floor(x / h - 0.5)
        return (i0[..., None, :] + offsets + 0.5) * h

    def parts(t, x):
        x = np.asarray(x, dtype=float)
        z = nodes(x)
        u = (x[..., None, :] - z) / eps
        w, gw = bump(u)
        gw = gw / eps
        bz = base(t, z)
        if radius is not None:
            keep = np.sum(z * z, axis=-1) <= radius * radius
            bz = bz * keep.reshape(keep.shape + (1,) * vdim)
        return w, gw, bz

    def value(t, x):
        w, _, bz = parts(t, x)
        wb = w.reshape(w.shape + (1,) * vdim)
        return np.sum(wb * bz, axis=w.ndim - 1) / np.sum(w, axis=-1).reshape(w.shape[:-1] + (1,) * vdim)

    def gradient(t, x):
        w, gw, bz = parts(t, x)
        ax = w.ndim - 1
        s1 = np.sum(w, axis=-1)
        g1 = np.sum(gw, axis=-2)  # (..., d)
        wb = w.reshape(w.shape + (1,) * vdim)
        sb = np.sum(wb * bz, axis=ax)
        gwv = gw.reshape(gw.shape[:-1] + (1,) * vdim + (d,))
        gb = np.sum(gwv * bz[..., None], axis=ax)
        s1v = s1.reshape(s1.shape + (1,) * vdim + (1,))
        val = sb / s1.reshape(s1.shape + (1,) * vdim)
        g1v = g1.reshape(g1.shape[:-1] + (1,) * vdim + (d,))
        return (gb - val[..., None] * g1v) / s1v

    return value, gradient


@dataclass(frozen=True)
class MollificationFamily:
    """Smooth approximants ``b^n = rho_eps(n) * (b chi_R(n))`` with growth bound ``r(n)``.

    ``r(n) = rate_scale * n**rate_exponent``, ``eps(n) = eps0 * n**(-1/eps_power)``
    and ``R(n) = cutoff0 * n`` (``cutoff0=None`` disables the cutoff, as needed
    for nondegenerate diffusion fields).  ``order`` is 1 for drift families and
    2 for diffusion families.  ``identity=True`` returns the base itself (for
    already smooth coefficients) but still certifies the bound.
    """

    base: Field
    p: float = 2.0
    rate_exponent: float = 0.25
    rate_scale: float = 1.0
    eps0: float = 1.0
    eps_power: float = 4.0
    cutoff0: Optional[float] = 1.0
    order: int = 1
    box: float = 4.0
    ellipticity_K: float = 1.0
    per_eps: int = 12
    norm_resolution: int = 4096
    identity: bool = False

    def r(self, n: int) -> float:
        return self.rate_scale * float(n) ** self.rate_exponent

    def eps(self, n: int) -> float:
        return self.eps0 * float(n) ** (-1.0 / self.eps_power)

    def cutoff(self, n: int) -> Optional[float]:
        return None if self.cutoff0 is None else self.cutoff0 * n

    def base_norm(self) -> float:
        """``||b||_{L^p}`` on the truncation box (cell-centred quadrature)."""
        return _lp_on_box(self.base, None, self.p, self.box, self.norm_resolution)


@dataclass(frozen=True)
class MollifiedMember:
    field: Field
    n: int
    eps: float
    cutoff: Optional[float]
    lp_error: float
    smooth_norm: float
    bound: float

    @property
    def certified(self) -> bool:
        return self.smooth_norm <= self.bound


def _box_points(box: float, res: int, d: int) -> tuple[np.ndarray, float]:
    h = 2 * box / res
    axis = -box + (np.arange(res) + 0.5) * h
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts, h ** d


def _lp_on_box(f: Field, g: Optional[Field], p: float, box: float, res: int) -> float:
    pts, cell = _box_points(box, res if f.dim == 1 else max(16, int(res ** (1 / f.dim))), f.dim)
    total = 0.0 if not math.isinf(p) else -np.inf
    for chunk in np.array_split(pts, max(1, len(pts) // 8192)):
        v = f(0.0, chunk) if g is None else f(0.0, chunk) - g(0.0, chunk)
        mag = _pointwise_magnitude(np.asarray(v), len(f.value_shape))
        total = max(total, float(mag.max())) if math.isinf(p) else total + float(np.sum(mag ** p)) * cell
    return total if math.isinf(p) else total ** (1.0 / p)


def _sup_norms(f: Field, pts: np.ndarray, order: int) -> list[float]:
    """Probe suprema of ``|f|``, ``|grad f|`` and (order 2) ``|grad^2 f|``."""
    vd = len(f.value_shape)
    val = np.asarray(f(0.0, pts))
    grad = np.asarray(f.gradient(0.0, pts))
    out = [float(_pointwise_magnitude(val, vd).max()), float(_pointwise_magnitude(grad, vd + 1).max())]
    if order >= 2:
        step = 1e-5
        hess = []
        for l in range(f.dim):
            e = np.zeros(f.dim)
            e[l] = step
            hess.append((np.asarray(f.gradient(0.0, pts + e)) - np.asarray(f.gradient(0.0, pts - e))) / (2 * step))
        h = np.stack(hess, axis=-1)
        out.append(float(_pointwise_magnitude(h, vd + 2).max()))
    return out


def mollify(fam: MollificationFamily, n: int, strict: bool = True) -> MollifiedMember:
    """Build the ``n``-th member and certify its smoothness bound.

    The attached ``smooth_norm`` is ``||b^n||_{C^1}`` for drift families and
    ``||s^n||_{C^1}^2 + K ||s^n||_{C^2}`` for diffusion families, both measured
    on a probe lattice; ``bound = r(n) ||b||_{L^p(box)}``.  With ``strict`` a
    violated bound raises :class:`CertificationError`.
    """
    if int(n) != n or n < 1:
        raise ValueError("member index must be a positive integer")
    base = fam.base
    if not base.autonomous:
        raise ValueError("mollification families act on autonomous fields")
    eps, radius = fam.eps(n), fam.cutoff(n)
    if fam.identity:
        if not base.has_gradient:
            raise ValueError("identity family needs a base field with gradient")
        member = base
    else:
        value, gradient = _discrete_mollify(base, eps, radius, fam.per_eps)
        member = Field(base.kind, base.dim, value, gradient, base.exponents,
                       name=f"{base.name}^({n})", autonomous=True)
    lp_error = 0.0 if fam.identity else _lp_on_box(base, member, fam.p, fam.box, fam.norm_resolution)
    extent = fam.box if radius is None else min(fam.box, radius) + eps
    pts, _ = _box_points(extent, max(64, int(32 * extent / eps)) if base.dim == 1 else 48, base.dim)
    sups = _sup_norms(member, pts, fam.order)
    if fam.order == 1:
        smooth = sups[0] + sups[1]
    else:
        smooth = (sups[0] + sups[1]) ** 2 + fam.ellipticity_K * sum(sups)
    bound = fam.r(n) * fam.base_norm()
    out = MollifiedMember(member, int(n), eps, radius, lp_error, smooth, bound)
    if strict and not out.certified:
        raise CertificationError(
            f"member {n}: smoothness norm {smooth:.4g} exceeds r(n)*||b|| = {bound:.4g}"
        )
    return out


# ---------------------------------------------------------------------------
# correction drifts
# ---------------------------------------------------------------------------


def directional_product(phi: Field, psi: Field) -> Field:
    """``[(phi . grad) psi]_j = sum_{k,l} phi_lk d_l psi_jk``."""
    if phi.kind != "matrix" or psi.kind != "matrix":
        raise ValueError("directional product needs matrix fields")
    if not psi.has_gradient:
        raise ValueError("directional product needs the gradient of psi")

    def fn(t, x):
        return np.einsum("...lk,...jkl->...j", phi(t, x), psi.gradient(t, x))

    return Field("vector", psi.dim, fn, name=f"({phi.name}.grad){psi.name}",
                 autonomous=phi.autonomous and psi.autonomous)


def stratonovich_correction(sigma: Field) -> Field:
    """Ito-Stratonovich drift ``1/2 (sigma . grad) sigma``."""
    if not sigma.has_gradient:
        raise ValueError("Stratonovich correction needs the gradient of sigma")
    prod = directional_product(sigma, sigma)
    return prod.scale(0.5).with_name(f"strat({sigma.name})")


def wz_correction(sigma: Field, c) -> Field:
    """Wong-Zakai correction drift ``c : sigma . grad sigma``.

    With ``sigma_jk`` the coefficient of ``dW_k`` in ``dX_j`` this is
    ``v_k = sum_{i,j,l} c_ij sigma_li d_l sigma_kj``; ``c = I/2`` gives the
    Stratonovich correction.
    """
    if not sigma.has_gradient:
        raise ValueError("Wong-Zakai correction needs the gradient of sigma")
    c = np.asarray(c, dtype=float)
    if c.shape != (sigma.dim, sigma.dim):
        raise ValueError(f"correction matrix must be {sigma.dim}x{sigma.dim}")

    def fn(t, x):
        return np.einsum("ij,...li,...kjl->...k", c, sigma(t, x), sigma.gradient(t, x))

    return Field("vector", sigma.dim, fn, name=f"wz({sigma.name})", autonomous=sigma.autonomous)


class Ellipticity(NamedTuple):
    low: float
    high: float

    @property
    def degenerate(self) -> bool:
        return self.low <= 1e-12


def ellipticity_margin(sigma: Field, probes, times=(0.0,)) -> Ellipticity:
    """Extremes of ``|sigma^T xi|^2`` over probes and unit vectors ``xi``.

    The optimum over the sphere is attained at eigenvectors of
    ``sigma sigma^T``, so the extreme eigenvalues are used directly.
    """
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("need at least one probe point")
    lo, hi = np.inf, -np.inf
    for t in times:
        s = np.asarray(sigma(t, x))
        if sigma.kind == "scalar":
            ev = (s * s)[..., None]
        else:
            ev = np.linalg.eigvalsh(s @ np.swapaxes(s, -1, -2))
        lo, hi = min(lo, float(ev.min())), max(hi, float(ev.max()))
    return Ellipticity(lo, hi)
