"""Scenario registry: YAML configs, validation, execution and report emission.

A config names a scenario, a master seed, scenario parameters and a nonempty
list of assertions.  Each assertion compares one scalar metric produced by the
scenario against ``min``/``max`` bounds or an exact ``equals`` value.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
import yaml

from .coefficients import Field, MollificationFamily
from .mckean_vlasov import (EmpiricalMeasure, MkvProblem, chaos_report, convolution_ratio, fixed_point_solve,
                            ou_variance, particle_system_solve)
from .noise import RngStream, TimeGrid, restrict, sample_brownian
from .parallel import concat, map_chunks
from .registry import FIELDS, build_field
from .reports import ConvergenceReport, _jsonable, fit_rate
from .sde import SdeProblem, euler_maruyama, exact_gbm
from .stability import (NormSpec, envelope_constant, khasminskii_functional, moment_error, perturbation_scan,
                        refinement_change, stability_scan)
from .wong_zakai import WienerApproxFamily, estimate_s_and_c, two_step_experiment

__all__ = [
    "Scenario",
    "SCENARIOS",
    "ConfigError",
    "RunResult",
    "load_config",
    "validate_config",
    "run_config",
    "bundled_config_path",
    "config_schema",
]

SEED_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    """Config failed schema or semantic validation."""


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    anchor: str
    params_schema: dict
    metrics: dict
    runner: Callable[[dict, RngStream, int | None], tuple[dict, dict]]
    field_keys: tuple = ()


@dataclass
class RunResult:
    scenario: str
    seed: int
    metrics: dict
    assertions: list[dict]
    reports: dict = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    @property
    def failed_ids(self) -> list[str]:
        return [a["id"] for a in self.assertions if not a["passed"]]


def config_schema() -> dict:
    return json.loads(resources.files("singsde").joinpath("schema.json").read_text())


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_FIELD = {"oneOf": [{"type": "string"}, {"type": "object", "required": ["name"]}]}


def _sched(item=None) -> dict:
    return {"type": "array", "minItems": 1, "items": item or _POS}


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _gbm_em_rate(p: dict, rng: RngStream, workers):
    mu, theta, x0, T = p["mu"], p["theta"], p["x0"], p["horizon"]
    levels = sorted(int(k) for k in p["levels"])
    finest = TimeGrid(T, 2 ** levels[-1])
    prob = SdeProblem(build_field({"name": "linear-drift", "mu": mu}),
                      build_field({"name": "linear-diffusion", "theta": theta}), [x0])

    def work(r, size):
        W = sample_brownian(finest, 1, r, size)
        out = []
        for lv in levels:
            Wc = restrict(W, TimeGrid(T, 2 ** lv))
            diff = euler_maruyama(prob, Wc).states - exact_gbm(mu, theta, x0, Wc).states
            out.append(np.max(np.abs(diff[..., 0]), axis=-1))
        return np.stack(out, axis=-1)

    sups = concat(map_chunks(work, int(p["paths"]), rng, 1024, workers))
    rep = ConvergenceReport("dt", "error", anchor="Euler-Maruyama strong rate on geometric Brownian motion")
    for i, lv in enumerate(levels):
        err, se = moment_error(sups[:, i], 2)
        rep.add(level=lv, dt=T / 2 ** lv, error=err, stderr=se)
    fit = rep.fit
    return {"em_rate": rep}, {"slope": fit.slope, "r2": fit.r2}


def _correction_matrices(p: dict, rng: RngStream, workers):
    d = int(p["dim"])
    fam = WienerApproxFamily(p["kind"])
    rep = ConvergenceReport("n", "c", anchor="correction matrices s and c of the Wiener approximation family")
    s_ok, c_ok = True, True
    s_z, c_z = 0.0, 0.0
    for n in p["schedule"]:
        n = int(n)
        t = 1.0 / n if p["time"] == "mesh" else float(p["time"])
        s, c, _ = estimate_s_and_c(fam.with_n(n), t, int(p["samples"]), rng.for_purpose(f"n={n}"), d,
                                   workers=workers)
        s_target, c_target = fam.limit_s(d), fam.limit_c(d)
        s_ok &= s.within(s_target)
        c_ok &= c.within(c_target)
        with np.errstate(divide="ignore", invalid="ignore"):
            zs = np.where(s.stderr > 0, np.abs(s.matrix - s_target) / s.stderr, np.where(s.matrix == s_target, 0, np.inf))
            zc = np.abs(c.matrix - c_target) / c.stderr
        s_z, c_z = max(s_z, float(zs.max())), max(c_z, float(zc.max()))
        for i in range(d):
            for j in range(d):
                rep.add(n=n, t=t, i=i + 1, j=j + 1, s=float(s.matrix[i, j]), s_stderr=float(s.stderr[i, j]),
                        c=float(c.matrix[i, j]), c_stderr=float(c.stderr[i, j]))
    return {"correction": rep}, {"s_within": bool(s_ok), "c_within": bool(c_ok), "max_s_z": s_z, "max_c_z": c_z}


def _decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def _wong_zakai_limit(p: dict, rng: RngStream, workers):
    theta, x0 = p["theta"], p["x0"]
    sigma = build_field({"name": "linear-diffusion", "theta": theta})
    zero = build_field({"name": "zero", "kind": "vector", "dim": 1})
    rep = two_step_experiment(
        MollificationFamily(zero, identity=True), MollificationFamily(sigma, identity=True),
        WienerApproxFamily("piecewise-linear"), [int(n) for n in p["schedule"]], int(p["paths"]), rng, [x0],
        ref_factor=int(p["ref_factor"]), reference=lambda W: x0 * np.exp(theta * W.values),
        chunk=256, workers=workers,
    )
    rep.anchor = "Wong-Zakai limit: piecewise-linear driven ODE vs Stratonovich solution"
    first = rep.rows[0]
    A = first["error"] / (first["f_n"] ** 2 + first["n"] ** -0.2)
    env_ok = all(r["error"] <= A * (r["f_n"] ** 2 + r["n"] ** -0.2) * (1 + 1e-12) for r in rep.rows)
    last = rep.rows[-1]
    z = abs(last["final_mean"] - rep.meta["reference_final_mean"]) / rep.meta["reference_final_stderr"]
    rep.meta["envelope_A"] = A
    return {"wong_zakai": rep}, {
        "strictly_decreasing": _decreasing(r["error"] for r in rep.rows),
        "final_mean_z": z,
        "envelope_ok": env_ok,
        "slope": rep.fit.slope,
    }


def _two_step(p: dict, rng: RngStream, workers):
    b = build_field(p["drift"])
    fam = p["family"]
    b_fam = MollificationFamily(b, p=fam["p"], rate_exponent=fam["rate_exponent"], eps0=fam["eps0"],
                                eps_power=fam["eps_power"], cutoff0=fam["cutoff0"])
    sigma = build_field(p["diffusion"])
    s_fam = MollificationFamily(sigma, p=fam["p"], rate_exponent=fam["rate_exponent"], identity=True,
                                order=2, cutoff0=None)
    rep = two_step_experiment(b_fam, s_fam, WienerApproxFamily(p["approximation"]),
                              [int(n) for n in p["schedule"]], int(p["paths"]), rng, [p["x0"]],
                              ref_factor=int(p["ref_factor"]), hfn_constant=p["hfn_constant"],
                              clamp_radius=p["clamp_radius"], chunk=250, workers=workers)
    return {"two_step": rep}, {
        "decreasing": _decreasing(r["error"] for r in rep.rows),
        "hfn_satisfied": bool(rep.meta["hfn_satisfied"]),
        "clamp_events": rep.meta["clamp_events"],
        "slope": rep.fit.slope,
    }


def _stability_linear(p: dict, rng: RngStream, workers):
    b, h, sigma = build_field(p["drift"]), build_field(p["perturbation"]), build_field(p["diffusion"])
    grid = TimeGrid(p["horizon"], int(p["steps"]))
    norm = NormSpec("mixed", p=math.inf, q=math.inf)
    eps = [2.0 ** -int(j) for j in p["eps_levels"]]
    reports, metrics = {}, {}
    for m in p["moments"]:
        rep = stability_scan(b, h, sigma, eps, norm, m, int(p["paths"]), rng, [p["x0"]], grid, workers=workers)
        reports[f"stability_m{m:g}"] = rep
        metrics[f"slope_m{m:g}"] = rep.slope
        metrics[f"violations_m{m:g}"] = len(rep.violations)
    e = max(eps)
    metrics["refinement_change"] = refinement_change(
        SdeProblem(b, sigma, [p["x0"]]), SdeProblem(b + h.scale(e), sigma, [p["x0"]]), grid,
        min(int(p["paths"]), 1000), 1, rng.for_purpose("refinement"))
    return reports, metrics


def _negative_norm(p: dict, rng: RngStream, workers):
    b, sigma = build_field(p["drift"]), build_field(p["diffusion"])
    grid = TimeGrid(p["horizon"], int(p["steps"]))
    ks = [float(k) for k in p["wavenumbers"]]
    perts = [(k, build_field({"name": "sine", "k": k, "amplitude": p["amplitude"]})) for k in ks]
    neg = NormSpec("negative", p=p["p"], q=math.inf, beta=1.0, estimate="negative")
    lp = NormSpec("mixed", p=p["p"], q=math.inf)
    rep = perturbation_scan(b, sigma, perts, [neg, lp], p["moment"], int(p["paths"]), rng, [p["x0"]], grid,
                            workers=workers)
    rep.anchor = "negative-norm stability: oscillatory drift perturbations"
    errs = rep.values
    fits = rep.meta["norm_fits"]
    return {"negative_norm": rep}, {
        "decreasing": _decreasing(errs),
        "slope_k": fit_rate(rep.params, errs).slope,
        "negative_norm_slope": fits[neg.label]["fit"]["slope"],
        "lp_spread": fits[lp.label]["spread"],
        "error_spread": float(errs.max() / errs.min()),
    }


def _ou_problem(p: dict) -> MkvProblem:
    return MkvProblem.mean_field_ou(initial_mean=p["initial_mean"], initial_std=p["initial_std"])


def _mkv_fixed_point(p: dict, rng: RngStream, workers):
    prob = _ou_problem(p)
    grid = TimeGrid(p["horizon"], int(p["steps"]))
    res = fixed_point_solve(prob, int(p["particles"]), grid, p["lam"], p["tol"], int(p["max_iter"]), rng)
    rep = ConvergenceReport("t", "variance", anchor="McKean-Vlasov fixed point: mean-field OU moments")
    mean_z, var_z = 0.0, 0.0
    m0 = p["initial_mean"]
    for t in p["times"]:
        x = res.bundle.marginal_at(t).points[:, 0]
        N = len(x)
        mean, var = float(x.mean()), float(x.var(ddof=1))
        mse = float(x.std(ddof=1) / math.sqrt(N))
        vse = float(math.sqrt((np.mean((x - mean) ** 4) - var * var) / N))
        target = float(ou_variance(t, p["initial_std"] ** 2))
        mz, vz = abs(mean - m0) / mse, abs(var - target) / vse
        mean_z, var_z = max(mean_z, mz), max(var_z, vz)
        rep.add(t=float(t), mean=mean, mean_stderr=mse, variance=var, variance_stderr=vse,
                variance_exact=target, mean_z=mz, variance_z=vz)
    ratios = []
    hist = ConvergenceReport("lam", "ratio", anchor="contraction of the fixed-point map in the weighted metric")
    for lam in p["contraction_lambdas"]:
        r = fixed_point_solve(prob, int(p["contraction_particles"]), grid, lam, 0.0, 4, rng.for_purpose("contraction"))
        h = np.asarray(r.history)
        g = float(np.exp(np.mean(np.log(h[1:] / h[:-1]))))
        ratios.append(g)
        hist.add(lam=float(lam), ratio=g, d1=float(h[0]), d4=float(h[-1]))
    rep.meta.update(iterations=res.iterations, history=res.history, lam=res.lam)
    return {"moments": rep, "contraction": hist}, {
        "converged": bool(res.converged),
        "iterations": res.iterations,
        "mean_max_z": mean_z,
        "variance_max_z": var_z,
        "contraction_decreasing": _decreasing(ratios),
    }


def _mkv_chaos(p: dict, rng: RngStream, workers):
    prob = _ou_problem(p)
    grid = TimeGrid(p["horizon"], int(p["steps"]))
    ref = fixed_point_solve(prob, int(p["reference_particles"]), grid, p["lam"], 1e-10, 50,
                            rng.for_purpose("reference")).bundle
    systems = {}
    for N in p["particles"]:
        N = int(N)
        systems[N] = [particle_system_solve(prob, N, grid, rng.for_purpose("system").child(N).child(j))
                      for j in range(int(p["replicas"]))]
    rep = chaos_report(systems, ref, [p["horizon"]])
    fit = rep.meta["final_fit"]
    return {"chaos": rep}, {"slope": fit["slope"], "r2": fit["r2"]}


def _convolution_bound(p: dict, rng: RngStream, workers):
    g = rng.generator()
    rep = ConvergenceReport("instance", "ratio", anchor="convolution against measure differences in W^{-1,p}")
    for i in range(int(p["instances"])):
        width, centre = g.uniform(*p["width_range"]), g.uniform(-1.0, 1.0)
        f = Field("scalar", 1, lambda t, x, w=width, c=centre: np.exp(-((x[..., 0] - c) / w) ** 2))
        n_mu, n_nu = (int(v) for v in g.integers(2, int(p["max_atoms"]) + 1, size=2))
        mu = EmpiricalMeasure(g.uniform(-1.0, 1.0, (n_mu, 1)))
        nu = EmpiricalMeasure(g.normal(0.0, 0.5, (n_nu, 1)))
        rep.add(instance=i, ratio=convolution_ratio(f, mu, nu, p["p"]), width=width, atoms_mu=n_mu, atoms_nu=n_nu)
    ratios = rep.values
    med = float(np.median(ratios))
    rep.meta["median"] = med
    return {"convolution": rep}, {"median_ratio": med, "max_over_median": float(ratios.max() / med)}


def _khasminskii(p: dict, rng: RngStream, workers):
    prob = SdeProblem(build_field(p["drift"]), build_field(p["diffusion"]), [p["x0"]])
    grid = TimeGrid(p["horizon"], int(p["steps"]))
    c = p["constant"]
    const = Field.constant(c, 1)
    rep = ConvergenceReport("lam", "log_estimate", anchor="exponential moments of additive functionals")
    const_err = 0.0
    for lam in p["lambdas"]:
        e = khasminskii_functional(prob, const, lam, 64, rng.for_purpose("constant"), grid)
        const_err = max(const_err, abs(e.estimate - math.exp(lam * c * grid.horizon)) / math.exp(lam * c * grid.horizon))
    f = build_field(p["integrand"])
    try:
        norm = NormSpec("mixed", p=p["p"], q=p["q"], estimate="drift")
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from None
    f_norm = norm.evaluate(f, grid.horizon)
    logs = []
    for lam in p["lambdas"]:
        e = khasminskii_functional(prob, f, lam, int(p["paths"]), rng.for_purpose("bump"), grid, workers=workers)
        logs.append(e.log_estimate)
        rep.add(lam=float(lam), estimate=e.estimate, stderr=e.stderr, log_estimate=e.log_estimate)
    C = envelope_constant(p["lambdas"], logs, f_norm, p["q"])
    rep.meta.update(f_norm=f_norm, envelope_constant=C, q=p["q"])
    return {"khasminskii": rep}, {"constant_rel_error": const_err, "envelope_constant": C,
                                  "envelope_finite": bool(math.isfinite(C))}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

SCENARIOS: dict[str, Scenario] = {}


def _register(name, description, anchor, params, metrics, runner, field_keys=()):
    defaults = {k: v["default"] for k, v in params.items()}
    schema = _obj({k: v["schema"] for k, v in params.items()})
    SCENARIOS[name] = Scenario(name, description, anchor, {"schema": schema, "defaults": defaults},
                               metrics, runner, tuple(field_keys))


def _p(schema, default):
    return {"schema": schema, "default": default}


_register(
    "gbm-em-rate", "Strong L2 sup-error of Euler-Maruyama against the exact GBM solution.",
    "Euler-Maruyama strong rate, exact-solution oracle",
    {"mu": _p(_NUM, 0.1), "theta": _p(_NUM, 0.5), "x0": _p(_NUM, 1.0), "horizon": _p(_POS, 1.0),
     "paths": _p(_INT, 10000), "levels": _p(_sched(_INT), [4, 5, 6, 7, 8, 9, 10])},
    {"slope": "fitted slope of log error on log dt", "r2": "R^2 of the fit"},
    _gbm_em_rate,
)
_register(
    "correction-matrices", "Monte Carlo estimates of the skew matrix s and correction matrix c.",
    "correction matrices with c = s + I/2",
    {"kind": _p({"enum": ["piecewise-linear", "kernel"]}, "piecewise-linear"), "dim": _p(_INT, 2),
     "schedule": _p(_sched(_INT), [8, 32]), "samples": _p({"type": "integer", "minimum": 100}, 100000),
     "time": _p({"oneOf": [{"const": "mesh"}, _POS]}, "mesh")},
    {"s_within": "s within 3 se of its limit for every n", "c_within": "c within 3 se of s + I/2",
     "max_s_z": "largest |s - limit| / se", "max_c_z": "largest |c - limit| / se"},
    _correction_matrices,
)
_register(
    "wong-zakai-limit", "Piecewise-linear Wong-Zakai ODE for sigma(x) = theta x against x0 exp(theta W).",
    "Wong-Zakai convergence to the Stratonovich solution",
    {"theta": _p(_NUM, 0.5), "x0": _p(_NUM, 1.0), "paths": _p(_INT, 1000), "ref_factor": _p(_INT, 4),
     "schedule": _p(_sched(_INT), [4, 8, 16, 32, 64, 128, 256])},
    {"strictly_decreasing": "E sup|X - X^n|^2 strictly decreasing", "final_mean_z": "final-level mean vs exact, in se",
     "envelope_ok": "errors under A (f_n^2 + n^-1/5)", "slope": "fitted slope of error on n"},
    _wong_zakai_limit,
)
_register(
    "two-step", "Mollified singular drift driven by W^n against the fine Euler reference of the limit SDE.",
    "two-step scheme: mollification then Wong-Zakai",
    {"drift": _p(_FIELD, {"name": "truncated-power", "a": 0.25, "radius": 1.0}),
     "diffusion": _p(_FIELD, {"name": "identity", "dim": 1}),
     "family": _p(_obj({"p": _POS, "rate_exponent": _POS, "eps0": _POS, "eps_power": _POS,
                         "cutoff0": {"oneOf": [_POS, {"type": "null"}]}}, ["p", "rate_exponent", "eps0", "eps_power", "cutoff0"]),
                  {"p": 2.0, "rate_exponent": 0.25, "eps0": 2.0, "eps_power": 5.0, "cutoff0": 1.0}),
     "approximation": _p({"enum": ["piecewise-linear", "kernel"]}, "piecewise-linear"),
     "schedule": _p(_sched(_INT), [4, 8, 16, 32]), "paths": _p(_INT, 1000), "ref_factor": _p(_INT, 64),
     "hfn_constant": _p(_POS, 0.001), "clamp_radius": _p(_POS, 40.0), "x0": _p(_NUM, 0.0)},
    {"decreasing": "self-convergence error decreasing in n", "hfn_satisfied": "growth condition proxy holds",
     "clamp_events": "reference steps hitting the state clamp",
     "slope": "fitted slope of error on n"},
    _two_step, ("drift", "diffusion"),
)
_register(
    "stability-linear", "Coupled errors between drifts b and b + eps h for a smooth h.",
    "drift stability: linear in the coefficient difference",
    {"drift": _p(_FIELD, {"name": "sine", "k": 1.0, "amplitude": 0.5}),
     "perturbation": _p(_FIELD, {"name": "cosine", "k": 1.0, "amplitude": 1.0}),
     "diffusion": _p(_FIELD, {"name": "identity", "dim": 1}),
     "eps_levels": _p(_sched(_INT), [1, 2, 3, 4, 5, 6, 7]), "moments": _p(_sched({"type": "number", "minimum": 1}), [1, 2]),
     "paths": _p(_INT, 2000), "steps": _p(_INT, 256), "horizon": _p(_POS, 1.0), "x0": _p(_NUM, 0.0)},
    {"slope_m1": "log error on log norm, m = 1", "slope_m2": "log error on log norm, m = 2",
     "violations_m1": "rows above 1.5 A norm, m = 1", "violations_m2": "rows above 1.5 A norm, m = 2",
     "refinement_change": "relative change of the largest-eps error when dt halves"},
    _stability_linear, ("drift", "perturbation", "diffusion"),
)
_register(
    "negative-norm", "Coupled errors for perturbations sin(kx) of fixed amplitude.",
    "negative-norm stability: oscillatory perturbations",
    {"drift": _p(_FIELD, {"name": "sine", "k": 1.0, "amplitude": 0.5}),
     "diffusion": _p(_FIELD, {"name": "identity", "dim": 1}),
     "wavenumbers": _p(_sched(), [1, 2, 4, 8, 16]), "amplitude": _p(_POS, 1.0), "p": _p(_POS, 2.0),
     "moment": _p({"type": "number", "minimum": 1}, 2), "paths": _p(_INT, 2000), "steps": _p(_INT, 256),
     "horizon": _p(_POS, 1.0), "x0": _p(_NUM, 0.5)},
    {"decreasing": "errors strictly decreasing in k", "slope_k": "log error on log k",
     "negative_norm_slope": "log error on log W^{-1,p} norm", "lp_spread": "max/min of the L^p norms",
     "error_spread": "max/min of the errors"},
    _negative_norm, ("drift", "diffusion"),
)
_OU = {"initial_mean": _p(_NUM, 1.0), "initial_std": _p(_POS, 1.0), "horizon": _p(_POS, 1.0), "steps": _p(_INT, 256),
       "lam": _p(_POS, 4.0)}
_register(
    "mkv-fixed-point", "Picard iteration for mean-field OU; moments against the explicit ODE.",
    "McKean-Vlasov fixed point, explicit moment oracle",
    {**_OU, "particles": _p(_INT, 2048), "tol": _p(_POS, 1e-10), "max_iter": _p(_INT, 50),
     "times": _p(_sched(), [0.25, 0.5, 1.0]), "contraction_lambdas": _p(_sched(), [1, 4, 16]),
     "contraction_particles": _p(_INT, 256)},
    {"converged": "iteration reached tol", "iterations": "Picard iterations used",
     "mean_max_z": "largest |mean - E X_0| / se", "variance_max_z": "largest |var - v(t)| / se",
     "contraction_decreasing": "mean contraction ratio decreasing in lambda"},
    _mkv_fixed_point,
)
_register(
    "mkv-chaos", "Interacting particle systems against a large fixed-point reference.",
    "propagation of chaos",
    {**_OU, "particles": _p(_sched(_INT), [16, 32, 64, 128, 256, 512, 1024]), "replicas": _p(_INT, 8),
     "reference_particles": _p(_INT, 8192)},
    {"slope": "fitted slope of W_1 on N at the final time", "r2": "R^2 of the fit"},
    _mkv_chaos,
)
_register(
    "convolution-bound", "Ratio of the W^{-1,p} norm of f*(mu - nu) to ||f||_p W_1(mu, nu) over random instances.",
    "convolution Lipschitz bound in the Wasserstein distance",
    {"instances": _p(_INT, 100), "p": _p(_POS, 2.0), "max_atoms": _p({"type": "integer", "minimum": 2}, 32),
     "width_range": _p({"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}, [0.2, 1.0])},
    {"median_ratio": "median ratio (the reported constant)", "max_over_median": "largest ratio over the median"},
    _convolution_bound,
)
_register(
    "khasminskii", "Exponential moments of time integrals of f along Brownian paths.",
    "exponential functional bound with fitted constant",
    {"drift": _p(_FIELD, {"name": "zero", "kind": "vector", "dim": 1}),
     "diffusion": _p(_FIELD, {"name": "identity", "dim": 1}),
     "integrand": _p(_FIELD, {"name": "gaussian-bump", "height": 1.0, "width": 1.0}),
     "constant": _p(_NUM, 0.7), "lambdas": _p(_sched(), [1, 2, 4]), "p": _p(_POS, 2.0), "q": _p(_POS, 4.0),
     "paths": _p(_INT, 4000), "steps": _p(_INT, 256), "horizon": _p(_POS, 1.0), "x0": _p(_NUM, 0.0)},
    {"constant_rel_error": "relative error of the f = c case", "envelope_constant": "fitted C",
     "envelope_finite": "C is finite"},
    _khasminskii, ("drift", "diffusion", "integrand"),
)


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("singsde").joinpath("configs", f"{name}.yaml")))


def load_config(source) -> dict:
    """Read a YAML config from a path, or a bundled scenario by name."""
    path = Path(source)
    if not path.exists():
        bundled = bundled_config_path(str(source))
        if not bundled.exists():
            raise ConfigError(f"no config file or bundled scenario named {source!r}")
        path = bundled
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _floatify(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _floatify(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_floatify(x) for x in v]
    if isinstance(v, float):
        return float(v)
    return v


def validate_config(cfg: dict) -> dict:
    """Check ``cfg`` and return it with scenario defaults filled in."""
    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    name = cfg["scenario"]
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(sorted(SCENARIOS))}")
    sc = SCENARIOS[name]
    params = {**copy.deepcopy(sc.params_schema["defaults"]), **(cfg.get("params") or {})}
    try:
        jsonschema.validate(params, sc.params_schema["schema"])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "params"
        raise ConfigError(f"params/{where}: {exc.message}") from None
    for key in sc.field_keys:
        spec = params[key]
        try:
            build_field(spec)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"params/{key}: {exc}") from None
    ids = [a["id"] for a in cfg["assertions"]]
    if len(set(ids)) != len(ids):
        raise ConfigError("assertion ids must be unique")
    for a in cfg["assertions"]:
        if a["metric"] not in sc.metrics:
            raise ConfigError(f"assertion {a['id']!r}: scenario {name!r} has no metric {a['metric']!r}")
        if not any(k in a for k in ("min", "max", "equals")):
            raise ConfigError(f"assertion {a['id']!r} needs min, max or equals")
    out = dict(cfg)
    out["params"] = _floatify(params)
    return out


def _check(a: dict, value) -> bool:
    if "equals" in a:
        target = a["equals"]
        if isinstance(target, bool) or isinstance(value, bool):
            return bool(value) == bool(target)
        return math.isclose(float(value), float(target), abs_tol=a.get("abs_tol", 0.0), rel_tol=0.0)
    v = float(value)
    if not math.isfinite(v):
        return False
    return ("min" not in a or v >= a["min"]) and ("max" not in a or v <= a["max"])


def run_config(cfg: dict, out_dir=None, workers: int | None = None, seed: int | None = None,
               dat: bool = False) -> RunResult:
    """Validate, execute and (if ``out_dir``) write ``<report>.csv/.json`` plus ``summary.json``."""
    cfg = validate_config(cfg)
    env_seed = os.environ.get("SINGSDE_SEED")
    if seed is None and env_seed:
        seed = int(env_seed)
    seed = int(cfg["seed"] if seed is None else seed)
    if not 0 <= seed <= SEED_MAX:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if workers is None:
        workers = cfg.get("workers")
    sc = SCENARIOS[cfg["scenario"]]
    reports, metrics = sc.runner(cfg["params"], RngStream(seed, sc.name), workers)
    results = []
    for a in cfg["assertions"]:
        value = metrics[a["metric"]]
        ok = _check(a, value)
        results.append({**a, "value": value, "passed": ok})
    res = RunResult(sc.name, seed, metrics, results, reports)
    target = out_dir if out_dir is not None else cfg.get("output")
    if target is not None:
        write_outputs(res, cfg, Path(target), dat)
    return res


def write_outputs(res: RunResult, cfg: dict, out: Path, dat: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in res.reports.items():
        rep.to_csv(out / f"{name}.csv")
        rep.to_json(out / f"{name}.json")
        if dat and hasattr(rep, "to_dat"):
            rep.to_dat(out / f"{name}.dat")
    summary = {
        "scenario": res.scenario,
        "anchor": SCENARIOS[res.scenario].anchor,
        "seed": res.seed,
        "params": cfg["params"],
        "metrics": res.metrics,
        "assertions": res.assertions,
        "passed": res.passed,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
