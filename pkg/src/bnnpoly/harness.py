"""Experiment drivers: width sweeps, perturbation curves, Hessian scans,
the bound suite, and report emission.

Work is split into independent (m, seed) tasks whose seeds are derived from
the master seed, so results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bounds import (LOWER, UPPER, BoundReport, bound_deriv_B_lower, bound_deriv_Bplus1,
                     bound_H_lower, bound_hessian_offdiag, bound_p_derivative, bound_R3,
                     bound_u_b_lower, bound_wnn_output, tail_bound_check,
                     witness_direction_theoremB, witness_vector_theorem1)
from .deriv import (SubstitutionOperator, ascent_direction, cross_hessian_norm,
                    hessian_block_norm, poly_expand, surrogate_coefficients)
from .network import (NetworkSpec, WeightSet, forward_along, forward_bnn, init_weights,
                      sample_direction)
from .tensor import spectral_norm_power

DIRECTION_KINDS = ("ascent", "gaussian")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def derive_seed(*keys: int) -> int:
    """64-bit seed from a key path such as (master, m, seed_index, direction)."""
    # the length prefix keeps (a, b) and (a, b, 0) apart; SeedSequence drops trailing zeros
    ss = np.random.SeedSequence([len(keys)] + [int(k) & (2**64 - 1) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def unit_input(d: int, norm: float = 1.0) -> np.ndarray:
    x = np.zeros(d)
    x[0] = norm
    return x


def pmap(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Order-preserving map, optionally over a process pool."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def make_direction(kind: str, w0: WeightSet, x, degree: int, seed: int, radius: float,
                   sweeps: int = 3):
    if kind == "gaussian":
        return sample_direction(w0.spec, seed, radius)
    if kind == "ascent":
        return ascent_direction(w0, x, degree, seed, radius, sweeps=sweeps)
    raise ConfigError(f"direction kind must be one of {DIRECTION_KINDS}")


def _check_common(widths, seeds, radius, dims, depths, kind):
    if list(widths) != sorted(set(widths)) or min(widths) < 1:
        raise ConfigError("widths must be positive and strictly increasing")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    if radius < 0:
        raise ConfigError("radius must be >= 0")
    if len(dims) != len(depths) + 1:
        raise ConfigError("dims must list d_0..d_B")
    if kind not in DIRECTION_KINDS:
        raise ConfigError(f"direction kind must be one of {DIRECTION_KINDS}")


# -- width sweep -------------------------------------------------------------------


@dataclass
class SweepConfig:
    widths: tuple[int, ...] = (64, 128, 256, 512, 1024, 2048, 4096)
    seeds: int = 8
    radius: float = 1.0
    depths: tuple[int, ...] = (2, 2)
    dims: tuple[int, ...] = (2, 1, 1)
    activation: str = "identity"
    jet_degree: int | None = None      # None: the block count B
    directions: int = 4
    t_points: int = 41
    t_max: float = 1.0
    x_norm: float = 1.0
    direction_kind: str = "ascent"
    ascent_sweeps: int = 3
    slope_band: tuple[float, float] = (-0.65, -0.35)
    master_seed: int = 0

    def validate(self):
        _check_common(self.widths, self.seeds, self.radius, self.dims, self.depths,
                      self.direction_kind)
        if self.activation != "identity":
            raise ConfigError("width sweeps need the identity activation")
        if len(self.widths) < 4:
            raise ConfigError("slope fit needs at least 4 widths")
        if self.directions < 1 or self.t_points < 2:
            raise ConfigError("need >= 1 direction and >= 2 t points")
        if not 0 <= self.degree <= sum(self.depths):
            raise ConfigError("jet degree must lie in [0, P]")

    @property
    def degree(self) -> int:
        return len(self.depths) if self.jet_degree is None else self.jet_degree

    def spec(self, m: int) -> NetworkSpec:
        return NetworkSpec(self.depths, self.dims, m, self.activation)


SWEEP_COLUMNS = ("m", "seed", "direction", "max_residual_jet", "max_residual_surrogate",
                 "max_residual_full", "surrogate_vs_jet", "coeff_Bplus1", "delta_norm")


def _sweep_task(args) -> list[dict]:
    cfg, m, s = args
    spec = cfg.spec(m)
    w0 = init_weights(spec, derive_seed(cfg.master_seed, m, s))
    x = unit_input(spec.widths[0], cfg.x_norm)
    ts = np.linspace(-cfg.t_max, cfg.t_max, cfg.t_points)
    n = cfg.degree
    # aim at the first neglected coefficient when one exists
    target = n + 1 if n < spec.P else n
    out = []
    for j in range(cfg.directions):
        delta = make_direction(cfg.direction_kind, w0, x, max(target, 1),
                               derive_seed(cfg.master_seed, m, s, j), cfg.radius,
                               cfg.ascent_sweeps)
        curve = poly_expand(w0, delta, x)
        # differences from the base point cancel its rounding; a zero direction is constant
        if delta.total_norm() == 0:
            fwd = np.zeros_like(ts)
        else:
            g = forward_along(w0, delta, x, np.append(ts, 0.0))[:, 0]
            fwd = g[:-1] - g[-1]
        P = np.polynomial.polynomial
        sur = surrogate_coefficients(curve)
        lead = curve.coeffs[spec.B + 1] if spec.B + 1 <= spec.P else 0.0

        def resid(c):
            return float(np.max(np.abs(fwd - (P.polyval(ts, c) - c[0]))))

        out.append({
            "m": m, "seed": s, "direction": j,
            "max_residual_jet": resid(curve.coeffs[:n + 1]),
            "max_residual_surrogate": resid(sur),
            "max_residual_full": resid(curve.coeffs),
            "surrogate_vs_jet": float(np.max(np.abs(
                P.polyval(ts, sur) - P.polyval(ts, curve.coeffs[:spec.B + 1])))),
            "coeff_Bplus1": float(lead),
            "delta_norm": delta.total_norm(),
        })
    return out


def fit_slope(ms, values) -> tuple[float, float]:
    """Least-squares slope of log(values) on log(ms) and its standard error."""
    lx, ly = np.log(np.asarray(ms, float)), np.asarray(values, float)
    if np.any(ly <= 0):
        return math.nan, math.nan
    ly = np.log(ly)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = len(lx) - 2
    if dof <= 0:
        return float(coef[0]), math.nan
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    return float(coef[0]), se


def monotone_violations(medians: Sequence[float]) -> int:
    """Count adjacent increases in a sequence that should not increase."""
    return int(sum(b > a for a, b in zip(medians, medians[1:])))


@dataclass
class Report:
    kind: str
    config: dict
    columns: tuple[str, ...]
    rows: list[dict]
    summary: dict
    passed: bool
    master_seed: int = 0

    def to_json(self) -> dict:
        return _clean({"kind": self.kind, "config": self.config, "master_seed": self.master_seed,
                       "passed": self.passed, "versions": versions(), **self.summary})


def versions() -> dict:
    return {"bnnpoly": __version__, "numpy": np.__version__}


def _clean(obj):
    # strict JSON: NaN/inf become null, tuples become lists
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _config_dict(cfg) -> dict:
    return _clean(asdict(cfg))


def run_width_sweep(cfg: SweepConfig, jobs: int = 1) -> Report:
    cfg.validate()
    tasks = [(cfg, m, s) for m in cfg.widths for s in range(cfg.seeds)]
    rows = [r for chunk in pmap(_sweep_task, tasks, jobs) for r in chunk]
    per_m, maxima, medians = {}, [], []
    for m in cfg.widths:
        sel = [r for r in rows if r["m"] == m]
        jet = np.array([r["max_residual_jet"] for r in sel])
        per_m[str(m)] = {
            "max": float(jet.max()), "median": float(np.median(jet)),
            "surrogate_max": float(max(r["max_residual_surrogate"] for r in sel)),
            "full_max": float(max(r["max_residual_full"] for r in sel)),
            "surrogate_vs_jet_max": float(max(r["surrogate_vs_jet"] for r in sel)),
        }
        maxima.append(per_m[str(m)]["max"])
        medians.append(per_m[str(m)]["median"])
    slope, se = fit_slope(cfg.widths, maxima)
    bounds = _sweep_bounds(cfg, rows)
    lo, hi = cfg.slope_band
    in_band = bool(lo <= slope <= hi)
    inversions = monotone_violations(medians)
    summary = {
        "slope": {"value": slope, "stderr": se, "band": list(cfg.slope_band), "in_band": in_band},
        "per_m": per_m,
        "monotone": {"inversions": inversions, "ok": inversions <= 1},
        "bounds": [b.to_json() for b in bounds],
    }
    passed = in_band and all(b.satisfied for b in bounds)
    return Report("sweep", _config_dict(cfg), SWEEP_COLUMNS, rows, summary, passed,
                  cfg.master_seed)


def _sweep_bounds(cfg: SweepConfig, rows) -> list[BoundReport]:
    out = []
    B = len(cfg.depths)
    third_order = cfg.depths == (2, 2) and cfg.dims[-1] == 1 and cfg.degree == 2
    for m in cfg.widths:
        sel = [r for r in rows if r["m"] == m]
        if third_order:
            d, r = cfg.dims[0], cfg.dims[1]
            out.append(BoundReport(
                "remainder_R3", {"m": m, "r": r, "d": d, "R": cfg.radius, "xnorm": cfg.x_norm},
                bound_R3(m, r, d, cfg.radius, cfg.x_norm),
                max(q["max_residual_jet"] for q in sel), cfg.master_seed, UPPER))
        if B + 1 <= sum(cfg.depths) and cfg.radius > 0:
            emp = max(math.factorial(B + 1) * abs(q["coeff_Bplus1"]) / q["delta_norm"] ** (B + 1)
                      for q in sel)
            out.append(BoundReport(
                "deriv_Bplus1", {"m": m, "R": cfg.radius, "B": B, "d_list": list(cfg.dims[1:-1]),
                                 "xnorm": cfg.x_norm},
                bound_deriv_Bplus1(m, cfg.radius, B, cfg.dims[1:-1], cfg.x_norm),
                emp, cfg.master_seed, UPPER))
    return out


# -- perturbation curves -------------------------------------------------------------


@dataclass
class CurveConfig:
    m: int = 4096
    seeds: int = 1
    directions: int = 5
    radius: float = 1.0
    dims: tuple[int, ...] = (1, 1, 1)
    t_points: int = 61
    t_max: float = 3.0
    x_norm: float = 1.0
    direction_kind: str = "ascent"
    ascent_sweeps: int = 3
    jet_degree: int | None = None     # a jet request is meaningless for tanh
    include_tanh: bool = True
    master_seed: int = 0

    def validate(self):
        _check_common((self.m,), self.seeds, self.radius, self.dims, (2, 2), self.direction_kind)
        if self.t_points < 2:
            raise ConfigError("t grid needs at least 2 points")
        if self.directions < 1:
            raise ConfigError("directions must be >= 1")
        if self.jet_degree is not None and self.include_tanh:
            raise ConfigError("jets are not defined for the tanh network")
        if self.jet_degree is not None and not 0 <= self.jet_degree <= 4:
            raise ConfigError("jet degree must lie in [0, 4]")


CURVE_COLUMNS = ("curve_id", "t", "value", "activation", "support")
FAMILIES = {"a": ("tanh", "full"), "b": ("identity", "full"),
            "c": ("identity", "block1"), "d": ("identity", "block2")}


def quadratic_fit_residual(ts, values) -> float:
    """Max absolute residual of the least-squares quadratic through the points."""
    coef = np.polynomial.polynomial.polyfit(ts, values, 2)
    return float(np.max(np.abs(values - np.polynomial.polynomial.polyval(ts, coef))))


def affine_deviation(ts, values) -> float:
    """Max distance from the line through the two end points."""
    line = values[0] + (values[-1] - values[0]) * (ts - ts[0]) / (ts[-1] - ts[0])
    return float(np.max(np.abs(values - line)))


def _curve_task(args):
    cfg, s = args
    spec = NetworkSpec((2, 2), cfg.dims, cfg.m)
    w0 = init_weights(spec, derive_seed(cfg.master_seed, cfg.m, s))
    wt = w0.with_spec(spec.with_activation("tanh"))
    x = unit_input(spec.widths[0], cfg.x_norm)
    ts = np.linspace(-cfg.t_max, cfg.t_max, cfg.t_points)
    rows, metrics = [], []
    for j in range(cfg.directions):
        delta = make_direction(cfg.direction_kind, w0, x, spec.B,
                               derive_seed(cfg.master_seed, cfg.m, s, j), cfg.radius,
                               cfg.ascent_sweeps)
        parts = {"full": delta, "block1": delta.restrict_blocks([0]),
                 "block2": delta.restrict_blocks([1])}
        vals = {}
        for fam, (act, support) in FAMILIES.items():
            if act == "tanh" and not cfg.include_tanh:
                continue
            base = wt if act == "tanh" else w0
            v = forward_along(base, parts[support], x, ts)[:, 0]
            vals[fam] = v
            cid = f"{fam}-s{s}-d{j}"
            rows += [{"curve_id": cid, "t": float(t), "value": float(y), "activation": act,
                      "support": support} for t, y in zip(ts, v)]
        curve = poly_expand(w0, delta, x)
        c = curve.coeffs
        if cfg.jet_degree is not None:
            jet = np.polynomial.polynomial.polyval(ts, c[:cfg.jet_degree + 1])
            rows += [{"curve_id": f"j-s{s}-d{j}", "t": float(t), "value": float(y),
                      "activation": "identity", "support": f"jet{cfg.jet_degree}"}
                     for t, y in zip(ts, jet)]
        scale = float(np.max(np.abs(vals["b"]))) or 1.0
        full_dev = affine_deviation(ts, vals["b"])
        # exact affinity: single-slot network curves and block-supported surrogate curves
        slot_dev = max(affine_deviation(ts, forward_along(w0, delta.restrict([sl]), x, ts)[:, 0])
                       for sl in spec.slots)
        sur_dev = max(affine_deviation(ts, np.polynomial.polynomial.polyval(
            ts, surrogate_coefficients(poly_expand(w0, parts[p], x)))) for p in ("block1", "block2"))
        rec = {
            "seed": s, "direction": j,
            "coeff_ratio": float((abs(c[3]) + abs(c[4])) / (abs(c[0]) + abs(c[1]) + abs(c[2]))),
            "affine_block1": affine_deviation(ts, vals["c"]) / full_dev,
            "affine_block2": affine_deviation(ts, vals["d"]) / full_dev,
            "affine_slot": slot_dev / scale,
            "affine_surrogate_block": sur_dev / scale,
            "quad_resid_identity": quadratic_fit_residual(ts, vals["b"]),
        }
        if "a" in vals:
            rec["quad_resid_tanh"] = quadratic_fit_residual(ts, vals["a"])
            rec["tanh_ratio"] = rec["quad_resid_tanh"] / rec["quad_resid_identity"]
        metrics.append(rec)
    return rows, metrics


def run_perturbation_curves(cfg: CurveConfig, jobs: int = 1, coeff_limit: float = 0.05,
                            affine_tol: float = 1e-10, block_curvature: float = 0.05,
                            tanh_factor: float = 10.0) -> Report:
    """Figure-style curves plus the checks that make them quantitative.

    Block-supported network curves are affine only as m grows (two slots of
    one block still multiply), so they are judged relative to the curvature
    of the full-direction curve.  Exact affinity is checked on single-slot
    curves and on the surrogate.
    """
    cfg.validate()
    results = pmap(_curve_task, [(cfg, s) for s in range(cfg.seeds)], jobs)
    rows = [r for res in results for r in res[0]]
    metrics = [q for res in results for q in res[1]]
    ratio = max(q["coeff_ratio"] for q in metrics)
    block = max(max(q["affine_block1"], q["affine_block2"]) for q in metrics)
    exact = max(max(q["affine_slot"], q["affine_surrogate_block"]) for q in metrics)
    summary = {
        "per_curve": metrics,
        "coeff_ratio_max": ratio, "coeff_ratio_ok": ratio <= coeff_limit,
        "affine_block_max": block, "affine_block_ok": block <= block_curvature,
        "affine_exact_max": exact, "affine_exact_ok": exact < affine_tol,
    }
    passed = summary["coeff_ratio_ok"] and summary["affine_block_ok"] and summary["affine_exact_ok"]
    if cfg.include_tanh:
        low = min(q["tanh_ratio"] for q in metrics)
        summary.update({"tanh_ratio_min": low, "tanh_contrast_ok": low > tanh_factor})
        passed = passed and summary["tanh_contrast_ok"]
    return Report("curves", _config_dict(cfg), CURVE_COLUMNS, rows, summary, bool(passed),
                  cfg.master_seed)


# -- Hessian scan ---------------------------------------------------------------------


@dataclass
class HessianConfig:
    widths: tuple[int, ...] = (256, 512, 1024)
    seeds: int = 20
    d: int = 1
    r: int = 1
    x_norm: float = 1.0
    restarts: int = 2
    within_rate: float = 0.90
    within_min_m: int = 512
    cross_rate: float = 0.95
    cross_min_m: int = 256
    master_seed: int = 0

    def validate(self):
        _check_common(self.widths, self.seeds, 1.0, (self.d, self.r, 1), (2, 2), "ascent")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")


HESSIAN_COLUMNS = ("m", "seed", "block", "kind", "value", "closed_form")


def _hessian_task(args):
    cfg, m, s = args
    spec = NetworkSpec((2, 2), (cfg.d, cfg.r, 1), m)
    w0 = init_weights(spec, derive_seed(cfg.master_seed, m, s))
    x = unit_input(cfg.d, cfg.x_norm)
    rows = []
    slots = spec.slots
    seed = derive_seed(cfg.master_seed, m, s, 7)
    for i, a in enumerate(slots):
        for b in slots[i:]:
            kind = "same" if a == b else ("within" if a[0] == b[0] else "cross")
            bn = hessian_block_norm(w0, x, a, b, restarts=cfg.restarts, seed=seed)
            rows.append({"m": m, "seed": s, "block": f"{a[0]}{a[1]}-{b[0]}{b[1]}", "kind": kind,
                         "value": bn.value, "closed_form": bn.closed_form})
    h = cross_hessian_norm(w0, x, restarts=cfg.restarts, seed=seed)
    wit = witness_vector_theorem1(w0, x)
    rows.append({"m": m, "seed": s, "block": "H_init", "kind": "cross_full", "value": h.value,
                 "closed_form": None})
    rows.append({"m": m, "seed": s, "block": "witness", "kind": "witness", "value": wit.value,
                 "closed_form": wit.closed_form})
    return rows


def run_hessian_scan(cfg: HessianConfig, jobs: int = 1) -> Report:
    cfg.validate()
    tasks = [(cfg, m, s) for m in cfg.widths for s in range(cfg.seeds)]
    rows = [r for chunk in pmap(_hessian_task, tasks, jobs) for r in chunk]
    per_m, reports = {}, []
    ok = True
    for m in cfg.widths:
        sel = [r for r in rows if r["m"] == m]
        upper = bound_hessian_offdiag(m, cfg.d, cfg.x_norm)
        lower = bound_H_lower(cfg.r, cfg.d, cfg.x_norm)
        within_ok, cross_ok = [], []
        for s in range(cfg.seeds):
            mine = [r for r in sel if r["seed"] == s]
            wmax = max(r["value"] for r in mine if r["kind"] == "within")
            # both are certified lower estimates of the same norm
            cross = max(r["value"] for r in mine if r["kind"] in ("cross_full", "witness"))
            rep_w = BoundReport("hessian_offdiag", {"m": m, "d": cfg.d, "xnorm": cfg.x_norm},
                                upper, wmax, s, UPPER)
            rep_c = BoundReport("H_lower", {"m": m, "r": cfg.r, "d": cfg.d, "xnorm": cfg.x_norm},
                                lower, cross, s, LOWER)
            reports += [rep_w, rep_c]
            within_ok.append(rep_w.satisfied)
            cross_ok.append(rep_c.satisfied)
        same_zero = all(r["value"] == 0.0 for r in sel if r["kind"] == "same")
        per_m[str(m)] = {"within_rate": float(np.mean(within_ok)),
                         "cross_rate": float(np.mean(cross_ok)), "same_slot_zero": same_zero,
                         "within_bound": upper, "cross_bound": lower}
        ok &= same_zero
        if m >= cfg.within_min_m:
            ok &= per_m[str(m)]["within_rate"] >= cfg.within_rate
        if m >= cfg.cross_min_m:
            ok &= per_m[str(m)]["cross_rate"] >= cfg.cross_rate
    summary = {"per_m": per_m, "bounds": [b.to_json() for b in reports]}
    return Report("hessian", _config_dict(cfg), HESSIAN_COLUMNS, rows, summary, bool(ok),
                  cfg.master_seed)


# -- bound suite ----------------------------------------------------------------------


BOUND_NAMES = ("remainder_R3", "hessian_offdiag", "H_lower", "deriv_Bplus1", "deriv_B_lower",
               "u_b_lower", "wnn_output", "p_derivative",
               "tail_gaussian", "tail_chi2", "tail_matrix")


@dataclass
class VerifyConfig:
    widths: tuple[int, ...] = (256, 512)
    seeds: int = 200
    radius: float = 1.0
    d: int = 2
    r: int = 1
    x_norm: float = 1.0
    lower_depths: tuple[int, ...] = (2, 2, 2)
    wnn_depth: int = 3
    wnn_outputs: int = 1
    t_points: int = 21
    restarts: int = 2
    rate: float = 0.95
    offdiag_rate: float = 0.90
    tail_trials: int = 10000
    master_seed: int = 0

    def validate(self):
        _check_common(self.widths, self.seeds, self.radius, (self.d, self.r, 1), (2, 2), "ascent")
        if self.tail_trials < 1:
            raise ConfigError("tail_trials must be >= 1")
        if min(self.lower_depths) < 2 or self.wnn_depth < 1:
            raise ConfigError("witness blocks need depth >= 2")


def _bound_task(args) -> list[BoundReport]:
    cfg, m, s = args
    key = (cfg.master_seed, m, s)
    R, xn = cfg.radius, cfg.x_norm
    out = []
    # third-order remainder and (B+1)-th derivative on the one-bottleneck network
    spec = NetworkSpec((2, 2), (cfg.d, cfg.r, 1), m)
    w0 = init_weights(spec, derive_seed(*key))
    x = unit_input(cfg.d, xn)
    ts = np.linspace(-1.0, 1.0, cfg.t_points)
    res, lead = 0.0, 0.0
    for j, kind in enumerate(("gaussian", "ascent")):
        delta = make_direction(kind, w0, x, 3, derive_seed(*key, j), R)
        c = poly_expand(w0, delta, x).coeffs
        fwd = forward_along(w0, delta, x, ts)[:, 0]
        res = max(res, float(np.max(np.abs(fwd - np.polynomial.polynomial.polyval(ts, c[:3])))))
        if R > 0:
            lead = max(lead, 6 * abs(c[3]) / delta.total_norm() ** 3)
    out.append(BoundReport("remainder_R3", {"m": m, "r": cfg.r, "d": cfg.d, "R": R, "xnorm": xn},
                           bound_R3(m, cfg.r, cfg.d, R, xn), res, s, UPPER))
    out.append(BoundReport("deriv_Bplus1", {"m": m, "R": R, "B": 2, "d_list": [cfg.r],
                                            "xnorm": xn},
                           bound_deriv_Bplus1(m, R, 2, [cfg.r], xn), lead, s, UPPER))
    # within-block and cross-block Hessian structure at initialization
    wmax = max(hessian_block_norm(w0, x, a, b, restarts=cfg.restarts, seed=s).value
               for a, b in (((0, 0), (0, 1)), ((1, 0), (1, 1))))
    out.append(BoundReport("hessian_offdiag", {"m": m, "d": cfg.d, "xnorm": xn},
                           bound_hessian_offdiag(m, cfg.d, xn), wmax, s, UPPER))
    wit = witness_vector_theorem1(w0, x)
    out.append(BoundReport("H_lower", {"m": m, "r": cfg.r, "d": cfg.d, "xnorm": xn},
                           bound_H_lower(cfg.r, cfg.d, xn), wit.value, s, LOWER))
    # B-th derivative witness and the hidden vectors it is built from
    B = len(cfg.lower_depths)
    dims = (cfg.d,) + (1,) * B
    specB = NetworkSpec(cfg.lower_depths, dims, m)
    wB = init_weights(specB, derive_seed(*key, 101))
    witB = witness_direction_theoremB(wB, unit_input(cfg.d, xn))
    out.append(BoundReport("deriv_B_lower", {"m": m, "B": B, "L_list": list(cfg.lower_depths),
                                             "d_list": list(dims[:-1]), "xnorm": xn},
                           bound_deriv_B_lower(B, cfg.lower_depths, dims[:-1], xn),
                           abs(witB.value), s, LOWER))
    for b, (n, L, dp) in enumerate(zip(witB.u_norms, cfg.lower_depths, dims[:-1])):
        out.append(BoundReport("u_b_lower", {"m": m, "b": b, "L_b": L, "d_prev": dp},
                               bound_u_b_lower(m, L, dp), float(n), s, LOWER))
    # single wide block inside the ball
    L, c = cfg.wnn_depth, cfg.wnn_outputs
    specW = NetworkSpec((L,), (cfg.d, c), m)
    wW = init_weights(specW, derive_seed(*key, 202))
    wb = wW.add(sample_direction(specW, derive_seed(*key, 203), R))
    out.append(BoundReport("wnn_output", {"L": L, "m": m, "R": R, "c": c, "d": cfg.d, "xnorm": xn},
                           bound_wnn_output(L, m, R, c, cfg.d, xn),
                           float(np.linalg.norm(forward_bnn(wb, x))), s, UPPER))
    if c == 1:
        op = SubstitutionOperator(wb, x, [(0, 0), (0, L - 1)] if L > 1 else [(0, 0)])
        p = len(op.slots)
        est = spectral_norm_power(op, restarts=cfg.restarts, tol=1e-8, max_iters=200, seed=s)
        out.append(BoundReport("p_derivative", {"L": L, "p": p, "m": m, "R": R, "d": cfg.d,
                                                "xnorm": xn},
                               bound_p_derivative(L, p, m, R, cfg.d, xn), est.value, s, UPPER))
    return out


RATE_REQUIRED = {"remainder_R3": "rate", "deriv_Bplus1": "rate", "hessian_offdiag": "offdiag_rate",
                 "H_lower": "rate", "deriv_B_lower": "rate", "u_b_lower": "rate",
                 "wnn_output": None, "p_derivative": None}


def run_bound_suite(cfg: VerifyConfig, jobs: int = 1, tails: bool = True) -> Report:
    cfg.validate()
    tasks = [(cfg, m, s) for m in cfg.widths for s in range(cfg.seeds)]
    reports = [b for chunk in pmap(_bound_task, tasks, jobs) for b in chunk]
    rates = {}
    passed = True
    for name, attr in RATE_REQUIRED.items():
        sel = [b for b in reports if b.bound_name == name]
        if not sel:
            continue
        need = 1.0 if attr is None else getattr(cfg, attr)
        rate = float(np.mean([b.satisfied for b in sel]))
        rates[name] = {"rate": rate, "required": need, "ok": rate >= need, "n": len(sel)}
        passed &= rate >= need
    tail_out = []
    if tails:
        specs = [("gaussian", {"sigma": 1.0, "t": 2.0}), ("chi2", {"m": 64, "t": 0.5}),
                 ("matrix", {"N": 256, "n": 64, "t": 16.0})]
        for i, (kind, params) in enumerate(specs):
            tc = tail_bound_check(kind, params, cfg.tail_trials,
                                  seed=derive_seed(cfg.master_seed, 9000 + i))
            tail_out.append(asdict(tc))
            rates[f"tail_{kind}"] = {"rate": tc.empirical, "required": tc.bound + 3 * tc.stderr,
                                     "ok": tc.satisfied, "n": tc.trials}
            passed &= tc.satisfied
    rows = [{"bound_name": b.bound_name, "m": b.params.get("m"), "seed": b.seed,
             "theoretical": b.theoretical, "empirical": b.empirical, "satisfied": b.satisfied}
            for b in reports]
    summary = {"rates": rates, "tails": tail_out, "bounds": [b.to_json() for b in reports]}
    return Report("verify", _config_dict(cfg), BOUND_COLUMNS, rows, summary, bool(passed),
                  cfg.master_seed)


BOUND_COLUMNS = ("bound_name", "m", "seed", "theoretical", "empirical", "satisfied")


# -- report emission --------------------------------------------------------------------


REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["kind", "config", "master_seed", "passed", "versions"],
    "properties": {
        "kind": {"enum": ["sweep", "curves", "hessian", "verify"]},
        "config": {"type": "object"},
        "master_seed": {"type": "integer"},
        "passed": {"type": "boolean"},
        "versions": {"type": "object", "required": ["bnnpoly", "numpy"]},
        "bounds": {"type": "array", "items": {
            "type": "object",
            "required": ["bound_name", "params", "theoretical", "empirical", "satisfied", "seed"],
            "properties": {"bound_name": {"type": "string"}, "params": {"type": "object"},
                           "theoretical": {"type": ["number", "null"]},
                           "empirical": {"type": ["number", "null"]},
                           "satisfied": {"type": "boolean"}, "seed": {"type": "integer"},
                           "kind": {"enum": ["upper", "lower"]}}}},
    },
    "allOf": [{
        "if": {"properties": {"kind": {"const": "sweep"}}},
        "then": {
            "required": ["slope", "per_m", "bounds"],
            "properties": {
                "slope": {"type": "object", "required": ["value", "stderr"],
                          "properties": {"value": {"type": ["number", "null"]},
                                         "stderr": {"type": ["number", "null"]}}},
                "per_m": {"type": "object", "additionalProperties": {
                    "type": "object", "required": ["max", "median"]}},
            }},
    }],
}


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_csv(report: Report) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(report.columns), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for row in report.rows:
        w.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row[k], float)
                        else row[k]) for k in report.columns})
    return buf.getvalue().encode()


def report_json(report: Report) -> bytes:
    return (json.dumps(report.to_json(), sort_keys=True, indent=2, allow_nan=False) + "\n").encode()


def emit_report(report: Report, out_dir, stem: str | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (raw rows) and ``<stem>.json`` (aggregates) atomically."""
    if not report.rows:
        raise ValueError("report has no records; nothing written")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or report.kind
    csv_bytes, json_bytes = report_csv(report), report_json(report)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    _atomic_write(csv_path, csv_bytes)
    _atomic_write(json_path, json_bytes)
    return csv_path, json_path
