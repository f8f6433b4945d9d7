"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""
import time

import numpy as np
import pytest

from bnnpoly.bounds import (bound_deriv_B_lower, bound_H_lower, tail_bound_check,
                            witness_direction_theoremB, witness_vector_theorem1)
from bnnpoly.cli import main
from bnnpoly.deriv import (build_surrogate, gradient_exact, poly_expand, surrogate_eval)
from bnnpoly.harness import (CurveConfig, HessianConfig, SweepConfig, VerifyConfig,
                             derive_seed, run_bound_suite, run_hessian_scan,
                             run_perturbation_curves, run_width_sweep)
from bnnpoly.network import (NetworkSpec, bottleneck_spec, forward_along, forward_scalar,
                             init_weights, sample_direction)
from bnnpoly.tensor import (TensorOperator, block_subadditivity_check, spectral_norm_bruteforce,
                            spectral_norm_power)
from oracles import fd_gradient, vandermonde_coefficients

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def bound_suite():
    return run_bound_suite(VerifyConfig(), tails=False)


def test_c1_residual_scaling(criterion):
    t0 = time.perf_counter()
    rep = run_width_sweep(SweepConfig())
    elapsed = time.perf_counter() - t0
    s = rep.summary["slope"]
    ok = s["in_band"] and elapsed < 300
    criterion(1, ok, f"slope {s['value']:.3f} +/- {s['stderr']:.3f}, {elapsed:.1f}s")
    assert ok


def test_c2_multilinear_degree(criterion):
    details, ok = [], True
    for depths in ((2, 2), (2, 2, 2), (3, 3)):
        cfg = SweepConfig(depths=depths, dims=(2,) + (1,) * len(depths))
        rep = run_width_sweep(cfg)
        slope = rep.summary["slope"]
        full = max(v["full_max"] for v in rep.summary["per_m"].values())
        ok &= slope["in_band"] and full < 1e-9
        details.append(f"{depths}: slope {slope['value']:.3f}, full-degree {full:.1e}")
    criterion(2, ok, "; ".join(details))
    assert ok


def test_c3_hessian_structure(criterion):
    rep = run_hessian_scan(HessianConfig(widths=(512, 1024), seeds=200))
    per = rep.summary["per_m"]
    detail = ", ".join(f"m={m} within {v['within_rate']:.3f} cross {v['cross_rate']:.3f} "
                       f"same-zero {v['same_slot_zero']}" for m, v in per.items())
    criterion(3, rep.passed, detail)
    assert rep.passed


def test_c4_remainder_bound(criterion, bound_suite):
    r = bound_suite.summary["rates"]["remainder_R3"]
    ok = r["rate"] >= 0.95
    criterion(4, ok, f"R3 rate {r['rate']:.3f} over n={r['n']} at m in (256, 512)")
    assert ok


def test_c5_witness_certificates(criterion, bound_suite):
    worst, h_ok, b_ok = 0.0, [], []
    spec_b = NetworkSpec((2, 2, 2), (2, 1, 1, 1), 256)
    for s in range(200):
        x = np.array([1.0, 0.0])
        w1 = witness_vector_theorem1(init_weights(bottleneck_spec(256, d=2), s), x)
        wb = witness_direction_theoremB(init_weights(spec_b, s), x)
        for wit in (w1, wb):
            worst = max(worst, abs(wit.value - wit.closed_form) / abs(wit.closed_form))
        h_ok.append(w1.value >= bound_H_lower(1, 2, 1.0))
        b_ok.append(abs(wb.value) >= bound_deriv_B_lower(3, (2, 2, 2), (2, 1, 1), 1.0))
    rates = bound_suite.summary["rates"]
    ok = (worst < 1e-9 and np.mean(h_ok) >= 0.95 and np.mean(b_ok) >= 0.95
          and rates["H_lower"]["ok"] and rates["deriv_B_lower"]["ok"])
    criterion(5, ok, f"closed-form rel err {worst:.1e}; rates H {np.mean(h_ok):.3f} "
                     f"B {np.mean(b_ok):.3f}; suite H {rates['H_lower']['rate']:.3f} "
                     f"B {rates['deriv_B_lower']['rate']:.3f}")
    assert ok


def _random_spec(rng):
    B = int(rng.integers(1, 4))
    depths = tuple(int(v) for v in rng.integers(1, 4, B))
    dims = tuple(int(v) for v in rng.integers(1, 4, B)) + (1,)
    return NetworkSpec(depths, dims, int(rng.choice([4, 8, 16, 32, 64, 128])))


def test_c6_oracle_equivalences(criterion):
    rng = np.random.default_rng(derive_seed(6))
    vand = 0.0
    for i in range(100):
        spec = _random_spec(rng)
        w0, delta = init_weights(spec, 2 * i), sample_direction(spec, 2 * i + 1, 0.5)
        x = rng.standard_normal(spec.widths[0])
        got = poly_expand(w0, delta, x).coeffs
        ref = vandermonde_coefficients(w0, delta, x, spec.P)
        vand = max(vand, np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
    fd = 0.0
    for i in range(5):
        spec = bottleneck_spec(int(rng.choice([4, 6, 8])), d=2, r=int(rng.integers(1, 3)))
        w0, x = init_weights(spec, 100 + i), rng.standard_normal(2)
        for slot, g in zip(spec.slots, gradient_exact(w0, x)):
            ref = fd_gradient(w0, x, slot)
            fd = max(fd, np.max(np.abs(g - ref)) / max(1.0, np.max(np.abs(ref))))
    power = 0.0
    for i in range(50):
        a = rng.standard_normal((3, 3, 3))
        power = max(power, abs(spectral_norm_power(TensorOperator(a), restarts=8).value
                               - spectral_norm_bruteforce(a)))
    sub_ok = True
    for i in range(100):
        t = rng.standard_normal((3, 3, 3))
        cuts = rng.integers(1, 3, 3)
        labels = sum((np.indices(t.shape)[k] >= cuts[k]) * 2 ** k for k in range(3))
        lhs, rhs = block_subadditivity_check(t, [labels == k for k in range(8)], restarts=8)
        sub_ok &= lhs <= rhs + 1e-9
    ok = vand < 1e-8 and fd < 1e-5 and power < 1e-3 and sub_ok
    criterion(6, ok, f"vandermonde {vand:.1e}, fd {fd:.1e}, power-vs-brute {power:.1e}, "
                     f"subadditivity {'ok' if sub_ok else 'violated'}")
    assert ok


def test_c7_exactness(criterion):
    rng = np.random.default_rng(derive_seed(7))
    ts = np.linspace(-2, 2, 9)
    affine = homog = 0.0
    zero_ok = True
    for i in range(50):
        spec = _random_spec(rng)
        w0, delta = init_weights(spec, i), sample_direction(spec, 1000 + i)
        x = rng.standard_normal(spec.widths[0])
        for slot in spec.slots:
            v = forward_along(w0, delta.restrict([slot]), x, ts)[:, 0]
            line = v[0] + (v[-1] - v[0]) * (ts - ts[0]) / (ts[-1] - ts[0])
            affine = max(affine, np.max(np.abs(v - line)) / max(np.max(np.abs(v)), 1e-300))
        c = float(rng.uniform(0.3, 2.0))
        g, gc = forward_scalar(w0, x), forward_scalar(w0.scale(c), x)
        homog = max(homog, abs(gc - c ** spec.P * g) / max(abs(gc), 1e-300))
        z = np.zeros(spec.widths[0])
        zero_ok &= forward_scalar(w0, z) == 0.0
        zero_ok &= not np.any(poly_expand(w0, delta, z).coeffs)
        sur = build_surrogate(w0, z, spec.B)
        zero_ok &= surrogate_eval(sur, w0.add(delta), z) == 0.0
    spec = bottleneck_spec(32, d=2)
    w0 = init_weights(spec, 0)
    zero_ok &= all(not np.any(g) for g in gradient_exact(w0, np.zeros(2)))
    zero_ok &= witness_vector_theorem1(w0, np.zeros(2)).value == 0.0
    ok = affine < 1e-10 and homog < 1e-10 and zero_ok
    criterion(7, ok, f"single-slot affine {affine:.1e}, homogeneity {homog:.1e}, "
                     f"zero input {'ok' if zero_ok else 'nonzero'}")
    assert ok


def test_c8_figure_properties(criterion):
    rep = run_perturbation_curves(CurveConfig(m=4096, seeds=20))
    s = rep.summary
    criterion(8, rep.passed,
              f"coeff ratio {s['coeff_ratio_max']:.1e}, block curvature {s['affine_block_max']:.1e}, "
              f"exact affine {s['affine_exact_max']:.1e}, tanh/identity {s['tanh_ratio_min']:.1f}")
    assert rep.passed


def test_c9_tail_bounds(criterion):
    checks = [("gaussian", {"sigma": 1.0, "t": 2.0}), ("gaussian", {"sigma": 0.5, "t": 1.5}),
              ("chi2", {"m": 64, "t": 0.5}), ("chi2", {"m": 256, "t": 0.25}),
              ("matrix", {"N": 256, "n": 64, "t": 16.0})]
    parts, ok = [], True
    for i, (kind, params) in enumerate(checks):
        tc = tail_bound_check(kind, params, 10_000, seed=derive_seed(9, i))
        ok &= tc.satisfied
        parts.append(f"{kind} {tc.empirical:.4f}<={tc.bound:.3g}")
    criterion(9, ok, ", ".join(parts))
    assert ok


def test_c10_determinism(criterion, tmp_path):
    runs = {
        "sweep": ["--set", "widths=32,64,128,256", "--set", "seeds=3"],
        "perturb": ["--set", "m=512", "--set", "seeds=2", "--set", "directions=2"],
        "hessian": ["--set", "widths=64,128", "--set", "seeds=4"],
        "verify": ["--set", "widths=64", "--set", "seeds=4", "--set", "tail_trials=500"],
    }
    ok, compared = True, 0
    for cmd, extra in runs.items():
        outs = []
        for tag, jobs in (("a", "1"), ("b", "1"), ("c", "2"), ("d", "3")):
            out = tmp_path / f"{cmd}-{tag}"
            assert main([cmd, *extra, "--jobs", jobs, "--seed", "11", "--out", str(out)]) in (0, 1)
            outs.append(out)
        for f in sorted(p.name for p in outs[0].iterdir() if not p.name.endswith(".log.json")):
            ref = (outs[0] / f).read_bytes()
            ok &= all((o / f).read_bytes() == ref for o in outs[1:])
            compared += 1
    criterion(10, ok, f"{compared} report files byte-identical across repeats and jobs 1/2/3")
    assert ok
