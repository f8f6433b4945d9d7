"""bnnpoly command line.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import resolve
from .harness import (BOUND_NAMES, ConfigError, emit_report, run_bound_suite, run_hessian_scan,
                      run_perturbation_curves, run_width_sweep)
from .network import NetworkSpec, forward_bnn, init_weights, load_weights, save_weights
from .tensor import DimensionError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("bnnpoly")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _write_log(out: Path, name: str, cfg, run: dict, argv):
    # timestamps live only here so the report files stay byte-reproducible
    out.mkdir(parents=True, exist_ok=True)
    meta = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "argv": list(argv), "version": __version__, "resolved_config": asdict(cfg),
            "run": run}
    (out / f"{name}.log.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _experiment(section: str, runner, stem: str, args):
    cfg, run = resolve(section, args.config, args.preset, args.set, args.seed)
    out = Path(args.out or run.get("out", "results"))
    jobs = args.jobs if args.jobs is not None else int(run.get("jobs", 1))
    if jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    log.info("resolved %s config: %s", section, asdict(cfg))
    _write_log(out, stem, cfg, run, args.argv)
    report = runner(cfg, jobs=jobs)
    csv_path, json_path = emit_report(report, out, stem)
    print(f"wrote {csv_path} and {json_path}")
    return report


def cmd_sweep(args) -> int:
    report = _experiment("sweep", run_width_sweep, "sweep", args)
    slope = report.summary["slope"]
    print(f"slope {slope['value']:.4f} +/- {slope['stderr']:.4f} "
          f"(band {slope['band'][0]}..{slope['band'][1]})")
    for b in report.summary["bounds"]:
        if not b["satisfied"]:
            print(f"FAIL {b['bound_name']} m={b['params'].get('m')}: "
                  f"{b['empirical']:.4g} vs {b['theoretical']:.4g}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_perturb(args) -> int:
    if args.jet is not None:
        args.set = list(args.set) + [f"curves.jet_degree={args.jet}"]
    report = _experiment("curves", run_perturbation_curves, "curves", args)
    s = report.summary
    for key in ("coeff_ratio_ok", "affine_block_ok", "affine_exact_ok", "tanh_contrast_ok"):
        if key in s:
            print(f"{key}: {s[key]}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_hessian(args) -> int:
    report = _experiment("hessian", run_hessian_scan, "hessian", args)
    for m, row in report.summary["per_m"].items():
        print(f"m={m} within {row['within_rate']:.3f} cross {row['cross_rate']:.3f} "
              f"same-slot zero {row['same_slot_zero']}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    if args.list:
        for name in BOUND_NAMES:
            print(name)
        return EXIT_OK
    report = _experiment("verify", run_bound_suite, "verify", args)
    for name, r in report.summary["rates"].items():
        status = "pass" if r["ok"] else "FAIL"
        print(f"{status} {name}: rate {r['rate']:.4g} (required {r['required']:.4g}, n={r['n']})")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_init_dump(args) -> int:
    depths = _ints(args.depths)
    spec = NetworkSpec(depths, _ints(args.dims), args.m, args.activation)
    seed = 0 if args.seed is None else args.seed
    path, side = save_weights(init_weights(spec, seed), args.output, seed=seed)
    print(f"wrote {path} and {side}")
    return EXIT_OK


def cmd_eval(args) -> int:
    w = load_weights(args.weights)
    x = np.array(_floats(args.x)) if args.x else np.ones(w.spec.widths[0])
    out = forward_bnn(w, x)
    print(" ".join(repr(float(v)) for v in out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a config key (section.key=value or key=value)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--preset", help="named preset")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="bnnpoly", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"bnnpoly {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="width sweep of jet residuals"
                   ).set_defaults(func=cmd_sweep)
    sp = sub.add_parser("perturb", parents=[common], help="curves along 1D weight subspaces")
    sp.add_argument("--jet", type=int, help="also emit the jet of this degree")
    sp.set_defaults(func=cmd_perturb)
    sub.add_parser("hessian", parents=[common], help="Hessian block-norm scan"
                   ).set_defaults(func=cmd_hessian)
    sp = sub.add_parser("verify", parents=[common], help="bound suite and tail checks")
    sp.add_argument("--list", action="store_true", help="print bound names and exit")
    sp.set_defaults(func=cmd_verify)
    sp = sub.add_parser("init-dump", parents=[common], help="write initialized weights")
    sp.add_argument("output", help="container path (sidecar gets .json)")
    sp.add_argument("--m", type=int, default=64)
    sp.add_argument("--depths", default="2,2")
    sp.add_argument("--dims", default="1,1,1")
    sp.add_argument("--activation", default="identity")
    sp.set_defaults(func=cmd_init_dump)
    sp = sub.add_parser("eval", parents=[common], help="evaluate a weight container")
    sp.add_argument("weights")
    sp.add_argument("--x", help="comma-separated input (default all ones)")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DimensionError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
