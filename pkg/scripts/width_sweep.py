"""Residual-vs-width sweep for one or more block layouts.

    python scripts/width_sweep.py --out results/sweep
    python scripts/width_sweep.py --layouts 2,2 2,2,2 3,3 --seeds 4
"""
import argparse
from pathlib import Path

from bnnpoly.harness import SweepConfig, emit_report, run_width_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--layouts", nargs="+", default=["2,2"], help="block depths, e.g. 2,2,2")
    p.add_argument("--widths", default="64,128,256,512,1024,2048,4096")
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--directions", type=int, default=4)
    p.add_argument("--d", type=int, default=2, help="input dimension")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/sweep")
    args = p.parse_args()

    widths = tuple(int(v) for v in args.widths.split(","))
    for layout in args.layouts:
        depths = tuple(int(v) for v in layout.split(","))
        cfg = SweepConfig(widths=widths, seeds=args.seeds, directions=args.directions,
                          depths=depths, dims=(args.d,) + (1,) * len(depths),
                          master_seed=args.seed)
        rep = run_width_sweep(cfg, jobs=args.jobs)
        stem = "sweep_" + "-".join(map(str, depths))
        emit_report(rep, Path(args.out), stem)
        s = rep.summary["slope"]
        print(f"{layout:>8}: slope {s['value']:+.3f} +/- {s['stderr']:.3f}  "
              f"{'pass' if rep.passed else 'FAIL'}")
        for m, v in rep.summary["per_m"].items():
            print(f"{'':10}m={m:>5}  max {v['max']:.3e}  median {v['median']:.3e}  "
                  f"full-degree {v['full_max']:.1e}")


if __name__ == "__main__":
    main()
