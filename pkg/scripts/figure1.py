"""Perturbation curves along 1D weight subspaces, plus an optional plot.

    python scripts/figure1.py --m 4096 --out results/curves
    python scripts/figure1.py --m 10000 --plot      # needs matplotlib
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

from bnnpoly.harness import CurveConfig, emit_report, run_perturbation_curves

LABELS = {"a": "tanh, all slots", "b": "identity, all slots",
          "c": "identity, block 1", "d": "identity, block 2"}


def plot(csv_path: Path, png: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = defaultdict(lambda: ([], []))
    with csv_path.open() as fh:
        for row in csv.DictReader(fh):
            ts, vs = curves[row["curve_id"]]
            ts.append(float(row["t"]))
            vs.append(float(row["value"]))
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.5), sharex=True)
    for ax, fam in zip(axes, "abcd"):
        for cid, (ts, vs) in curves.items():
            if cid.startswith(fam + "-"):
                ax.plot(ts, vs, lw=1)
        ax.set_title(LABELS[fam])
        ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(png, dpi=150)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--directions", type=int, default=5)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/curves")
    p.add_argument("--plot", action="store_true")
    args = p.parse_args()

    cfg = CurveConfig(m=args.m, seeds=args.seeds, directions=args.directions, t_max=args.t_max,
                      master_seed=args.seed)
    rep = run_perturbation_curves(cfg, jobs=args.jobs)
    csv_path, json_path = emit_report(rep, Path(args.out), "curves")
    s = rep.summary
    print(f"coeff ratio max   {s['coeff_ratio_max']:.2e}")
    print(f"block curvature   {s['affine_block_max']:.2e}")
    print(f"exact affinity    {s['affine_exact_max']:.2e}")
    print(f"tanh/identity min {s['tanh_ratio_min']:.1f}")
    print("pass" if rep.passed else "FAIL")
    if args.plot:
        png = csv_path.with_suffix(".png")
        plot(csv_path, png)
        print(f"wrote {png}")


if __name__ == "__main__":
    main()
