"""GD at several widths with eta ~ 1/m: gradient-bound ratios, travel and NTK deviation.

    python scripts/width_sweep.py --widths 512 2048 8192 --out width_sweep.json
"""
import argparse
import json

from opl.experiments import width_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--widths", type=int, nargs="+", default=[512, 2048, 8192])
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    sweep = width_sweep(args.widths, depth=args.depth, n=args.n, T=args.steps, seed=args.seed)
    print(f"{'m':>6} {'eta':>10} {'F0':>8} {'F_T':>10} {'travel':>9} {'dev':>7} {'r_low':>8} {'r_up':>8}")
    for p in sweep.points:
        print(
            f"{p.m:>6} {p.eta:>10.3g} {p.F0:>8.3f} {p.F_final:>10.3g} {p.travel_spec:>9.3g} "
            f"{p.deviation_ratio:>7.3f} {p.r_low_floor:>8.3g} {p.r_up_cap:>8.3g}"
        )
    for name, rep in sweep.reports.items():
        print(rep.summary_line())
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(sweep.to_dict(), fh, indent=2)


if __name__ == "__main__":
    main()
