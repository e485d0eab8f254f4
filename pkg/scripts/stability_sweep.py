"""Sign changes and forward/backward drift against the perturbation radius omega.

    python scripts/stability_sweep.py --width 4096 --depth 6 --mode targeted --csv-dir out/
"""
import argparse
from pathlib import Path

import numpy as np

from opl.datagen import generate_separated_dataset
from opl.netcore import ArchSpec, init_network
from opl.theoryprobes import Mode, stability_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--width", type=int, default=4096)
    ap.add_argument("--depth", type=int, default=6)
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--mode", choices=[m.value for m in Mode], default="targeted")
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv-dir")
    args = ap.parse_args()

    params = init_network(ArchSpec(10, args.width, 1, args.depth), args.seed)
    data = generate_separated_dataset(args.n, 10, 0.1, seed=args.seed)
    reports = stability_sweep(params, data, np.logspace(-4, -1, args.points), args.mode, seed=args.seed)
    for rep in reports.values():
        print(rep.summary_line(), "| predicted", rep.predicted)
        if args.csv_dir:
            out = Path(args.csv_dir)
            out.mkdir(parents=True, exist_ok=True)
            rep.to_csv(out / f"{rep.name}.csv")


if __name__ == "__main__":
    main()
