"""Loss surface on the plane spanned by the gradient and the Oja negative-curvature direction.

Writes grid.csv (s1,s2,F) plus a JSON sidecar, and prints an ASCII contour.
"""
import argparse

import numpy as np

from opl.datagen import generate_separated_dataset
from opl.landscape import landscape_slice, network_negative_curvature, normalized_gradient_direction, unflatten_W
from opl.netcore import ArchSpec, init_network

SHADES = " .:-=+*#%@"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--steps", type=int, default=21)
    ap.add_argument("--extent", type=float, default=0.5)
    ap.add_argument("--oja-steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="grid")
    args = ap.parse_args()

    params = init_network(ArchSpec(10, args.width, 1, args.depth), args.seed)
    data = generate_separated_dataset(args.n, 10, 0.1, seed=args.seed)
    oja = network_negative_curvature(params, data, steps=args.oja_steps, seed=args.seed)
    print(f"oja rayleigh {oja.rayleigh:.4g} (gradient start {oja.gradient_rayleigh:.4g})")
    D1, _ = normalized_gradient_direction(params, data)
    grid = landscape_slice(
        params, data, D1, unflatten_W(oja.direction, params.W), extent=(args.extent, args.extent), steps=(args.steps, args.steps)
    )
    grid.to_csv(f"{args.out}.csv")
    grid.write_sidecar(f"{args.out}.json")

    logF = np.log10(grid.F)
    lvl = np.round((logF - logF.min()) / max(np.ptp(logF), 1e-12) * (len(SHADES) - 1)).astype(int)
    for row in lvl.T[::-1]:
        print("".join(SHADES[k] * 2 for k in row))
    print(f"center F = {grid.center:.6g}")


if __name__ == "__main__":
    main()
