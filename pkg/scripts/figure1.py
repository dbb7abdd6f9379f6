"""Loss curves between a 950 Hz note and copies shifted by sigma Hz.

Writes a CSV (sigma, ot_loss, euclidean, sinkhorn_loss@<gamma>...) and prints
a small table. Plot the CSV with any tool you like.
"""

import argparse
import csv

import numpy as np

from otbss.spectral import CostSpec, NoteSpec, figure1_curves


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--step", type=float, default=100.0, help="sigma step in Hz")
    parser.add_argument("--gammas", default="0.005,0.02,0.1", help="multiples of mean(C)")
    parser.add_argument("--power", type=float, default=0.5)
    parser.add_argument("--out", default="figure1.csv")
    args = parser.parse_args()

    gammas = [float(g) for g in args.gammas.split(",")]
    sigmas = np.arange(0.0, 1000.0 + args.step / 2, args.step)
    curves = figure1_curves(sigmas, gammas, NoteSpec(950.0), CostSpec(100.0, args.power))
    header = list(curves)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(zip(*(curves[h] for h in header)))

    print("  ".join(f"{h:>20}" for h in header))
    for row in zip(*(curves[h] for h in header)):
        print("  ".join(f"{v:20.5f}" for v in row))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
