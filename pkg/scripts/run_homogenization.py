"""Averaging-error decay of the homogenized busy indicator; writes homogenization.csv."""
import argparse
from pathlib import Path

import numpy as np

from qbcsma.experiments import ExperimentSpec, homogenization_experiment, loglog_slope
from qbcsma.model import build_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--N-list", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    p = build_params({"n": 2, "a": 0.25, "lambda_inf": [0.5, 0.5], "gamma": [0, 0],
                      "N": args.N_list[0]})
    spec = ExperimentSpec(p, args.N_list, T=1.0, reps=args.reps, seed=args.seed, S0=2.0,
                          node=1, localization="literal")
    table = homogenization_experiment(spec, workers=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out / "homogenization.csv")
    means = table.means("averaging")
    print("means", np.round(means, 6).tolist())
    print("log-log slope", round(loglog_slope(args.N_list, means), 3))


if __name__ == "__main__":
    main()
