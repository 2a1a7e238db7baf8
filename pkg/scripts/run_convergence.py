"""Fluid-limit and collapse trends over N; writes convergence.csv and collapse.csv."""
import argparse
from pathlib import Path

from qbcsma.experiments import ExperimentSpec, collapse_experiment, convergence_experiment
from qbcsma.model import build_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--N-list", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--localization", choices=["corrected", "literal"], default="literal")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    p = build_params({"n": 2, "a": 0.25, "lambda_inf": [0.5, 0.5], "gamma": [0, 0],
                      "N": args.N_list[0]})
    spec = ExperimentSpec(p, args.N_list, T=1.0, reps=args.reps, seed=args.seed, S0=2.0,
                          localization=args.localization)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, run in (("convergence", convergence_experiment), ("collapse", collapse_experiment)):
        table = run(spec, workers=args.threads)
        table.write_csv(args.out / f"{name}.csv")
        for row in table.rows:
            print(name, row)


if __name__ == "__main__":
    main()
