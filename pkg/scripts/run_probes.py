"""Exploratory probes: stationary scale vs beta, and line-graph occupation vs product form."""
import argparse

from qbcsma.experiments import general_graph_probe, stationary_probe
from qbcsma.model import Graph, build_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--events", type=int, default=10**6)
    args = ap.parse_args()
    p = build_params({"n": 2, "a": 1.0, "lambda_inf": [0.5, 0.5], "gamma": [0.25, 0.25], "N": 50})
    for row in stationary_probe(p, [50, 200], T=20.0, reps=4, seed=args.seed).rows:
        print("stationary", row)
    g = Graph.from_edges(3, [[1, 2], [2, 3]])
    for conv in ("regularized", "large_q"):
        table = general_graph_probe(g, [2, 4, 2], 1.0, events=args.events, seed=args.seed,
                                    convention=conv)
        print(conv, "exact", [round(x, 4) for x in table.metadata["exact"]])
        for row in table.rows:
            if row["estimator"].startswith("occupation"):
                print(conv, row["estimator"], round(row["mean"], 4), "+-", round(row["stderr"], 4))


if __name__ == "__main__":
    main()
