"""BP and GBP throughput error on random graphs, plus the intensity trend on one graph."""

import argparse

import numpy as np

from csmabp.cli import write_csv
from csmabp.experiments import AccuracyRecipe, bp_gbp_accuracy, rho_trend
from csmabp.graph import random_connected_geometric_graph


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--graphs", type=int, default=10)
    p.add_argument("--links", type=int, default=50)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trend-links", type=int, default=30)
    p.add_argument("--output", default=None, help="CSV for the per-graph rows (stdout if omitted)")
    args = p.parse_args()

    rows = bp_gbp_accuracy(AccuracyRecipe(graphs=args.graphs, links=args.links, degree=args.degree, seed=args.seed))
    write_csv(rows, args.output)
    print(f"# mean BP error {np.mean([r['bp_error'] for r in rows]):.2%}, "
          f"mean GBP error {np.mean([r['gbp_error'] for r in rows]):.2%}, "
          f"mean BP iterations {np.mean([r['bp_iterations'] for r in rows]):.1f}")
    g = random_connected_geometric_graph(args.trend_links, args.degree, args.seed)
    for r in rho_trend(g):
        print(f"# rho = {r['rho_factor']} rho_0: BP {r['bp_error']:.2%}  GBP {r['gbp_error']:.2%}")


if __name__ == "__main__":
    main()
