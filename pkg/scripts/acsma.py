"""Compare BP-ACSMA, GBP-ACSMA and measurement ACSMA against the exact optimum."""

import argparse

import numpy as np

from csmabp.cli import write_csv
from csmabp.experiments import AcsmaRecipe, acsma_comparison


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--graphs", type=int, default=10)
    p.add_argument("--links", type=int, default=100)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline-iterations", type=int, default=1000,
                   help="measurement ACSMA budget; 0 skips the baseline")
    p.add_argument("--output", default=None)
    args = p.parse_args()
    rows = acsma_comparison(AcsmaRecipe(graphs=args.graphs, links=args.links, degree=args.degree, seed=args.seed,
                                        baseline_iterations=args.baseline_iterations,
                                        run_baseline=args.baseline_iterations > 0))
    write_csv(rows, args.output)
    for name in ("oracle", "bp", "gbp"):
        print(f"# {name:6s} mean Th {np.nanmean([r[f'{name}_Th'] for r in rows]):8.3f}  "
              f"mean U {np.nanmean([r[f'{name}_U'] for r in rows]):9.3f}")


if __name__ == "__main__":
    main()
