"""Command-line front end.

Exit codes: 0 on success or convergence, 2 when an iterative method reports
non-convergence, 1 on errors. Floats are written with 12 significant digits.
Set ``CSMABP_LOG`` (e.g. ``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from typing import Mapping, Sequence

import numpy as np

from . import experiments as ex
from .acsma import (
    AcsmaBaselineConfig,
    AcsmaConfig,
    UtilitySpec,
    evaluate_utility,
    exact_acsma_oracle,
    run_bp_acsma,
    run_gbp_acsma,
    run_measurement_acsma,
)
from .bp import BpConfig, run_bp, run_ibp, run_sbp
from .distributed import AGENT_KINDS, ChurnEvent, RoundSchedule, run_harness
from .gbp import GbpConfig, run_gbp, run_igbp
from .graph import (
    ContentionGraph,
    GraphError,
    cayley_tree_graph,
    complete_graph,
    fig1_graph,
    fig6_graph,
    load_graph,
    path_graph,
    random_connected_geometric_graph,
    random_tree,
    ring_graph,
    star_graph,
)
from .icn import RHO_0, exact_throughputs
from .regions import build_local_region_graph, build_region_graph
from .simulator import DISTRIBUTIONS, SimConfig, simulate_icn

log = logging.getLogger("csmabp")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_json(obj, path: str | None):
    text = json.dumps(_round_floats(obj), indent=2, sort_keys=False) + "\n"
    _emit(text, path)


def write_csv(rows: Sequence[Mapping], path: str | None):
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(row.get(k)) for k in header])
    _emit(buf.getvalue(), path)


def _emit(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _per_link_rows(g: ContentionGraph, **cols: Mapping[int, float]) -> list[dict]:
    return [{"link": v, **{k: c[v] for k, c in cols.items()}} for v in g.vertices]


def _load(path: str):
    g, extras = load_graph(path)
    return g, extras


def _rho_arg(args, g: ContentionGraph, extras) -> Mapping[int, float] | float:
    if args.rho is not None:
        return float(args.rho)
    if "rho" in extras and len(extras["rho"]) == len(g):
        return extras["rho"]
    return RHO_0


def _targets_arg(path: str, g: ContentionGraph) -> dict[int, float]:
    """Targets from JSON (``{"targets": {id: t}}`` or a bare map) or CSV with
    ``link`` and ``target`` columns."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".csv"):
        rows = csv.DictReader(io.StringIO(text))
        out = {int(r["link"]): float(r["target"]) for r in rows}
    else:
        data = json.loads(text)
        raw = data.get("targets", data)
        out = {int(k): float(v) for k, v in raw.items()}
    missing = [v for v in g.vertices if v not in out]
    if missing:
        raise ValueError(f"no target for links {missing}")
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    kind = args.kind
    if kind == "ring":
        g = ring_graph(args.n)
    elif kind == "path":
        g = path_graph(args.n)
    elif kind == "complete":
        g = complete_graph(args.n)
    elif kind == "star":
        g = star_graph(args.n)
    elif kind == "cayley":
        g = cayley_tree_graph(args.z, args.layers)
    elif kind == "tree":
        g = random_tree(args.n, _need_seed(args))
    elif kind == "random":
        g = random_connected_geometric_graph(args.n, args.degree, _need_seed(args))
    elif kind == "fig1":
        g = fig1_graph()
    elif kind == "fig6":
        g = fig6_graph()
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(kind)
    write_json(g.to_dict(), args.output)
    return EXIT_OK


def _need_seed(args) -> int:
    if args.seed is None:
        raise ValueError("--seed is required for randomized commands")
    return args.seed


def cmd_targets(args) -> int:
    g, _ = _load(args.graph)
    t = ex.mais_mixture_targets(g, args.gamma, _need_seed(args), count=args.sets)
    write_json({"targets": {str(v): t[v] for v in g.vertices}}, args.output)
    return EXIT_OK


def cmd_solve(args) -> int:
    g, extras = _load(args.graph)
    rho = _rho_arg(args, g, extras)
    converged = True
    if args.algo == "exact":
        th = exact_throughputs(g, rho)
    elif args.algo in ("bp", "sbp"):
        cfg = BpConfig(tol=args.tol, max_iter=args.max_iter, damping=args.damping)
        res = (run_bp if args.algo == "bp" else run_sbp)(g, rho, cfg)
        th, converged = res.th, res.converged
    else:
        res = run_gbp(g, rho, GbpConfig(tol=args.tol, max_iter=args.max_iter, alpha=args.alpha))
        th, converged = res.th, res.converged
    write_csv(_per_link_rows(g, th=th), args.output)
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_invert(args) -> int:
    g, _ = _load(args.graph)
    target = _targets_arg(args.targets, g)
    if args.algo == "ibp":
        res = run_ibp(g, target, BpConfig(tol=args.tol, max_iter=args.max_iter, damping=args.damping))
    else:
        res = run_igbp(g, target, GbpConfig(tol=args.tol, max_iter=args.max_iter, alpha=args.alpha))
    write_csv(_per_link_rows(g, target=target, rho=res.rho), args.output)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_optimize(args) -> int:
    g, _ = _load(args.graph)
    u = UtilitySpec(kind=args.utility, beta=args.beta)
    converged, iterations, trace_rows = True, 0, []
    if args.algo == "oracle":
        rho, th = exact_acsma_oracle(g, u)
    elif args.algo in ("bp-acsma", "gbp-acsma"):
        cfg = AcsmaConfig(tol=args.tol, max_iter=args.max_iter, damping=args.damping, alpha=args.alpha,
                          record_history=True)
        res = (run_bp_acsma if args.algo == "bp-acsma" else run_gbp_acsma)(g, u, cfg)
        rho, th, converged, iterations = res.rho, res.th, res.converged, res.iterations
        trace_rows = [{"iteration": n, **{f"r{v}": r[k] for k, v in enumerate(g.vertices)}}
                      for n, r in enumerate(res.r_history)]
    else:
        trace = run_measurement_acsma(
            g, u, AcsmaBaselineConfig(update_interval=args.T, step_size=args.step, max_iter=args.max_iter),
            SimConfig(seed=_need_seed(args)))
        final = trace.state(len(trace) - 1)
        rho = final.rho
        th = dict(zip(g.vertices, trace.served[-1].tolist()))
        converged = trace.converged
        iterations = trace.converged_at if converged else len(trace) - 1
        trace_rows = [{"iteration": n, **{f"r{v}": r[k] for k, v in enumerate(g.vertices)}}
                      for n, r in enumerate(trace.r)]
    write_csv(_per_link_rows(g, rho=rho, th=th, r={v: math.log(x) for v, x in rho.items()}), args.output)
    if args.trace:
        write_csv(trace_rows, args.trace)
    summary = {"Th": sum(th.values()), "U": evaluate_utility(th, u), "iterations": iterations,
               "converged": converged}
    sys.stderr.write(" ".join(f"{k}={fmt(v)}" for k, v in summary.items()) + "\n")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    g, extras = _load(args.graph)
    rho = _rho_arg(args, g, extras)
    rho_map = {v: float(rho) for v in g.vertices} if isinstance(rho, float) else rho
    cfg = SimConfig(horizon=args.horizon, seed=_need_seed(args), backoff_dist=args.backoff_dist,
                    tx_dist=args.tx_dist)
    res = simulate_icn(g, rho_map, cfg)
    write_csv(_per_link_rows(g, th=res.th, stderr=res.stderr), args.output)
    return EXIT_OK


def cmd_regions(args) -> int:
    g, _ = _load(args.graph)
    rg = build_local_region_graph(g, args.local) if args.local is not None else build_region_graph(g)
    write_json(rg.to_dict(), args.output)
    return EXIT_OK


def cmd_distributed(args) -> int:
    g, extras = _load(args.graph)
    kind = args.agents
    if kind in ("bp-acsma", "gbp-acsma"):
        params = UtilitySpec(beta=args.beta)
    elif kind in ("ibp", "igbp"):
        if not args.targets:
            raise ValueError(f"{kind} agents need --targets")
        params = _targets_arg(args.targets, g)
    else:
        params = _rho_arg(args, g, extras)
    churn = []
    if args.churn:
        with open(args.churn) as fh:
            for ev in json.load(fh):
                churn.append(ChurnEvent(int(ev["round"]), ev["op"], tuple(ev["args"])))
    snaps = run_harness(g, kind, params, RoundSchedule(args.rounds, args.t1, churn),
                        damping=args.damping, alpha=args.alpha)
    rows = []
    for s in snaps:
        for j, a in s.agents.items():
            rows.append({"round": s.round, "link": j, "level": a.level, "th": a.th, "rho": a.rho,
                         "flags": "|".join(a.flags)})
    write_csv(rows, args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    seed = _need_seed(args)
    if args.recipe == "accuracy":
        rows = ex.bp_gbp_accuracy(ex.AccuracyRecipe(graphs=args.graphs, links=args.links, degree=args.degree,
                                                    seed=seed))
    elif args.recipe == "rho-trend":
        g = random_connected_geometric_graph(args.links, args.degree, seed)
        rows = ex.rho_trend(g)
    elif args.recipe == "igbp":
        rows = ex.igbp_accuracy(graphs=args.graphs, max_links=args.links, seed=seed)
    elif args.recipe == "acsma":
        rows = ex.acsma_comparison(ex.AcsmaRecipe(graphs=args.graphs, links=args.links, degree=args.degree,
                                                  seed=seed, baseline_iterations=args.baseline_iterations,
                                                  run_baseline=args.baseline_iterations > 0))
    else:
        out = ex.cayley_starvation(ex.CayleyRecipe(seed=seed, iterations=args.baseline_iterations or 500))
        trace = out["trace"]
        rows = [{"iteration": n, "r1": trace.r[n, 0], "r2": trace.r[n, 1]} for n in range(len(trace))]
    write_csv(rows, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csmabp", description="Belief-propagation tools for CSMA networks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, graph=True):
        if graph:
            sp.add_argument("graph", help="graph JSON file")
        sp.add_argument("-o", "--output", default=None, help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("gen", help="generate a contention graph")
    sp.add_argument("kind", choices=["ring", "path", "complete", "star", "cayley", "tree", "random", "fig1", "fig6"])
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--degree", type=float, default=4.0)
    sp.add_argument("--z", type=int, default=3)
    sp.add_argument("--layers", type=int, default=4)
    common(sp, graph=False)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("targets", help="feasible target throughputs from maximal independent sets")
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--sets", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_targets)

    def iterative(sp, alpha=0.5):
        sp.add_argument("--tol", type=float, default=1e-2)
        sp.add_argument("--max-iter", type=int, default=1000)
        sp.add_argument("--damping", type=float, default=0.0)
        sp.add_argument("--alpha", type=float, default=alpha)

    sp = sub.add_parser("solve", help="per-link throughputs")
    sp.add_argument("--algo", choices=["exact", "bp", "sbp", "gbp"], default="bp")
    sp.add_argument("--rho", type=float, default=None)
    iterative(sp)
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("invert", help="intensities from target throughputs")
    sp.add_argument("--algo", choices=["ibp", "igbp"], default="ibp")
    sp.add_argument("--targets", required=True)
    iterative(sp)
    common(sp)
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("optimize", help="utility-maximizing intensities")
    sp.add_argument("--algo", choices=["bp-acsma", "gbp-acsma", "acsma", "oracle"], default="bp-acsma")
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--utility", choices=["log"], default="log")
    sp.add_argument("--T", type=float, default=150.0, help="baseline update interval")
    sp.add_argument("--step", type=float, default=0.1, help="baseline step size")
    sp.add_argument("--trace", default=None, help="CSV path for the r trace")
    iterative(sp)
    common(sp)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("simulate", help="event-driven simulation")
    sp.add_argument("--rho", type=float, default=None)
    sp.add_argument("--horizon", type=float, default=10_000.0)
    sp.add_argument("--tx-dist", choices=DISTRIBUTIONS, default="exponential")
    sp.add_argument("--backoff-dist", choices=DISTRIBUTIONS, default="exponential")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("regions", help="region graph as JSON")
    sp.add_argument("--local", type=int, default=None, help="build the local region graph of this link")
    common(sp)
    sp.set_defaults(func=cmd_regions)

    sp = sub.add_parser("distributed", help="round-based agent execution")
    sp.add_argument("--agents", choices=AGENT_KINDS, default="bp")
    sp.add_argument("--rounds", type=int, default=50)
    sp.add_argument("--t1", type=int, default=10)
    sp.add_argument("--churn", default=None, help="JSON list of {round, op, args}")
    sp.add_argument("--rho", type=float, default=None)
    sp.add_argument("--targets", default=None)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--damping", type=float, default=0.0)
    sp.add_argument("--alpha", type=float, default=0.5)
    common(sp)
    sp.set_defaults(func=cmd_distributed)

    sp = sub.add_parser("bench", help="table-reproduction recipes, summary CSV")
    sp.add_argument("recipe", choices=["accuracy", "rho-trend", "igbp", "acsma", "cayley"])
    sp.add_argument("--graphs", type=int, default=10)
    sp.add_argument("--links", type=int, default=50)
    sp.add_argument("--degree", type=float, default=4.0)
    sp.add_argument("--baseline-iterations", type=int, default=0)
    common(sp, graph=False)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("CSMABP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, GraphError, KeyError, OSError, ArithmeticError) as exc:
        log.debug("command failed", exc_info=True)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
