"""End-to-end acceptance checks, one section per criterion.

Each test records its clause through ``record_criterion``; the terminal
summary prints one PASS/FAIL line per criterion. Clauses the algorithms
cannot meet on the sampled graphs are strict xfails, so the suite turns red
if they ever start passing.
"""

import itertools
import math

import networkx as nx
import numpy as np
import pytest

from conftest import record_criterion
from csmabp.acsma import (
    AcsmaConfig,
    BracketError,
    OracleConfig,
    UtilitySpec,
    exact_acsma_oracle,
    iterations_to_converge,
    objective,
    run_bp_acsma,
    run_gbp_acsma,
)
from csmabp.bp import BpConfig, InfeasibleTargetError, ring_fixed_point, run_bp, run_ibp, run_sbp
from csmabp.distributed import AGENT_KINDS, bootstrap_local_graphs, check_features
from csmabp.experiments import (
    LOOPY_BP_DAMPING,
    AccuracyRecipe,
    AcsmaRecipe,
    CayleyRecipe,
    acsma_comparison,
    bp_gbp_accuracy,
    cayley_starvation,
    igbp_accuracy,
    rho_trend,
)
from csmabp.gbp import GbpConfig, run_gbp, run_igbp
from csmabp.graph import (
    build_graph,
    complete_graph,
    fig1_graph,
    fig6_graph,
    random_connected_geometric_graph,
    random_tree,
    ring_graph,
    two_hop_local_graph,
)
from csmabp.icn import RHO_0, exact_throughputs
from csmabp.regions import build_region_graph, is_loop_free
from csmabp.simulator import SimConfig, simulate_icn
from oracles import ring_exact_throughput
from test_distributed import max_gap, params_for
from test_gbp import marginalization_gap

TIGHT_BP = BpConfig(tol=1e-14, max_iter=20_000)


# ---------------------------------------------------------------------------
# 1. tree exactness


def test_c1_tree_exactness():
    rng = np.random.default_rng(1)
    worst = {"bp": 0.0, "gbp": 0.0, "sbp": 0.0}
    for k in range(100):
        g = random_tree(int(rng.integers(1, 51)), k)
        rho = {v: float(rng.uniform(0.1, 4 * RHO_0)) for v in g.vertices}
        exact = exact_throughputs(g, rho)
        runs = {
            "bp": run_bp(g, rho, TIGHT_BP).th,
            "gbp": run_gbp(g, rho, GbpConfig(tol=1e-14, max_iter=20_000, alpha=1.0)).th,
            "sbp": run_sbp(g, rho, TIGHT_BP).th,
        }
        for name, th in runs.items():
            worst[name] = max(worst[name], max(abs(th[v] - exact[v]) for v in g.vertices))
    for name, err in worst.items():
        record_criterion(1, name, err < 1e-9, f"max err {err:.1e}")
    assert max(worst.values()) < 1e-9


# ---------------------------------------------------------------------------
# 2. ring fixed point


def test_c2_ring_fixed_point():
    worst = 0.0
    for n in range(3, 13):
        for rho in (1.0, 2.0, RHO_0, 4 * RHO_0):
            th = run_bp(ring_graph(n), rho, TIGHT_BP).th
            worst = max(worst, max(abs(t - ring_fixed_point(rho)[1]) for t in th.values()))
    record_criterion(2, "closed form", worst < 1e-9, f"max err {worst:.1e}")
    assert worst < 1e-9


def _ring_gap(n):
    return abs(ring_fixed_point(RHO_0)[1] - ring_exact_throughput(n, RHO_0))


def test_c2_triangle_gap():
    gap = _ring_gap(3)
    record_criterion(2, "C3 gap", abs(gap - 0.080) <= 0.005, f"{gap:.4f}")
    assert gap == pytest.approx(0.080, abs=0.005)


@pytest.mark.xfail(strict=True, reason="exact BP error on C_8 at rho_0 is 0.0066, above 0.002")
def test_c2_octagon_gap():
    gap = _ring_gap(8)
    # cross-check the transfer matrix against the product-form enumeration
    assert ring_exact_throughput(8, RHO_0) == pytest.approx(exact_throughputs(ring_graph(8), RHO_0)[1], abs=1e-12)
    record_criterion(2, "C8 gap", gap <= 0.002, f"{gap:.4f}")
    assert gap <= 0.002


# ---------------------------------------------------------------------------
# 3. random 50-link accuracy band


@pytest.fixture(scope="module")
def accuracy_rows():
    return bp_gbp_accuracy(AccuracyRecipe())


def test_c3_accuracy_band(accuracy_rows):
    bp_err = float(np.mean([r["bp_error"] for r in accuracy_rows]))
    gbp_err = float(np.mean([r["gbp_error"] for r in accuracy_rows]))
    its = [run_bp(random_connected_geometric_graph(50, 4.0, r["seed"]), RHO_0,
                  BpConfig(tol=1e-2, damping=LOOPY_BP_DAMPING)) for r in accuracy_rows]
    worst_it = max(r.iterations for r in its)
    record_criterion(3, "BP error", 0.02 <= bp_err <= 0.10, f"{bp_err:.2%}")
    record_criterion(3, "GBP error", gbp_err <= 0.015, f"{gbp_err:.2%}")
    record_criterion(3, "BP iterations", all(r.converged for r in its) and worst_it <= 50, f"max {worst_it}")
    assert 0.02 <= bp_err <= 0.10
    assert gbp_err <= 0.015
    assert all(r.converged for r in its) and worst_it <= 50


# ---------------------------------------------------------------------------
# 4. intensity trend


def test_c4_rho_trend():
    rows = rho_trend(random_connected_geometric_graph(30, 4.0, 0))
    bp = [r["bp_error"] for r in rows]
    gbp = [r["gbp_error"] for r in rows]
    increasing = all(a < b for a, b in zip(bp, bp[1:]))
    record_criterion(4, "BP increasing", increasing, " ".join(f"{e:.3f}" for e in bp))
    record_criterion(4, "GBP <= 2%", max(gbp) <= 0.02, f"max {max(gbp):.2%}")
    assert increasing
    assert max(gbp) <= 0.02


# ---------------------------------------------------------------------------
# 5. IBP round trip


def test_c5_ibp_round_trip():
    rng = np.random.default_rng(0)
    worst_back, monotone, converged = 0.0, True, True
    for s in range(20):
        n = int(rng.integers(5, 31))
        g = random_connected_geometric_graph(n, 3.0 if n < 10 else 4.0, s)
        rho = {v: float(rng.uniform(0.1, 4 * RHO_0)) for v in g.vertices}
        fwd = run_bp(g, rho, BpConfig(tol=1e-14, max_iter=20_000, damping=LOOPY_BP_DAMPING))
        inv = run_ibp(g, fwd.th, BpConfig(tol=1e-14, max_iter=20_000, record_history=True))
        ratios = np.array(inv.ratio_history)
        dist = np.abs(ratios - ratios[-1])
        slack = 1e-15 * np.maximum(1.0, np.abs(ratios[-1])) + 1e-15
        monotone &= bool(np.all(np.diff(dist, axis=0) <= slack))
        converged &= inv.converged
        back = run_bp(g, inv.rho, BpConfig(tol=1e-14, max_iter=20_000, damping=LOOPY_BP_DAMPING)).th
        worst_back = max(worst_back, max(abs(back[v] - fwd.th[v]) for v in g.vertices))
    record_criterion(5, "converges", converged)
    record_criterion(5, "monotone", monotone)
    record_criterion(5, "round trip", worst_back < 1e-6, f"max err {worst_back:.1e}")
    assert converged and monotone
    assert worst_back < 1e-6


# ---------------------------------------------------------------------------
# 6. IGBP accuracy


@pytest.mark.xfail(strict=True, reason="forward GBP error on dense small graphs exceeds 1% per link")
def test_c6_igbp_per_link():
    rows = igbp_accuracy(graphs=20, max_links=20, seed=0)
    worst = max(r["max_rel_error"] for r in rows)
    ok = all(r["converged"] for r in rows) and worst <= 0.01
    record_criterion(6, "per link 1%", ok, f"worst {worst:.2%}")
    assert ok


def test_c6_infeasible_clique_targets_rejected():
    g = fig6_graph()
    target = {v: 0.2 for v in g.vertices}
    target[2] = target[4] = target[5] = 0.34
    with pytest.raises(InfeasibleTargetError):
        run_igbp(g, target)
    record_criterion(6, "rejects infeasible", True)


# ---------------------------------------------------------------------------
# 7. marginalization consistency


def _c7_graphs():
    yield fig6_graph()
    yield complete_graph(5)
    yield ring_graph(7)
    for s in range(5):
        yield random_connected_geometric_graph(25, 4.0, s)
    for s in range(10):
        yield random_connected_geometric_graph(50, 4.0, s)


def test_c7_marginalization():
    worst, converged = 0.0, True
    for g in _c7_graphs():
        res = run_gbp(g, RHO_0, GbpConfig(tol=1e-10, max_iter=20_000, alpha=0.1))
        converged &= res.converged
        worst = max(worst, marginalization_gap(res))
    record_criterion(7, "parent/child", converged and worst <= 1e-6, f"max gap {worst:.1e}")
    assert converged and worst <= 1e-6


# ---------------------------------------------------------------------------
# 8. utility optimization on small graphs


def _c8_graphs():
    out = []
    for h in nx.graph_atlas_g()[1:]:
        if nx.is_connected(h):
            out.append(build_graph([v + 1 for v in h.nodes], [(a + 1, b + 1) for a, b in h.edges]))
    out += [random_connected_geometric_graph(10, 4.0, s) for s in range(10)]
    return out


@pytest.fixture(scope="module")
def c8_rows():
    u = UtilitySpec()
    rows = []
    for g in _c8_graphs():
        oracle, _ = exact_acsma_oracle(g, u, OracleConfig(tol=1e-12))
        bp = run_bp_acsma(g, u, AcsmaConfig(tol=1e-12, max_iter=5000))
        best = objective(g, oracle, u)
        try:
            gbp = run_gbp_acsma(g, u, AcsmaConfig(tol=1e-10, alpha=0.1, max_iter=5000))
            rel_gap = (best - objective(g, gbp.rho, u)) / abs(best)
            rho_gap = max(abs(gbp.rho[v] - oracle[v]) / oracle[v] for v in g.vertices)
        except BracketError:
            # diverged until the intensity root left its bracket: a miss
            rel_gap = rho_gap = math.inf
        rows.append({
            "graph": g,
            "loop_free": is_loop_free(build_region_graph(g)),
            "rel_gap": rel_gap,
            "rho_gap": rho_gap,
            "certificate": max(abs(math.log(bp.rho[v]) - u.beta * u.derivative(bp.th[v])) for v in g.vertices),
            "bp_converged": bp.converged,
        })
    return rows


def test_c8_loop_free_exact(c8_rows):
    lf = [r for r in c8_rows if r["loop_free"]]
    worst = max(r["rho_gap"] for r in lf)
    record_criterion(8, "loop-free exact", worst < 1e-6, f"{len(lf)} graphs, max {worst:.1e}")
    assert lf and worst < 1e-6


def test_c8_bp_certificate(c8_rows):
    worst = max(r["certificate"] for r in c8_rows)
    ok = all(r["bp_converged"] for r in c8_rows) and worst < 1e-6
    record_criterion(8, "BP certificate", ok, f"max {worst:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="GBP-ACSMA with clique regions misses the optimum by >2% on "
                                       "graphs such as K_{2,3}")
def test_c8_gbp_objective(c8_rows):
    bad = [r for r in c8_rows if r["rel_gap"] > 0.02]
    worst = max(r["rel_gap"] for r in c8_rows)
    record_criterion(8, "GBP within 2%", not bad, f"{len(bad)}/{len(c8_rows)} miss, worst {worst:.1%}")
    assert not bad


# ---------------------------------------------------------------------------
# 9. optimizer iteration ordering


@pytest.fixture(scope="module")
def c9_rows():
    return acsma_comparison(AcsmaRecipe(baseline_iterations=1000))


def _c9_counts(rows):
    return "; ".join(f"{r['bp_iterations']}/{r['gbp_iterations']}/{r['acsma_iterations']}" for r in rows)


def test_c9_bp_before_gbp(c9_rows):
    ok = all(r["bp_iterations"] < r["gbp_iterations"] for r in c9_rows)
    record_criterion(9, "BP < GBP", ok, "BP/GBP/ACSMA " + _c9_counts(c9_rows))
    assert ok


@pytest.mark.xfail(strict=True, reason="GBP-ACSMA oscillates without converging on some degree-4 100-link graphs")
def test_c9_gbp_well_before_measurement(c9_rows):
    # "much fewer" read as at most half; an unconverged GBP-ACSMA has no count
    bad = [r["seed"] for r in c9_rows
           if not r["gbp_converged"] or r["acsma_iterations"] < 2 * r["gbp_iterations"]]
    record_criterion(9, "GBP << ACSMA", not bad, f"misses on seeds {bad}")
    assert not bad


@pytest.mark.xfail(strict=True, reason="GBP-ACSMA does not converge on degree-6 100-link graphs")
def test_c9_degree_six_accuracy():
    u = UtilitySpec()
    for s in range(10):
        g = random_connected_geometric_graph(100, 6.0, s)
        oracle, _ = exact_acsma_oracle(g, u)
        bp = run_bp_acsma(g, u, AcsmaConfig(tol=1e-8, max_iter=2000))
        try:
            gbp = run_gbp_acsma(g, u, AcsmaConfig(tol=1e-8, max_iter=5000, alpha=0.1))
        except BracketError:
            record_criterion(9, "degree 6", False, f"seed {s}: bracket failure")
            raise

        def util(rho):
            return sum(u.value(t) for t in exact_throughputs(g, rho).values())

        ref = util(oracle)
        ok = gbp.converged and abs(util(gbp.rho) - ref) < abs(util(bp.rho) - ref)
        if not ok:
            record_criterion(9, "degree 6", False, f"seed {s}: GBP {util(gbp.rho):.1f} BP {util(bp.rho):.1f} "
                                                   f"proxy {ref:.1f}")
        assert ok
    record_criterion(9, "degree 6", True)


# ---------------------------------------------------------------------------
# 10. Cayley tree starvation


@pytest.fixture(scope="module")
def cayley():
    return cayley_starvation(CayleyRecipe())


def test_c10_measurement_fails(cayley):
    trace = cayley["trace"]
    record_criterion(10, "ACSMA fails", not trace.converged, f"{len(trace) - 1} iterations")
    assert not trace.converged and len(trace) - 1 == 500


def test_c10_bp_acsma_converges(cayley):
    g, oracle = cayley["graph"], cayley["oracle"]
    u = UtilitySpec(beta=5.0)
    res = run_bp_acsma(g, u, AcsmaConfig(tol=1e-12, max_iter=2000, record_history=True))
    ref = np.log([oracle[v] for v in g.vertices])
    at = iterations_to_converge(np.array(res.r_history), ref, 0.01)
    exact = max(abs(math.log(res.rho[v]) - math.log(oracle[v])) / abs(math.log(oracle[v])) for v in g.vertices)
    ok = at is not None and at <= 30 and exact < 1e-6
    record_criterion(10, "BP-ACSMA <= 30", ok, f"within 1% at {at}, final gap {exact:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="at the optimal intensities link 1 stays frozen for the whole trace")
def test_c10_temporal_alternation(cayley):
    trace = cayley["link1_temporal"]
    on, off = trace >= 0.9, trace <= 0.1
    state = np.where(on, 1, np.where(off, 0, -1))
    settled = state[state >= 0]
    flips = int(np.count_nonzero(np.diff(settled)))
    ok = on.mean() >= 0.05 and off.mean() >= 0.05 and flips >= 4
    record_criterion(10, "0/1 alternation", ok, f"on {on.mean():.2f} off {off.mean():.2f} flips {flips}")
    assert ok


# ---------------------------------------------------------------------------
# 11. insensitivity


def test_c11_insensitivity():
    g = fig1_graph()
    runs = {d: simulate_icn(g, {v: 1.0 for v in g.vertices},
                            SimConfig(horizon=200_000.0, seed=7, tx_dist=d, batches=40))
            for d in ("exponential", "deterministic", "uniform")}
    worst = 0.0
    for a, b in itertools.combinations(runs.values(), 2):
        for v in g.vertices:
            z = abs(a.th[v] - b.th[v]) / math.hypot(a.stderr[v], b.stderr[v])
            worst = max(worst, z)
    record_criterion(11, "pairwise", worst <= 3.0, f"max z {worst:.2f}")
    assert worst <= 3.0


# ---------------------------------------------------------------------------
# 12. distributed equivalence


def _c12_graphs():
    rng = np.random.default_rng(12)
    out = []
    for s in range(20):
        n = int(rng.integers(5, 31))
        out.append(random_connected_geometric_graph(n, 3.0 if n < 10 else 4.0, 100 + s))
    return out


@pytest.mark.parametrize("kind", AGENT_KINDS)
def test_c12_harness_matches_centralized(kind):
    kw = {"damping": LOOPY_BP_DAMPING} if kind in ("bp", "ibp", "bp-acsma") else {"alpha": 0.5}
    worst = max(max_gap(g, kind, params_for(kind, g), 12, **kw) for g in _c12_graphs())
    record_criterion(12, kind, worst < 1e-9, f"max gap {worst:.1e}")
    assert worst < 1e-9


def test_c12_bootstrap_and_features():
    graphs = _c12_graphs()
    three = all(all(bootstrap_local_graphs(g).local[j] == two_hop_local_graph(g, j) for j in g.vertices)
                for g in graphs)
    two = any(any(bootstrap_local_graphs(g, rounds=2).local[j] != two_hop_local_graph(g, j) for j in g.vertices)
              for g in graphs)
    features = all(check_features(g, rho=RHO_0).ok for g in graphs)
    record_criterion(12, "bootstrap 3 rounds", three and two)
    record_criterion(12, "features", features)
    assert three and two and features
