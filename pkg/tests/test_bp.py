import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_graphs, small_trees
from csmabp.bp import (
    BpConfig,
    EdgeIndex,
    InfeasibleTargetError,
    bp_beliefs,
    bp_message_update,
    ibp_contraction_factor,
    ring_fixed_point,
    run_bp,
    run_ibp,
    run_sbp,
)
from csmabp.graph import fig1_graph, random_connected_geometric_graph, ring_graph
from csmabp.icn import RHO_0, exact_throughputs, subtree_partitions
from oracles import scalar_loopy_bp

rhos = st.floats(0.1, 4 * RHO_0)
TIGHT = BpConfig(tol=1e-13, max_iter=5000)


@given(small_trees(), st.data())
def test_bp_exact_on_trees(g, data):
    rho = {v: data.draw(rhos) for v in g.vertices}
    res = run_bp(g, rho, TIGHT)
    assert res.converged
    assert res.th == pytest.approx(exact_throughputs(g, rho), abs=1e-10)


@given(small_trees(), st.data())
def test_sbp_equals_bp(g, data):
    rho = {v: data.draw(rhos) for v in g.vertices}
    assert run_sbp(g, rho, TIGHT).th == pytest.approx(run_bp(g, rho, TIGHT).th, abs=1e-11)


@given(small_trees(max_n=10), st.data())
def test_tree_messages_are_subtree_partitions(g, data):
    if len(g) < 2:
        return
    rho = {v: data.draw(rhos) for v in g.vertices}
    msgs = run_bp(g, rho, TIGHT).messages
    for i, j in g.edges:
        for src, dst in ((i, j), (j, i)):
            z_full, z_star = subtree_partitions(g, rho, (dst, src))
            m = msgs[(src, dst)]
            assert m[1] / m[0] == pytest.approx(z_star / z_full, rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_vectorized_bp_matches_scalar_reference(seed):
    g = random_connected_geometric_graph(15, 4.0, seed)
    ours = run_bp(g, 2.0, BpConfig(tol=0.0, max_iter=7))
    ref = scalar_loopy_bp(g.vertices, g.edges, 2.0, 7)
    assert ours.th == pytest.approx(ref, rel=1e-12)


def test_edge_by_edge_update_matches_sweep():
    g = fig1_graph()
    index = EdgeIndex(g)
    res = run_bp(g, 3.0, BpConfig(tol=0.0, max_iter=3))
    nxt = bp_message_update(g, 3.0, res.messages)
    full = run_bp(g, 3.0, BpConfig(tol=0.0, max_iter=4)).messages
    for e in index.directed:
        assert nxt[e] == pytest.approx(full[e], rel=1e-12)
    b = bp_beliefs(g, 3.0, full)
    th = run_bp(g, 3.0, BpConfig(tol=0.0, max_iter=4)).th
    assert {v: b[v][1] for v in g.vertices} == pytest.approx(th)


@pytest.mark.parametrize("n", [3, 4, 7, 12])
@pytest.mark.parametrize("rho", [1.0, 2.0, RHO_0, 4 * RHO_0])
def test_ring_fixed_point(n, rho):
    res = run_bp(ring_graph(n), rho, BpConfig(tol=1e-14, max_iter=10_000))
    b0, b1 = ring_fixed_point(rho)
    assert b0 + b1 == pytest.approx(1.0)
    assert all(t == pytest.approx(b1, abs=1e-9) for t in res.th.values())


def test_ring_fixed_point_closed_form_values():
    # b1 = (sqrt(1 + 4 rho) - 1) / (2 sqrt(1 + 4 rho)); at rho = 2 that is (3 - 1) / 6
    assert ring_fixed_point(2.0)[1] == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        ring_fixed_point(-1.0)


def test_unnormalized_messages_give_same_beliefs():
    # on a ring unnormalized messages only grow geometrically, so no overflow
    g = ring_graph(6)
    a = run_bp(g, 1.5, BpConfig(tol=0.0, max_iter=20))
    b = run_bp(g, 1.5, BpConfig(tol=0.0, max_iter=20, normalize=False))
    assert a.th == pytest.approx(b.th, rel=1e-10)


def test_damping_still_reaches_tree_fixed_point():
    g = fig1_graph().subgraph([1, 2, 3])
    res = run_bp(g, 4.0, BpConfig(tol=1e-13, max_iter=5000, damping=0.5))
    assert res.th == pytest.approx(exact_throughputs(g, 4.0), abs=1e-10)


@pytest.mark.parametrize("bad", [dict(damping=1.0), dict(damping=-0.1), dict(tol=-1), dict(max_iter=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        BpConfig(**bad)


def test_history_is_recorded():
    res = run_bp(fig1_graph(), 1.0, BpConfig(tol=1e-6, record_history=True))
    assert len(res.history) == res.iterations + 1


# ---------------------------------------------------------------------------
# inverse BP


@given(small_graphs(min_n=2, max_n=9), st.data())
def test_ibp_round_trip(g, data):
    rho = {v: data.draw(st.floats(0.2, 3.0)) for v in g.vertices}
    target = run_bp(g, rho, BpConfig(tol=1e-13, max_iter=20_000, damping=0.3)).th
    inv = run_ibp(g, target, BpConfig(tol=1e-13, max_iter=20_000))
    assert inv.converged
    back = run_bp(g, inv.rho, BpConfig(tol=1e-13, max_iter=20_000, damping=0.3)).th
    assert back == pytest.approx(target, rel=1e-7)


@given(small_trees(), st.data())
def test_ibp_inverts_exact_throughputs_on_trees(g, data):
    rho = {v: data.draw(rhos) for v in g.vertices}
    inv = run_ibp(g, exact_throughputs(g, rho), BpConfig(tol=1e-13, max_iter=20_000))
    assert inv.rho == pytest.approx(rho, rel=1e-7)


@pytest.mark.parametrize("bad", [0.0, 1.0, 1.5])
def test_ibp_rejects_out_of_range_targets(bad):
    g = fig1_graph()
    with pytest.raises(InfeasibleTargetError):
        run_ibp(g, {1: bad, 2: 0.1, 3: 0.1, 4: 0.1})


def test_contraction_factor_below_one():
    for c_i, c_j, n in [(0.5, 2.0, 0.3), (10.0, 10.0, 1e-3), (1e-3, 5.0, 1.0)]:
        f = ibp_contraction_factor(c_i, c_j, n)
        assert 0 < f < 1
        assert f == pytest.approx(c_i * c_j / (n + c_j * n + c_i * c_j))


def test_no_degeneracy_warning_on_ordinary_input():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_ibp(fig1_graph(), {1: 0.3, 2: 0.2, 3: 0.25, 4: 0.25})
        assert math.isfinite(sum(run_bp(ring_graph(5), 100.0).th.values()))
