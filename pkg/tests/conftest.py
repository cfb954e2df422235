import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from csmabp.graph import build_graph  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def record_criterion(number: int, clause: str, passed: bool, detail: str = ""):
    """Collect one clause result; the terminal summary prints one line per criterion."""
    ACCEPTANCE.setdefault(number, []).append((clause, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        clauses = ACCEPTANCE[n]
        verdict = "PASS" if all(ok for _, ok, _ in clauses) else "FAIL"
        parts = [f"{c}={'ok' if ok else 'miss'}" + (f" [{d}]" if d else "") for c, ok, d in clauses]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  " + "; ".join(parts))


@st.composite
def small_graphs(draw, min_n=1, max_n=9, connected=False):
    n = draw(st.integers(min_n, max_n))
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    g = build_graph(range(1, n + 1), chosen)
    if connected and not g.is_connected():
        spine = [(k, k + 1) for k in range(1, n)]
        g = build_graph(range(1, n + 1), set(chosen) | set(spine))
    return g


@st.composite
def small_trees(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    parents = [draw(st.integers(1, v - 1)) for v in range(2, n + 1)]
    return build_graph(range(1, n + 1), [(v, p) for v, p in zip(range(2, n + 1), parents)])


@pytest.fixture
def fig1():
    from csmabp.graph import fig1_graph
    return fig1_graph()


@pytest.fixture
def fig6():
    from csmabp.graph import fig6_graph
    return fig6_graph()
