"""Acceptance checks; each prints one PASS/FAIL line."""
import statistics
import time

import numpy as np
import pytest

from pathletsim import dataplane
from pathletsim.cli import PRESETS, one_run
from pathletsim.engine import RunConfig, run
from pathletsim.invariants import InvariantBreach
from pathletsim.labels import BOTTOM, extends, in_area, join, project
from pathletsim.node import Rule
from pathletsim.scenario import Action, fig1
from pathletsim.stats import coeff_variation, ols, summarize
from pathletsim.topogen import generate

from helpers import fault_scenarios, random_scenarios
from oracles import border_mismatches, consistency_report


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{n}] {title}" + (f": {detail}" if detail else ""))
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def fig():
    return run(fig1(), 0).nodes


@pytest.fixture(scope="module")
def sweeps():
    config = RunConfig(trace=False)
    out = {}
    for name in ("exp1", "exp2"):
        preset = PRESETS[name]
        out[name] = [one_run((name, p, s, config)) for p in preset.points for s in range(5)]
    return out


def test_1_operator_table(report):
    t0 = time.perf_counter()
    got = [join((0, 1), (0, 2, 1)), join((), (0, 1)),
           project((0, 2, 1), (0, 1)), project((0, 1, 3), (0,)), project((0, 1, 3), (0, 1))]
    want = [(0,), (), (0, 2), (0, 1), (0, 1, 3)]
    side = (extends((0, 1), (0, 1, 3)) and not extends((0, 2), (0, 1, 3))
            and in_area((0, 1, 3), (0, 1)) and not in_area((0, 2, 1), (0, 1)))
    elapsed = time.perf_counter() - t0
    report(1, "operator worked values", got == want and side and elapsed < 1, f"{got} in {elapsed * 1e3:.2f} ms")


def test_2_dissemination_visibility(report, fig):
    p = fig["v2"].atomic_to("v4")
    holders = {n for n, node in fig.items() if p.key in node.known or n == "v2"}
    ok = holders == {"v1", "v2", "v3", "v5"} and p.scope == (0, 1, BOTTOM)
    report(2, "v2->v4 atomic pathlet stored exactly inside (0 1)", ok, f"holders={sorted(holders)}")


def test_3_multipath_end_to_end(report, fig):
    v7 = fig["v7"]
    first, last = v7.atomic_to("v5").fid, fig["v4"].atomic_to("v6").fid
    delivered = set()
    for ch in dataplane.routes(v7, "d", cap=None):
        h = dataplane.build_header(v7, ch)
        d = dataplane.walk(fig, "v7", h, "d")
        if d.delivered and d.path[-1] == "v6" and len(h) == 3 and h[0] == first and h[2] == last:
            delivered.add(h)
    middles = {h[1] for h in delivered}
    ok = len(middles) >= 2 and all(fig["v5"].nh.get(m) is not None for m in middles)
    report(3, "v7 has two delivering (a x c)-shaped headers to d", ok, f"headers={sorted(delivered)}")


def test_4_border_discovery_oracle(report):
    bad = total = 0
    for i, sc in enumerate(random_scenarios(404, 200)):
        nodes = run(sc, i, RunConfig(trace=False)).nodes
        bad += len(border_mismatches(nodes))
        total += 1
    report(4, "border discovery equals global definition", bad == 0 and total == 200,
           f"{bad} mismatches over {total} topologies")


def test_5_invariants_under_faults(report):
    breaches = []
    for i, sc in enumerate(fault_scenarios(505, 50)):
        try:
            run(sc, i, RunConfig(assert_invariants=True, trace=False))
        except InvariantBreach as err:
            breaches.append((i, str(err)))
    report(5, "scope confinement and acyclic expansion after every event", not breaches,
           f"{len(breaches)} violations over 50 fault scenarios" + (f"; first {breaches[0]}" if breaches else ""))


def test_6_transparent_replacement(report):
    sc = fig1()
    sc.script = [Action(1000, "fail_link", ("v2", "v3"))]
    r = run(sc, 0, RunConfig(rule=Rule.SHORTEST_HOPS))
    area = {n for n, node in r.nodes.items() if in_area(node.stack, (0, 1, 3))}
    after = [(t, a, b, m) for t, a, b, m in r.sent if t >= 1000 and m.kind != "Hello"]
    outside = [(t, a, b, str(m)) for t, a, b, m in after if not {a, b} <= area]
    crossing = [p for p in r.nodes["v3"].composed() if p.end == "v2"]
    ok = not outside and crossing and dataplane.walk(r.nodes, "v3", (crossing[0].fid,)).path == ["v3", "v1", "v2"]
    report(6, "intra-area failure re-routed without messages outside the area", ok,
           f"{len(after)} messages after failure, {len(outside)} outside")


def test_7_eventual_consistency(report):
    bad, stranded, runs = [], 0, 0
    corpus = list(fault_scenarios(707, 200)) + list(random_scenarios(708, 100))
    for i, sc in enumerate(corpus):
        nodes = run(sc, i, RunConfig(trace=False)).nodes
        b, s = consistency_report(nodes)
        bad += [(i,) + x for x in b]
        stranded += bool(s)
        runs += 1
    report(7, "stores agree at every permitted node", not bad,
           f"{len(bad)} divergences over {runs} scenarios ({stranded} with unreachable stranded copies)"
           + (f"; first {bad[0]}" if bad else ""))


@pytest.mark.slow
def test_8_experiment_one_trend(report, sweeps):
    rows = sweeps["exp1"]
    fit = ols((float(r["edges"]), float(r["avg_pathlets"])) for r in rows)
    report(8, "average stored pathlets vs edges, R^2 >= 0.7", len(rows) == 20 and fit.r_squared >= 0.7,
           f"R^2={fit.r_squared:.3f} slope={fit.slope:.3f} over {len(rows)} runs")


@pytest.mark.slow
def test_9_convergence_bound(report, sweeps):
    times = [float(r["convergence_ms"]) for name in ("exp1", "exp2") for r in sweeps[name]]
    worst = max(times)
    report(9, "generated runs converge below 1000 ms", worst < 1000 and len(times) == 35,
           f"max {worst:.1f} ms, median {statistics.median(times):.1f} ms over {len(times)} runs")


def test_10_determinism(report):
    cases = [fig1()] + list(fault_scenarios(1010, 10))
    cases.append(generate(PRESETS["exp1"].params(3, 1)).to_scenario())
    differ = []
    for i, sc in enumerate(cases):
        a, b = run(sc, i), run(sc, i)
        if "\n".join(a.trace).encode() != "\n".join(b.trace).encode() or a.metrics.row("r", i) != b.metrics.row("r", i):
            differ.append(i)
    report(10, "identical seed gives identical trace and CSV row", not differ,
           f"{len(cases)} scenarios, {len(differ)} differ")


DATASETS = [
    [(1, 2.1), (2, 3.9), (3, 6.2), (4, 7.8), (5, 10.1)],
    [(0, 5), (1, 3), (2, 4), (3, 1), (4, 0.5), (5, -1)],
    [(10, 100), (20, 180), (35, 390), (50, 470), (80, 810), (120, 1150), (200, 2100)],
    [(-3, 7), (-1, 2), (0, 1), (2, 3), (4, 9), (6, 20)],
    [(1e-3, 1.0), (2e-3, 1.5), (5e-3, 2.9), (7e-3, 4.2)],
]


def reference(points):
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    n = len(x)
    b = (n * (x * y).sum() - x.sum() * y.sum()) / (n * (x * x).sum() - x.sum() ** 2)
    a = (y.sum() - b * x.sum()) / n
    res = y - a - b * x
    ss_res = (res ** 2).sum()
    return {"slope": b, "intercept": a, "r_squared": 1 - ss_res / ((y - y.mean()) ** 2).sum(),
            "ser": np.sqrt(ss_res / (n - 2)), "cv": y.std(ddof=1) / y.mean()}


def test_11_statistics(report):
    worst = 0.0
    for pts in DATASETS:
        fit, want = ols(pts), reference(pts)
        got = {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared, "ser": fit.ser,
               "cv": coeff_variation(p[1] for p in pts)}
        for k, v in want.items():
            worst = max(worst, abs(got[k] - v) / abs(v))
    report(11, "OLS and c_v match closed form within 1e-9", worst <= 1e-9, f"max relative error {worst:.2e}")
