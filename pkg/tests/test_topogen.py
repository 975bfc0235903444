import itertools

import pytest
from hypothesis import given, settings, strategies as st

from pathletsim.topogen import GenParams, GenerationError, generate

from oracles import area_connected, areas_of, inside


def exp1(areas, seed=0):
    return GenParams(stack_len=2, routers=(10, 10), areas=(areas, areas), edge_prob=0.1,
                     border_fraction=0.5, seed=seed)


def test_single_area_forced_complete():
    topo = generate(GenParams(stack_len=1, routers=(5, 5), areas=(1, 1), edge_prob=1.0, seed=3))
    assert set(topo.stacks.values()) == {(0,)}
    assert len(topo.edges) == 10
    assert {frozenset(e) for e in topo.edges} == {frozenset(p) for p in itertools.combinations(topo.stacks, 2)}


def test_two_sibling_areas_of_ten():
    topo = generate(exp1(2))
    assert len(topo.stacks) == 20
    counts = {}
    for s in topo.stacks.values():
        counts[s] = counts.get(s, 0) + 1
    assert sorted(counts) == [(0, 1), (0, 2)] and set(counts.values()) == {10}


def test_half_the_routers_marked_per_leaf():
    for seed in range(5):
        topo = generate(exp1(3, seed))
        for area in {s for s in topo.stacks.values()}:
            assert len(set(topo.borders[area])) == 5
            assert all(topo.stacks[v] == area for v in topo.borders[area])


def test_border_minimum_one():
    topo = generate(GenParams(stack_len=2, routers=(1, 1), areas=(2, 2), edge_prob=0.5,
                              border_fraction=0.1, seed=1))
    assert all(len(topo.borders[a]) >= 1 for a in {s for s in topo.stacks.values()})


def test_same_seed_same_topology():
    a, b = generate(exp1(4, 7)), generate(exp1(4, 7))
    assert (a.stacks, a.edges, a.borders) == (b.stacks, b.edges, b.borders)
    assert generate(exp1(4, 8)).edges != a.edges


@pytest.mark.parametrize("bad", [
    dict(edge_prob=0.0), dict(edge_prob=1.5), dict(border_fraction=0.0), dict(stack_len=0),
    dict(routers=(5, 3)), dict(areas=(0, 2)), dict(dest_prob=2.0),
])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        generate(GenParams(**bad))


def test_unsatisfiable_connectivity_reports_seed():
    with pytest.raises(GenerationError, match="seed"):
        generate(GenParams(stack_len=1, routers=(30, 30), edge_prob=0.001, seed=5, retry_cap=3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.floats(0.2, 1.0), st.integers(0, 10_000))
def test_structure(n, r, a, p, seed):
    topo = generate(GenParams(stack_len=n, routers=(r, r + 1), areas=(a, a), edge_prob=p,
                              border_fraction=0.5, seed=seed, retry_cap=5000))
    stacks = topo.stacks
    assert all(len(s) == n and s[0] == 0 for s in stacks.values())
    edges = set(topo.edges)
    for area in areas_of(stacks.values()):
        assert area_connected(stacks, edges, area)
    for area in areas_of(stacks.values()):
        kids = {s[: len(area) + 1] for s in stacks.values() if inside(s, area) and len(s) > len(area)}
        members = [{v for v, s in stacks.items() if inside(s, k)} for k in kids]
        for x, y in itertools.combinations(members, 2):
            assert not x & y
    assert all(a in stacks and b in stacks and a != b for a, b in topo.edges)
    topo.to_scenario()
