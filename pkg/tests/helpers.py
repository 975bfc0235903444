"""Scenario builders shared by the property, fault and acceptance tests."""
from __future__ import annotations

import random
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from oracles import fault_script, small_topology

from pathletsim.scenario import Action, EdgeSpec, NodeSpec, Scenario


def scenario_of(stacks: Dict[str, tuple], edges: Sequence[Tuple[str, str]],
                dests: Optional[Dict[str, tuple]] = None) -> Scenario:
    sc = Scenario()
    for v in sorted(stacks):
        sc.nodes[v] = NodeSpec(tuple(stacks[v]), (dests or {}).get(v, ()))
    sc.edges = [EdgeSpec(a, b) for a, b in edges]
    return sc.validate()


def random_scenarios(seed: int, count: int, max_vertices: int = 8) -> Iterator[Scenario]:
    rng = random.Random(seed)
    for _ in range(count):
        stacks, edges = small_topology(rng, max_vertices)
        dests = {v: (f"d{v}",) for v in stacks if rng.random() < 0.3}
        yield scenario_of(stacks, edges, dests)


def fault_scenarios(seed: int, count: int, max_steps: int = 4) -> Iterator[Scenario]:
    rng = random.Random(seed)
    for _ in range(count):
        stacks, edges = small_topology(rng)
        dests = {v: (f"d{v}",) for v in stacks if rng.random() < 0.3}
        sc = scenario_of(stacks, edges, dests)
        sc.script = [Action(t, kind, tuple(args), dict(opts))
                     for t, kind, args, opts in fault_script(rng, stacks, edges, rng.randint(1, max_steps))]
        yield sc.validate()
