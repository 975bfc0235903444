"""Recursive hierarchical random topologies.

Leaf areas get random routers wired up Erdős–Rényi style until connected; each
level above joins its children by random links between the children's border
routers until the children form one connected piece.
"""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

from .labels import ROOT, Stack, format_stack
from .scenario import EdgeSpec, NodeSpec, Scenario


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenParams:
    stack_len: int = 2
    routers: Tuple[int, int] = (10, 10)
    areas: Tuple[int, int] = (2, 2)
    edge_prob: float = 0.1
    border_fraction: float = 0.5
    seed: int = 0
    dest_prob: float = 0.0
    retry_cap: int = 1000

    def validate(self) -> "GenParams":
        if self.stack_len < 1:
            raise ValueError("stack length must be at least 1")
        if not 1 <= self.routers[0] <= self.routers[1]:
            raise ValueError(f"bad router range {self.routers}")
        if not 1 <= self.areas[0] <= self.areas[1]:
            raise ValueError(f"bad area range {self.areas}")
        if not 0 < self.edge_prob <= 1:
            raise ValueError(f"edge probability must be in (0, 1], got {self.edge_prob}")
        if not 0 < self.border_fraction <= 1:
            raise ValueError(f"border fraction must be in (0, 1], got {self.border_fraction}")
        if not 0 <= self.dest_prob <= 1:
            raise ValueError(f"destination probability must be in [0, 1], got {self.dest_prob}")
        return self


@dataclass
class GeneratedTopology:
    stacks: Dict[str, Stack] = field(default_factory=dict)
    edges: List[Tuple[str, str]] = field(default_factory=list)
    borders: Dict[Stack, List[str]] = field(default_factory=dict)
    dests: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def to_scenario(self) -> Scenario:
        sc = Scenario()
        for name in sorted(self.stacks):
            sc.nodes[name] = NodeSpec(self.stacks[name], self.dests.get(name, ()))
        sc.edges = [EdgeSpec(a, b) for a, b in self.edges]
        return sc.validate()


def _connected(vertices: Sequence[str], edges: Set[Tuple[str, str]], group: Dict[str, object] = None) -> bool:
    """Connectivity of ``vertices``; with ``group`` the vertices collapse into their groups."""
    key = (lambda v: group[v]) if group else (lambda v: v)
    parent: Dict[object, object] = {key(v): key(v) for v in vertices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(key(a)), find(key(b))
        if ra != rb:
            parent[ra] = rb
    return len({find(x) for x in parent}) <= 1


def _pick_borders(rng: random.Random, routers: Sequence[str], fraction: float) -> List[str]:
    count = max(1, math.floor(len(routers) * fraction + 0.5))
    return sorted(rng.sample(list(routers), min(count, len(routers))))


def generate(params: GenParams) -> GeneratedTopology:
    params.validate()
    topo = GeneratedTopology()

    def rng_for(stack: Stack) -> random.Random:
        return random.Random(f"{params.seed}:{format_stack(stack)}")

    def populate(stack: Stack) -> List[str]:
        rng = rng_for(stack)
        if len(stack) == params.stack_len:
            count = rng.randint(*params.routers)
            prefix = "r" + "".join(f"{x}." for x in stack[1:])
            routers = [f"{prefix}{i}" for i in range(1, count + 1)]
            for r in routers:
                topo.stacks[r] = stack
                if params.dest_prob and rng.random() < params.dest_prob:
                    topo.dests[r] = (f"d{r[1:]}",)
            edges: Set[Tuple[str, str]] = set()
            for _ in range(params.retry_cap):
                for a, b in itertools.combinations(routers, 2):
                    if (a, b) not in edges and rng.random() < params.edge_prob:
                        edges.add((a, b))
                if _connected(routers, edges):
                    break
            else:
                raise GenerationError(f"area {format_stack(stack)} not connected after "
                                      f"{params.retry_cap} rounds (seed {params.seed})")
            topo.edges.extend(sorted(edges))
            marked = _pick_borders(rng, routers, params.border_fraction)
        else:
            count = rng.randint(*params.areas)
            child_of: Dict[str, Stack] = {}
            pool: List[str] = []
            for label in range(1, count + 1):
                child = stack + (label,)
                for r in populate(child):
                    child_of[r] = child
                    pool.append(r)
            for _ in range(params.retry_cap):
                edges = {(a, b) for a, b in itertools.combinations(pool, 2)
                         if child_of[a] != child_of[b] and rng.random() < params.edge_prob}
                if _connected(pool, edges, child_of):
                    break
            else:
                raise GenerationError(f"sub-areas of {format_stack(stack)} not joined after "
                                      f"{params.retry_cap} rounds (seed {params.seed})")
            topo.edges.extend(sorted(edges))
            marked = _pick_borders(rng, pool, params.border_fraction)
        topo.borders[stack] = marked
        return marked

    populate((ROOT,))
    topo.edges.sort()
    return topo
