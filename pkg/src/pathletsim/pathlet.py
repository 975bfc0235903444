"""Pathlet values, their classification and chain enumeration."""
from __future__ import annotations

import enum
import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .labels import BOTTOM, ROOT, Stack, extends, format_stack, is_atomic_scope, parse_stack

VertexId = str
Fid = int

DEFAULT_CAP = 16


class PathletKey(NamedTuple):
    start: VertexId
    fid: Fid


class Kind(enum.Enum):
    ATOMIC = "atomic"
    CROSSING = "crossing"
    FINAL = "final"


class PathletError(ValueError):
    """Invalid pathlet; ``code`` names the broken rule."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class Pathlet:
    fid: Fid
    start: VertexId
    end: VertexId
    scope: Stack
    dests: FrozenSet[str] = field(default_factory=frozenset)
    weight: float = 0.0

    @cached_property
    def key(self) -> PathletKey:
        return PathletKey(self.start, self.fid)

    @property
    def kind(self) -> Kind:
        return classify(self)

    def __str__(self) -> str:
        return format_pathlet(self)


def classify(p: Pathlet) -> Kind:
    if BOTTOM in p.scope[:-1]:
        raise PathletError("interior-bottom", f"bottom label before the end of {format_stack(p.scope)}")
    if is_atomic_scope(p.scope):
        return Kind.ATOMIC
    return Kind.FINAL if p.dests else Kind.CROSSING


def validate(p: Pathlet) -> Pathlet:
    """Return ``p`` unchanged or raise PathletError with a rule code."""
    if p.start == p.end:
        raise PathletError("start-equals-end", f"pathlet {p.fid} starts and ends at {p.start}")
    if not p.scope:
        raise PathletError("empty-scope", f"pathlet {p.fid} has an empty scope")
    if p.scope[0] != ROOT:
        raise PathletError("missing-root", f"scope {format_stack(p.scope)} does not start with the root label")
    if BOTTOM in p.scope[:-1]:
        raise PathletError("interior-bottom", f"bottom label inside {format_stack(p.scope)}")
    if len(p.scope) < 2:
        raise PathletError("scope-too-short", f"scope {format_stack(p.scope)} names no area below the root")
    if p.weight < 0:
        raise PathletError("negative-weight", f"pathlet {p.fid} has weight {p.weight}")
    return p


def format_pathlet(p: Pathlet) -> str:
    dests = ",".join(sorted(p.dests))
    return f"<{p.fid},{p.start},{p.end},{format_stack(p.scope)},{{{dests}}}>"


def parse_pathlet(text: str) -> Pathlet:
    body = text.strip()
    if not (body.startswith("<") and body.endswith(">")):
        raise ValueError(f"not a pathlet: {text!r}")
    head, _, rest = body[1:-1].partition("(")
    scope_text, _, tail = rest.partition(")")
    fid, start, end, _ = head.split(",")
    dests_text = tail.strip(",").strip()
    if not (dests_text.startswith("{") and dests_text.endswith("}")):
        raise ValueError(f"bad destination set in {text!r}")
    dests = frozenset(d for d in dests_text[1:-1].split(",") if d)
    return Pathlet(int(fid), start.strip(), end.strip(), parse_stack("(" + scope_text + ")"), dests)


def order_key(p: Pathlet) -> Tuple[VertexId, Fid]:
    return (p.start, p.fid)


Chain = Tuple[Pathlet, ...]
# cost of a partial chain, compared lexicographically; must never decrease when a pathlet is appended
CostFn = Callable[[Chain], Tuple[float, ...]]
# veto hook: (chain so far, candidate next pathlet) -> allowed?
AllowFn = Callable[[Chain, Pathlet], bool]


def hop_cost(chain: Chain) -> Tuple[float, ...]:
    return (len(chain),)


def _hop_distances(adj: Dict[VertexId, List[Pathlet]], target: VertexId) -> Dict[VertexId, int]:
    rev: Dict[VertexId, set] = defaultdict(set)
    for plist in adj.values():
        for p in plist:
            rev[p.end].add(p.start)
    dist = {target: 0}
    todo = deque([target])
    while todo:
        x = todo.popleft()
        for y in rev.get(x, ()):
            if y not in dist:
                dist[y] = dist[x] + 1
                todo.append(y)
    return dist


def search_chains(
    pool: Iterable[Pathlet],
    u: VertexId,
    v: VertexId,
    area: Stack,
    cap: Optional[int] = DEFAULT_CAP,
    cost: CostFn = hop_cost,
    allow: Optional[AllowFn] = None,
) -> List[Chain]:
    """Cycle-free chains from ``u`` to ``v`` inside ``area``, cheapest first.

    Ties are broken by the sequence of (start, fid) keys, so the output order is
    a pure function of the pool.  The last element of every cost tuple is read
    as a hop count for the search heuristic.
    """
    if u == v or cap == 0:
        return []
    adj: Dict[VertexId, List[Pathlet]] = defaultdict(list)
    for p in pool:
        if extends(area, p.scope):
            adj[p.start].append(p)
    for plist in adj.values():
        plist.sort(key=order_key)
    dist = _hop_distances(adj, v)
    if u not in dist:
        return []

    def priority(chain: Chain, at: VertexId) -> Tuple[float, ...]:
        c = cost(chain)
        return c[:-1] + (c[-1] + dist[at],)

    out: List[Chain] = []
    heap: list = [(priority((), u), (), (), u, frozenset([u]))]
    while heap:
        _, keys, chain, at, seen = heapq.heappop(heap)
        if at == v:
            out.append(chain)
            if cap is not None and len(out) >= cap:
                break
            continue
        for p in adj.get(at, ()):
            if p.end in seen or p.end not in dist:
                continue
            if allow is not None and not allow(chain, p):
                continue
            nxt = chain + (p,)
            heapq.heappush(heap, (priority(nxt, p.end), keys + (order_key(p),), nxt, p.end, seen | {p.end}))
    return out


def chains(
    pool: Iterable[Pathlet], u: VertexId, v: VertexId, area: Stack, cap: Optional[int] = DEFAULT_CAP
) -> List[Chain]:
    return search_chains(pool, u, v, area, cap)


def chain_fids(chain: Sequence[Pathlet]) -> Tuple[Fid, ...]:
    return tuple(p.fid for p in chain)


def chain_is_connected(chain: Sequence[Pathlet]) -> bool:
    return all(a.end == b.start for a, b in zip(chain, chain[1:]))
