"""Per-node control plane.

``Node`` holds one router's protocol state.  Every handler takes the event and
a clock, mutates the state and returns a ``NodeOutput`` for the engine to act
on.  Nothing here knows about other nodes except through messages.
"""
from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

import networkx as nx

from .labels import (
    BOTTOM,
    Stack,
    extends,
    format_stack,
    in_area,
    join,
    project,
    sort_key,
    strictly_extends,
)
from .messages import (
    HELLO,
    PATHLET,
    WITHDRAW,
    WITHDRAWLET,
    Message,
    NodeOutput,
    Stamp,
    hello,
)
from .pathlet import (
    DEFAULT_CAP,
    Chain,
    Fid,
    Kind,
    Pathlet,
    PathletError,
    PathletKey,
    VertexId,
    classify,
    search_chains,
    validate,
)


class Clock(Protocol):
    now: float

    def stamp(self) -> Stamp: ...


class Rule(enum.Enum):
    ALL_CHAINS = "all"
    SHORTEST_HOPS = "hops"
    SHORTEST_WEIGHT = "weight"
    AVOID_AREAS = "avoid"


@dataclass(frozen=True)
class Filter:
    """Suppress sending matching pathlets to ``neighbor``; ``None`` fields match anything."""

    neighbor: VertexId
    start: Optional[VertexId] = None
    end: Optional[VertexId] = None
    scope: Optional[Stack] = None

    def matches(self, n: VertexId, start: Optional[VertexId], end: Optional[VertexId], scope: Stack) -> bool:
        if n != self.neighbor:
            return False
        if self.start is not None and start != self.start:
            return False
        if self.end is not None and end != self.end:
            return False
        return self.scope is None or scope == self.scope


@dataclass(frozen=True)
class Policy:
    rule: Rule = Rule.ALL_CHAINS
    cap: int = DEFAULT_CAP
    filters: Tuple[Filter, ...] = ()


@dataclass(frozen=True)
class Timers:
    hello: float = 1000.0
    dead: float = 3000.0
    forward_clear: float = 2000.0
    pathlet: float = 30000.0
    history: float = 60000.0


@dataclass(frozen=True)
class HistoryEntry:
    scope: Stack
    t: Stamp
    positive: bool


def is_final(p: Pathlet) -> bool:
    return classify(p) is Kind.FINAL


def is_atomic(p: Pathlet) -> bool:
    return bool(p.scope) and p.scope[-1] == BOTTOM


def admits(sender_stack: Stack, neighbor: VertexId, neighbor_stack: Stack, scope: Stack,
           start: Optional[VertexId] = None, end: Optional[VertexId] = None) -> bool:
    """Propagation conditions for one neighbor, before filters and split horizon."""
    if not scope or not neighbor_stack:
        return False
    if neighbor == start:
        return True
    shared = join(sender_stack, neighbor_stack)
    if strictly_extends(shared, scope[:-1]):
        return False
    if extends(scope, shared):
        return False
    if scope == project(neighbor_stack, sender_stack):
        return False
    return neighbor != end


def discover_border_vertices(me: VertexId, area: Stack, pool: Iterable[Pathlet]) -> FrozenSet[VertexId]:
    """Vertices other than ``me`` proven to be borders of ``area`` by pathlet pairs.

    A witness pair touches v with one pathlet whose scope minus its last label
    extends ``area`` (so v is inside) and one atomic pathlet whose link leaves
    ``area`` (its scope minus the bottom label is a strict prefix of ``area``).
    Accepting any extension, not just ``area`` itself, finds borders whose only
    in-area links run through deeper sub-areas.
    """
    inside: Dict[VertexId, Set[Tuple[VertexId, VertexId]]] = defaultdict(set)
    leaving: Dict[VertexId, Set[Tuple[VertexId, VertexId]]] = defaultdict(set)
    for p in pool:
        if len(p.scope) < 2:
            continue
        bar = p.scope[:-1]
        pair = (p.start, p.end)
        if extends(area, bar):
            inside[p.start].add(pair)
            inside[p.end].add(pair)
        if p.scope[-1] == BOTTOM and strictly_extends(bar, area):
            leaving[p.start].add(pair)
            leaving[p.end].add(pair)
    found = set()
    for v, pairs in inside.items():
        if v == me or v not in leaving:
            continue
        other = leaving[v]
        if len(pairs) == 1 and pairs == other:
            continue
        found.add(v)
    return frozenset(found)


@dataclass
class _Plan:
    """What one composition pass decided for one area."""

    keep: Dict[Fid, Pathlet] = field(default_factory=dict)
    dropped: List[Pathlet] = field(default_factory=list)
    updated: List[Pathlet] = field(default_factory=list)
    fresh: List[Tuple[Pathlet, Chain]] = field(default_factory=list)


class Node:
    def __init__(self, node_id: VertexId, stack: Stack, dests: Iterable[str] = (),
                 policy: Policy = Policy(), timers: Timers = Timers(), first_fid: Fid = 1,
                 link_weights: Optional[Dict[VertexId, float]] = None):
        self.id = node_id
        self.stack: Stack = tuple(stack)
        self.own_dests: FrozenSet[str] = frozenset(dests)
        self.policy = policy
        self.timers = timers
        self.link_weights = dict(link_weights or {})
        self.links: Set[VertexId] = set()
        self.neighbor_stacks: Dict[VertexId, Stack] = {}
        self.neighbor_dests: Dict[VertexId, FrozenSet[str]] = {}
        self.last_heard: Dict[VertexId, float] = {}
        self.known: Dict[PathletKey, Pathlet] = {}
        self.expiry: Dict[PathletKey, float] = {}
        self.crossing: Dict[Stack, Dict[Fid, Pathlet]] = {}
        self.final: Dict[Stack, Dict[Fid, Pathlet]] = {}
        self.borders: Dict[Stack, FrozenSet[VertexId]] = {}
        self.history: Dict[PathletKey, HistoryEntry] = {}
        self.bulk_history: Dict[Tuple[VertexId, Stack], Stamp] = {}
        self.fids: Dict[Fid, Tuple[Fid, ...]] = {}
        self.nh: Dict[Fid, VertexId] = {}
        self.components: Dict[Fid, Tuple[PathletKey, ...]] = {}
        self.next_fid = first_fid
        self.active = False
        self._dominance_cache: Optional[Tuple[int, dict]] = None
        # multiset of (start, end) over known pathlets; version bumps when its support changes
        self._edge_count: Counter = Counter()
        self._edge_version = 0
        # area -> (in-area pool it was computed from, {(target, final, policy): chains})
        self._chain_cache: Dict[Stack, Tuple[Tuple[Pathlet, ...], dict]] = {}

    # ------------------------------------------------------------------ queries

    def live_neighbors(self) -> List[Tuple[VertexId, Stack]]:
        return [(n, s) for n, s in sorted(self.neighbor_stacks.items()) if s and n in self.links]

    def propagation_targets(self, sender_stack: Stack, scope: Stack, exclude: Optional[VertexId] = None,
                            start: Optional[VertexId] = None, end: Optional[VertexId] = None) -> List[VertexId]:
        out = []
        for n, sn in self.live_neighbors():
            if n == exclude or not admits(sender_stack, n, sn, scope, start, end):
                continue
            if any(f.matches(n, start, end, scope) for f in self.policy.filters):
                continue
            out.append(n)
        return out

    def is_border_vertex(self, area: Stack, stack: Optional[Stack] = None) -> bool:
        stack = self.stack if stack is None else stack
        if not in_area(stack, area):
            return False
        return any(not in_area(sn, area) for _, sn in self.live_neighbors())

    def in_scope(self, scope: Stack) -> bool:
        """Scope confinement: a received pathlet must name an area around this node."""
        return len(scope) >= 2 and extends(scope[:-1], self.stack)

    def deliverable(self, p: Pathlet, stack: Optional[Stack] = None) -> bool:
        """Some current neighbor could legally hand us ``p`` if we sat at ``stack``."""
        stack = self.stack if stack is None else stack
        for n, sn in self.live_neighbors():
            if n != p.start:
                if not (len(p.scope) >= 2 and extends(p.scope[:-1], sn)):
                    continue
                # crossing and final pathlets never travel inside their own area
                if not is_atomic(p) and extends(p.scope, sn):
                    continue
            if admits(sn, self.id, stack, p.scope, p.start, p.end):
                return True
        return False

    def _orphans(self, stack: Stack) -> List[PathletKey]:
        """Received pathlets no neighbor could deliver any more; their updates would never reach us."""
        return [k for k in sorted(self.known)
                if k.start != self.id and not self.deliverable(self.known[k], stack)]

    def own_pathlet(self, fid: Fid) -> Optional[Pathlet]:
        p = self.known.get(PathletKey(self.id, fid))
        if p is not None:
            return p
        for store in (self.crossing, self.final):
            for group in store.values():
                if fid in group:
                    return group[fid]
        return None

    def composed(self) -> List[Pathlet]:
        out = []
        for store in (self.crossing, self.final):
            for area in sorted(store, key=sort_key):
                out.extend(store[area][f] for f in sorted(store[area]))
        return out

    def all_pathlets(self) -> List[Pathlet]:
        return [self.known[k] for k in sorted(self.known)] + self.composed()

    def pathlets_stored(self) -> int:
        return len(self.known) + sum(len(g) for g in self.crossing.values()) + sum(len(g) for g in self.final.values())

    def atomic_to(self, neighbor: VertexId) -> Optional[Pathlet]:
        for k, p in self.known.items():
            if k.start == self.id and p.end == neighbor:
                return p
        return None

    # ------------------------------------------------------------------ helpers

    def _new_fid(self) -> Fid:
        fid = self.next_fid
        self.next_fid += 1
        return fid

    def _send_pathlet(self, out: NodeOutput, targets: Iterable[VertexId], p: Pathlet, t: Stamp) -> None:
        for n in targets:
            out.send(n, Message(PATHLET, p.start, self.id, t, pathlet=p))

    def _send_withdrawlet(self, out: NodeOutput, targets: Iterable[VertexId], key: PathletKey,
                          scope: Stack, t: Stamp) -> None:
        for n in targets:
            out.send(n, Message(WITHDRAWLET, key.start, self.id, t, stack=scope, fid=key.fid))

    def _mark_negative(self, out: NodeOutput, key: PathletKey, scope: Stack, t: Stamp) -> None:
        self.history[key] = HistoryEntry(scope, t, False)
        out.timer("purge", self.timers.history, (key, t))

    def _mark_positive(self, key: PathletKey, scope: Stack, t: Stamp) -> None:
        self.history[key] = HistoryEntry(scope, t, True)

    def _correct(self, out: NodeOutput, key: PathletKey, entry: HistoryEntry, to: VertexId) -> None:
        """Tell ``to`` what we know about ``key``, with the stored timestamp."""
        if entry.positive:
            p = self.known.get(key) or (self.own_pathlet(key.fid) if key.start == self.id else None)
            if p is not None:
                out.send(to, Message(PATHLET, key.start, self.id, entry.t, pathlet=p))
        else:
            out.send(to, Message(WITHDRAWLET, key.start, self.id, entry.t, stack=entry.scope, fid=key.fid))

    def _set_forwarding(self, p: Pathlet, chain: Sequence[Pathlet] = ()) -> None:
        if chain:
            self.fids[p.fid] = tuple(q.fid for q in chain[1:])
            self.nh[p.fid] = chain[0].end
            self.components[p.fid] = tuple(q.key for q in chain)
        else:
            self.fids[p.fid] = ()
            self.nh[p.fid] = p.end
            self.components.pop(p.fid, None)

    def _hello_all(self, out: NodeOutput, active: bool, periodic: bool = False) -> None:
        for n in sorted(self.links):
            out.send(n, hello(self.id, self.stack, self.own_dests, active, periodic))

    def _dump(self, out: NodeOutput, to: VertexId, new_stack: Stack, old_stack: Optional[Stack],
              sender_new: Stack, sender_old: Stack, skip: Set[PathletKey] = frozenset()) -> None:
        """Send ``to`` everything it is newly allowed to see.

        With ``old_stack=None`` this is the full dump for a (re)booted neighbor.
        """
        filters = self.policy.filters

        def visible(sender: Stack, nstack: Optional[Stack], scope: Stack, start, end) -> bool:
            if nstack is None:
                return False
            if not admits(sender, to, nstack, scope, start, end):
                return False
            return not any(f.matches(to, start, end, scope) for f in filters)

        for p in self.all_pathlets():
            if p.key in skip:
                continue
            if visible(sender_new, new_stack, p.scope, p.start, p.end) and not (
                    old_stack is not None and visible(sender_old, old_stack, p.scope, p.start, p.end)):
                out.send(to, Message(PATHLET, p.start, self.id, self.history[p.key].t, pathlet=p))
        for key in sorted(self.history):
            entry = self.history[key]
            if entry.positive or key in skip:
                continue
            if visible(sender_new, new_stack, entry.scope, key.start, None) and not (
                    old_stack is not None and visible(sender_old, old_stack, entry.scope, key.start, None)):
                out.send(to, Message(WITHDRAWLET, key.start, self.id, entry.t, stack=entry.scope, fid=key.fid))

    # ------------------------------------------------------------------ Alg. 2

    def update_known_pathlets(self, clock: Clock, out: NodeOutput, s_old: Stack, s_new: Stack,
                              pi_new: Dict[PathletKey, Pathlet], force: bool = False) -> None:
        old = self.known
        added = [pi_new[k] for k in sorted(k for k, p in pi_new.items() if old.get(k) is not p and old.get(k) != p)]
        removed = [old[k] for k in sorted(k for k, p in old.items() if pi_new.get(k) is not p and pi_new.get(k) != p)]
        if not added and not removed and not force:
            return
        mine = self.id
        # withdrawlets for updated own instances are stamped before the new
        # instance so the two can never be mistaken for one another downstream
        for p_old in removed:
            if p_old.start != mine or p_old.key not in pi_new:
                continue
            p_new = pi_new[p_old.key]
            before = self.propagation_targets(s_old, p_old.scope, start=mine, end=p_old.end)
            after = set(self.propagation_targets(s_new, p_new.scope, start=mine, end=p_new.end))
            t = clock.stamp()
            self._send_withdrawlet(out, [n for n in before if n not in after], p_old.key, p_old.scope, t)
        for p in added:
            if p.start != mine:
                continue
            self._set_forwarding(p)
            t = clock.stamp()
            self._mark_positive(p.key, p.scope, t)
            self._send_pathlet(out, self.propagation_targets(s_new, p.scope, start=mine, end=p.end), p, t)
        for p_old in removed:
            if p_old.start != mine or p_old.key in pi_new:
                continue
            t = clock.stamp()
            self._send_withdrawlet(out, self.propagation_targets(s_old, p_old.scope, start=mine, end=p_old.end),
                                   p_old.key, p_old.scope, t)
            self._mark_negative(out, p_old.key, p_old.scope, t)
            out.timer("fwd_clear", self.timers.forward_clear, p_old.fid)
        self.known = dict(pi_new)
        out.changed = True
        for p in removed:
            pair = (p.start, p.end)
            self._edge_count[pair] -= 1
            if not self._edge_count[pair]:
                del self._edge_count[pair]
                self._edge_version += 1
        for p in added:
            pair = (p.start, p.end)
            if not self._edge_count[pair]:
                self._edge_version += 1
            self._edge_count[pair] += 1
        for k in list(self.expiry):
            if k not in self.known:
                del self.expiry[k]
        self._arm_expiry(clock, out, added)
        touched = {p.scope for p in added} | {p.scope for p in removed}
        self.update_composed_pathlets(clock, out, s_old, s_new, touched, force)

    def _dominators(self) -> Tuple[dict, bool]:
        """Immediate dominators over the known-pathlet graph, and whether they were recomputed."""
        cached = self._dominance_cache
        if cached is not None and cached[0] == self._edge_version:
            return cached[1], False
        g = nx.DiGraph()
        g.add_node(self.id)
        g.add_edges_from(self._edge_count)
        idom = nx.immediate_dominators(g, self.id)
        self._dominance_cache = (self._edge_version, idom)
        return idom, True

    def _usable(self, p: Pathlet, idom: dict) -> bool:
        """Some cycle-free chain from here reaches p.start without passing p.end."""
        if p.start == self.id:
            return True
        if p.end == self.id or p.start not in idom:
            return False
        v = p.start
        while v != self.id:
            v = idom[v]
            if v == p.end:
                return False
        return True

    def _arm_expiry(self, clock: Clock, out: NodeOutput, added: Sequence[Pathlet]) -> None:
        if not self.known:
            return
        idom, fresh = self._dominators()
        # same graph means every older entry is already armed correctly
        keys = sorted(self.known) if fresh else [p.key for p in added if p.key in self.known]
        for k in keys:
            p = self.known[k]
            if self._usable(p, idom):
                self.expiry.pop(k, None)
            elif k not in self.expiry:
                deadline = clock.now + self.timers.pathlet
                self.expiry[k] = deadline
                out.timer("expire", self.timers.pathlet, (k, deadline))

    # ------------------------------------------------------------------ Alg. 3 / Alg. 4

    def areas_of_interest(self, stack: Optional[Stack] = None) -> List[Stack]:
        stack = self.stack if stack is None else stack
        areas = {project(stack, sn) for _, sn in self.live_neighbors() if not in_area(sn, stack)}
        areas |= {a for a, g in self.crossing.items() if g}
        areas |= {a for a, g in self.final.items() if g}
        areas.discard(())
        return sorted(areas, key=sort_key)

    def destination_vertices(self, area: Stack, pool: Iterable[Pathlet]) -> FrozenSet[VertexId]:
        return frozenset(p.end for p in pool
                         if p.dests and p.end != self.id and len(p.scope) >= 2 and extends(area, p.scope[:-1]))

    def select_chains(self, pool: Sequence[Pathlet], area: Stack, target: VertexId, final: bool) -> List[Chain]:
        """Chains the composition rule picks toward ``target``."""
        sub = tuple(p for p in pool if extends(area, p.scope))
        cached = self._chain_cache.get(area)
        if cached is None or len(cached[0]) != len(sub) or any(a is not b for a, b in zip(cached[0], sub)):
            cached = (sub, {})
            self._chain_cache[area] = cached
        key = (target, final, self.policy.rule, self.policy.cap)
        if key not in cached[1]:
            cached[1][key] = self._select(sub, area, target, final)
        return cached[1][key]

    def _select(self, pool: Sequence[Pathlet], area: Stack, target: VertexId, final: bool) -> List[Chain]:
        members: Dict[Stack, Set[VertexId]] = defaultdict(set)
        for p in pool:
            if not is_atomic(p):
                members[p.scope].update((p.start, p.end))

        def allow(chain: Chain, p: Pathlet) -> bool:
            if final and p.end == target:
                if not p.dests:
                    return False
            elif p.dests and not is_atomic(p):
                return False
            used = [q.scope for q in chain if not is_atomic(q)]
            for c in used:
                if p.end in members[c]:
                    return False
            if not is_atomic(p):
                if p.scope in used:
                    return False
                visited = {self.id} | {q.end for q in chain}
                visited.discard(p.start)
                if visited & members[p.scope]:
                    return False
            return True

        rule = self.policy.rule
        if rule is Rule.ALL_CHAINS:
            return search_chains(pool, self.id, target, area, self.policy.cap, allow=allow)
        if rule is Rule.SHORTEST_HOPS:
            cost = lambda ch: (len(ch),)
        elif rule is Rule.SHORTEST_WEIGHT:
            cost = lambda ch: (sum(q.weight for q in ch), len(ch))
        else:
            cost = lambda ch: (sum(0 if is_atomic(q) else 1 for q in ch), len(ch))
        return search_chains(pool, self.id, target, area, 1, cost=cost, allow=allow)

    def is_pathlet_composable(self, p: Pathlet, pool: Sequence[Pathlet], admissible_ends: Iterable[VertexId],
                              selected: Optional[List[Chain]] = None) -> bool:
        if p.end not in set(admissible_ends):
            return False
        if selected is None:
            selected = self.select_chains(pool, p.scope, p.end, bool(p.dests))
        stored = self.components.get(p.fid)
        return any(tuple(q.key for q in ch) == stored for ch in selected)

    def _plan(self, store: Dict[Stack, Dict[Fid, Pathlet]], area: Stack, pool: List[Pathlet],
              targets: FrozenSet[VertexId], final: bool) -> _Plan:
        plan = _Plan()
        existing = store.get(area, {})
        picks = {w: self.select_chains(pool, area, w, final) for w in sorted(targets)}
        by_keys = {(w, tuple(q.key for q in ch)): ch for w, chains_w in picks.items() for ch in chains_w}
        used: Set[Tuple[VertexId, Tuple[PathletKey, ...]]] = set()
        for fid in sorted(existing):
            p = existing[fid]
            comp = self.components.get(fid)
            chain = by_keys.get((p.end, comp))
            if chain is None or (p.end, comp) in used:
                plan.dropped.append(p)
                continue
            used.add((p.end, comp))
            plan.keep[fid] = p
            dests = chain[-1].dests if final else frozenset()
            weight = sum(q.weight for q in chain)
            if dests != p.dests or weight != p.weight:
                plan.updated.append(replace(p, dests=dests, weight=weight))
        for w, chains_w in picks.items():
            for ch in chains_w:
                if (w, tuple(q.key for q in ch)) in used:
                    continue
                dests = ch[-1].dests if final else frozenset()
                proto = Pathlet(-1, self.id, w, area, dests, sum(q.weight for q in ch))
                plan.fresh.append((proto, ch))
        return plan

    def _compose_area(self, clock: Clock, out: NodeOutput, s_old: Stack, s_new: Stack, area: Stack) -> None:
        pool = [self.known[k] for k in sorted(self.known)]
        border = self.is_border_vertex(area, s_new)
        if border:
            self.borders[area] = discover_border_vertices(self.id, area, pool)
        else:
            self.borders.pop(area, None)
        crossing_targets = self.borders.get(area, frozenset())
        final_targets = self.destination_vertices(area, pool) if border else frozenset()
        inside = [p for p in pool if extends(area, p.scope)]
        plans = [(self.crossing, self._plan(self.crossing, area, inside, crossing_targets, False)),
                 (self.final, self._plan(self.final, area, inside, final_targets, True))]

        # transparent replacement: same (start, end, scope, dests), new chain, old fid
        for store, plan in plans:
            still_dropped = []
            for p_old in plan.dropped:
                idx = next((i for i, (proto, _) in enumerate(plan.fresh)
                            if proto.end == p_old.end and proto.dests == p_old.dests
                            and proto.weight == p_old.weight), None)
                if idx is None:
                    still_dropped.append(p_old)
                    continue
                _, chain = plan.fresh.pop(idx)
                self._set_forwarding(p_old, chain)
                plan.keep[p_old.fid] = p_old
                out.changed = True
            plan.dropped = still_dropped

        existing = sum(len(store.get(area, {})) for store, _ in plans)
        dropped = [p for _, plan in plans for p in plan.dropped]
        if dropped and len(dropped) == existing:
            t = clock.stamp()
            for n in self.propagation_targets(s_old, area, start=self.id):
                out.send(n, Message(WITHDRAW, self.id, self.id, t, stack=area))
            for p in dropped:
                self._mark_negative(out, p.key, area, t)
                out.timer("fwd_clear", self.timers.forward_clear, p.fid)
        else:
            for p in dropped:
                t = clock.stamp()
                self._send_withdrawlet(out, self.propagation_targets(s_old, area, start=self.id, end=p.end),
                                       p.key, area, t)
                self._mark_negative(out, p.key, area, t)
                out.timer("fwd_clear", self.timers.forward_clear, p.fid)
        for store, plan in plans:
            for p in plan.updated:
                plan.keep[p.fid] = p
                t = clock.stamp()
                self._mark_positive(p.key, area, t)
                self._send_pathlet(out, self.propagation_targets(s_new, area, start=self.id, end=p.end), p, t)
            for proto, chain in plan.fresh:
                p = replace(proto, fid=self._new_fid())
                self._set_forwarding(p, chain)
                plan.keep[p.fid] = p
                t = clock.stamp()
                self._mark_positive(p.key, area, t)
                self._send_pathlet(out, self.propagation_targets(s_new, area, start=self.id, end=p.end), p, t)
            if dropped or plan.updated or plan.fresh:
                out.changed = True
            if plan.keep:
                store[area] = plan.keep
            else:
                store.pop(area, None)

    def update_composed_pathlets(self, clock: Clock, out: NodeOutput, s_old: Stack, s_new: Stack,
                                 touched: Iterable[Stack] = (), force: bool = True) -> None:
        touched = set(touched)
        for area in self.areas_of_interest(s_new):
            if not force and not any(extends(area, s) or (len(s) >= 2 and extends(s[:-1], area)) for s in touched):
                continue
            self._compose_area(clock, out, s_old, s_new, area)
        for area in list(self.borders):
            if area not in self.crossing and area not in self.final and not self.is_border_vertex(area, s_new):
                del self.borders[area]

    # ------------------------------------------------------------------ events

    def on_activate(self, clock: Clock) -> NodeOutput:
        out = NodeOutput(changed=True)
        self.active = True
        self._hello_all(out, active=True)
        out.timer("hello", self.timers.hello)
        return out

    def link_up(self, neighbor: VertexId, clock: Clock) -> NodeOutput:
        out = NodeOutput()
        self.links.add(neighbor)
        out.send(neighbor, hello(self.id, self.stack, self.own_dests, False))
        return out

    def link_down(self, neighbor: VertexId, clock: Clock) -> NodeOutput:
        self.links.discard(neighbor)
        return self.on_hello(hello(neighbor, (), frozenset(), False), clock, local=True)

    def on_hello(self, m: Message, clock: Clock, local: bool = False) -> NodeOutput:
        out = NodeOutput()
        o = m.origin
        if o not in self.links and not local:
            out.diagnostics.append(f"hello from non-adjacent {o}")
            return out
        self.last_heard[o] = clock.now
        old_stack = self.neighbor_stacks.get(o, ())
        old_dests = self.neighbor_dests.get(o, frozenset())
        new_stack = m.stack if m.stack and m.stack[0] == self.stack[0] else ()
        if new_stack:
            self.neighbor_stacks[o] = new_stack
            self.neighbor_dests[o] = m.dests
        else:
            self.neighbor_stacks.pop(o, None)
            self.neighbor_dests.pop(o, None)
            self.last_heard.pop(o, None)
        if new_stack and m.active:
            self._dump(out, o, new_stack, None, self.stack, self.stack)
        elif new_stack and new_stack != old_stack:
            self._dump(out, o, new_stack, old_stack or None, self.stack, self.stack)
        new_dests = m.dests if new_stack else frozenset()
        if new_stack == old_stack and new_dests == old_dests:
            return out
        out.changed = True

        pi_new = dict(self.known)
        atom = self.atomic_to(o)
        if new_stack:
            scope = join(self.stack, new_stack) + (BOTTOM,)
            if atom is not None:
                pi_new[atom.key] = replace(atom, scope=scope, dests=new_dests)
            else:
                fresh = Pathlet(self._new_fid(), self.id, o, scope, new_dests, self.link_weights.get(o, 0.0))
                pi_new[fresh.key] = fresh
        elif atom is not None:
            del pi_new[atom.key]
        if old_stack and new_stack != old_stack:
            for k in self._orphans(self.stack):
                del pi_new[k]
                self.history.pop(k, None)
        restamp = []
        if new_stack and new_dests != old_dests:
            for k in sorted(self.known):
                p = self.known[k]
                if k.start != self.id and p.end == o and p.dests != new_dests:
                    pi_new[k] = replace(p, dests=new_dests)
                    restamp.append(k)
        reshaped = join(self.stack, old_stack) != join(self.stack, new_stack) or not old_stack or not new_stack
        self.update_known_pathlets(clock, out, self.stack, self.stack, pi_new, force=reshaped)
        for k in restamp:
            p = self.known.get(k)
            if p is None:
                continue
            t = clock.stamp()
            self._mark_positive(k, p.scope, t)
            self._send_pathlet(out, self.propagation_targets(self.stack, p.scope, start=p.start, end=p.end), p, t)
        return out

    def on_pathlet(self, m: Message, clock: Clock) -> NodeOutput:
        out = NodeOutput()
        p = m.pathlet
        try:
            validate(p)
            classify(p)
        except PathletError as err:
            out.diagnostics.append(f"dropped invalid pathlet from {m.source}: {err.code}")
            return out
        if p.start == self.id:
            current = self.own_pathlet(p.fid)
            if current is None:
                t = clock.stamp()
                self._send_withdrawlet(out, [m.source], p.key, p.scope, t)
                self._mark_negative(out, p.key, p.scope, t)
            elif current != p:
                t = clock.stamp()
                self._mark_positive(p.key, current.scope, t)
                self._send_pathlet(out, [m.source], current, t)
            return out
        if not self.in_scope(p.scope):
            out.diagnostics.append(f"dropped out-of-scope pathlet {p} from {m.source}")
            return out
        entry = self.history.get(p.key)
        # a relay withdrawal carries the stamp of the announcement that caused it; the announcement wins the tie
        if entry is None or entry.t < m.t or (entry.t == m.t and not entry.positive):
            self._mark_positive(p.key, p.scope, m.t)
            targets = self.propagation_targets(self.stack, p.scope, exclude=m.source, start=p.start, end=p.end)
            held = self.known.get(p.key)
            if held is not None and held.scope != p.scope:
                # re-scoped instance: whoever we fed the old one and cannot feed the new one must drop it
                lost = [n for n in self.propagation_targets(self.stack, held.scope, exclude=m.source,
                                                            start=p.start, end=held.end) if n not in targets]
                self._send_withdrawlet(out, lost, p.key, held.scope, m.t)
            for n in targets:
                out.send(n, m.via(self.id))
            pi_new = dict(self.known)
            pi_new[p.key] = p
            self.update_known_pathlets(clock, out, self.stack, self.stack, pi_new)
            out.changed = True
        elif m.t < entry.t:
            self._correct(out, p.key, entry, m.source)
        return out

    def _withdraw_one(self, out: NodeOutput, key: PathletKey, scope: Stack, m: Message,
                      forward_as: Optional[str]) -> bool:
        """Freshness test for one withdrawn pathlet; True when it must be removed."""
        entry = self.history.get(key)
        end = self.known[key].end if key in self.known else None
        if entry is None or entry.t < m.t:
            self._mark_negative(out, key, scope, m.t)
            if forward_as == WITHDRAWLET:
                fwd = Message(WITHDRAWLET, key.start, self.id, m.t, stack=scope, fid=key.fid)
                for n in self.propagation_targets(self.stack, scope, exclude=m.source, start=key.start, end=end):
                    out.send(n, fwd)
            out.changed = True
            return entry is not None and key in self.known
        if m.t < entry.t:
            self._correct(out, key, entry, m.source)
        return False

    def on_withdrawlet(self, m: Message, clock: Clock) -> NodeOutput:
        out = NodeOutput()
        key = PathletKey(m.origin, m.fid)
        if m.origin == self.id:
            entry = self.history.get(key)
            current = self.own_pathlet(m.fid)
            if current is not None and entry is not None and m.t < entry.t:
                self._correct(out, key, entry, m.source)
            elif current is not None and (entry is None or m.t > entry.t):
                t = clock.stamp()
                self._mark_positive(key, current.scope, t)
                self._send_pathlet(out, [m.source], current, t)
            return out
        if not self.in_scope(m.stack):
            out.diagnostics.append(f"dropped out-of-scope withdrawlet {m.origin}/{m.fid}")
            return out
        if self._withdraw_one(out, key, m.stack, m, WITHDRAWLET):
            pi_new = {k: p for k, p in self.known.items() if k != key}
            self.update_known_pathlets(clock, out, self.stack, self.stack, pi_new)
        return out

    def on_withdraw(self, m: Message, clock: Clock) -> NodeOutput:
        out = NodeOutput()
        if m.origin == self.id:
            return out
        if not self.in_scope(m.stack):
            out.diagnostics.append(f"dropped out-of-scope withdraw {m.origin} {format_stack(m.stack)}")
            return out
        bulk_key = (m.origin, m.stack)
        seen = self.bulk_history.get(bulk_key)
        if seen is not None and seen >= m.t:
            return out
        self.bulk_history[bulk_key] = m.t
        out.timer("purge_bulk", self.timers.history, (bulk_key, m.t))
        matching = [self.known[k] for k in sorted(self.known)
                    if k.start == m.origin and self.known[k].scope == m.stack]
        if all(self.history[p.key].t < m.t for p in matching):
            for p in matching:
                self._mark_negative(out, p.key, m.stack, m.t)
            for n in self.propagation_targets(self.stack, m.stack, exclude=m.source, start=m.origin):
                out.send(n, m.via(self.id))
            gone = {p.key for p in matching}
            out.changed = True
        else:
            gone = {p.key for p in matching if self._withdraw_one(out, p.key, m.stack, m, WITHDRAWLET)}
        if gone:
            pi_new = {k: p for k, p in self.known.items() if k not in gone}
            self.update_known_pathlets(clock, out, self.stack, self.stack, pi_new)
        return out

    def on_message(self, m: Message, clock: Clock) -> NodeOutput:
        if m.kind == HELLO:
            return self.on_hello(m, clock)
        if m.kind == PATHLET:
            return self.on_pathlet(m, clock)
        if m.kind == WITHDRAWLET:
            return self.on_withdrawlet(m, clock)
        if m.kind == WITHDRAW:
            return self.on_withdraw(m, clock)
        raise ValueError(f"unknown message kind {m.kind}")

    def on_stack_change(self, new_stack: Stack, clock: Clock) -> NodeOutput:
        out = NodeOutput(changed=True)
        old_stack = self.stack
        self.stack = tuple(new_stack)
        self._hello_all(out, active=False)
        if self.stack == old_stack:
            return out
        pi_new: Dict[PathletKey, Pathlet] = {}
        for k in sorted(self.known):
            p = self.known[k]
            if k.start == self.id:
                sn = self.neighbor_stacks.get(p.end, ())
                shared = join(self.stack, sn)
                if not shared:
                    continue
                if shared != join(old_stack, sn):
                    p = replace(p, scope=shared + (BOTTOM,))
                pi_new[k] = p
            elif self.in_scope(p.scope) and self.deliverable(p):
                pi_new[k] = p
            else:
                # no longer ours to hold; forget it so it can be learned again later
                self.history.pop(k, None)
        self.update_known_pathlets(clock, out, old_stack, self.stack, pi_new, force=True)
        already = {(to, msg.pathlet.key if msg.pathlet else (msg.origin, msg.fid)) for to, msg in out.sends}
        for n, sn in self.live_neighbors():
            skip = {k for (to, k) in already if to == n}
            self._dump(out, n, sn, sn, self.stack, old_stack, skip={PathletKey(*k) for k in skip})
        return out

    def on_destination_change(self, dests: Iterable[str], clock: Clock) -> NodeOutput:
        out = NodeOutput(changed=True)
        self.own_dests = frozenset(dests)
        self._hello_all(out, active=False)
        return out

    def on_timer(self, kind: str, arg, clock: Clock) -> NodeOutput:
        out = NodeOutput()
        if kind == "hello":
            self._hello_all(out, active=False, periodic=True)
            out.timer("hello", self.timers.hello)
            for n in sorted(self.neighbor_stacks):
                heard = self.last_heard.get(n)
                if heard is not None and clock.now - heard >= self.timers.dead:
                    died = self.on_hello(hello(n, (), frozenset(), False), clock, local=True)
                    out.sends.extend(died.sends)
                    out.timers.extend(died.timers)
                    out.diagnostics.extend(died.diagnostics)
                    out.changed = out.changed or died.changed
        elif kind == "expire":
            key, deadline = arg
            if self.expiry.get(key) == deadline:
                del self.expiry[key]
                entry = self.history.get(key)
                if entry is not None and entry.positive:
                    # remember the discarded instance; a re-announcement with the same stamp still wins
                    self._mark_negative(out, key, entry.scope, entry.t)
                pi_new = {k: p for k, p in self.known.items() if k != key}
                self.update_known_pathlets(clock, out, self.stack, self.stack, pi_new)
                out.changed = True
        elif kind == "purge":
            key, t = arg
            entry = self.history.get(key)
            if entry is not None and not entry.positive and entry.t == t:
                del self.history[key]
        elif kind == "purge_bulk":
            key, t = arg
            if self.bulk_history.get(key) == t:
                del self.bulk_history[key]
        elif kind == "fwd_clear":
            if self.own_pathlet(arg) is None:
                self.fids.pop(arg, None)
                self.nh.pop(arg, None)
                self.components.pop(arg, None)
        else:
            raise ValueError(f"unknown timer {kind}")
        return out
