"""Deterministic discrete-event simulation of a pathlet-routing network."""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import dataplane
from .invariants import InvariantBreach, check_node
from .labels import parse_stack
from .messages import Message, NodeOutput, Stamp
from .node import Node, Policy, Rule, Timers
from .scenario import Action, Scenario, ScenarioError, parse_dests, parse_rule

DELAY_RANGE = (10.0, 50.0)
# events that keep the run alive; periodic greetings and housekeeping timers do not
QUIET_TIMERS = {"hello", "purge", "purge_bulk", "fwd_clear", "expire"}

CSV_COLUMNS = ("run_id", "seed", "nodes", "edges", "max_pathlets", "avg_pathlets",
               "max_msgs", "avg_msgs", "convergence_ms")


class NonConvergence(RuntimeError):
    pass


@dataclass
class RunConfig:
    timers: Timers = field(default_factory=Timers)
    rule: Optional[Rule] = None
    cap: Optional[int] = None
    horizon_ms: float = 600_000.0
    assert_invariants: bool = False
    trace: bool = True


@dataclass
class Metrics:
    messages_sent: Dict[str, int]
    pathlets_stored: Dict[str, int]
    convergence_ms: float
    end_ms: float
    edges: int

    @property
    def nodes(self) -> int:
        return len(self.pathlets_stored)

    def _agg(self, values) -> Tuple[float, float]:
        vals = list(values)
        if not vals:
            return 0, 0.0
        return max(vals), sum(vals) / len(vals)

    def row(self, run_id: str, seed: int) -> Dict[str, object]:
        max_p, avg_p = self._agg(self.pathlets_stored.values())
        max_m, avg_m = self._agg(self.messages_sent[n] for n in self.pathlets_stored)
        return {
            "run_id": run_id, "seed": seed, "nodes": self.nodes, "edges": self.edges,
            "max_pathlets": max_p, "avg_pathlets": round(avg_p, 6),
            "max_msgs": max_m, "avg_msgs": round(avg_m, 6),
            "convergence_ms": round(self.convergence_ms, 3),
        }


@dataclass
class ProbeResult:
    at: float
    source: str
    dest: str
    header: Tuple[int, ...]
    delivery: dataplane.Delivery


@dataclass
class RunResult:
    metrics: Metrics
    trace: List[str]
    nodes: Dict[str, Node]
    probes: List[ProbeResult]
    sent: List[Tuple[float, str, str, Message]]


class _Clock:
    def __init__(self) -> None:
        self.now = 0.0
        self._seq = 0

    def stamp(self) -> Stamp:
        self._seq += 1
        return (self.now, self._seq)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int = 0, config: Optional[RunConfig] = None):
        self.scenario = scenario.validate()
        self.seed = seed
        self.config = config or RunConfig()
        self.rng = random.Random(seed)
        self.clock = _Clock()
        self.heap: List[tuple] = []
        self._seq = 0
        self.pending = 0
        self.nodes: Dict[str, Node] = {}
        self.incarnation: Dict[str, int] = {}
        self.next_fid: Dict[str, int] = {}
        self.links: Dict[frozenset, float] = {}
        self.weights: Dict[frozenset, float] = {}
        self.trace: List[str] = []
        self.sent: List[Tuple[float, str, str, Message]] = []
        self.messages_sent: Dict[str, int] = {n: 0 for n in scenario.nodes}
        self.total_sent = 0
        self.delivered_or_dropped = 0
        self.last_change = 0.0
        self.probes: List[ProbeResult] = []

    # ---------------------------------------------------------------- plumbing

    def _push(self, at: float, kind: str, payload, loud: bool) -> None:
        self._seq += 1
        if loud:
            self.pending += 1
        heapq.heappush(self.heap, (at, self._seq, kind, payload, loud))

    def _draw_delay(self) -> float:
        lo, hi = DELAY_RANGE
        return round(self.rng.uniform(lo, hi), 3)

    def _log(self, line: str) -> None:
        if self.config.trace:
            self.trace.append(line)

    def _emit(self, node_id: str, out: NodeOutput, what: str) -> None:
        now = self.clock.now
        node = self.nodes[node_id]
        for to, msg in out.sends:
            delay = self.links.get(frozenset((node_id, to)))
            self.total_sent += 1
            if not msg.periodic:
                self.messages_sent[node_id] = self.messages_sent.get(node_id, 0) + 1
                self.sent.append((now, node_id, to, msg))
            if delay is None:
                # the link vanished under us; the message is lost
                self.delivered_or_dropped += 1
                continue
            self._push(now + delay, "deliver", (node_id, to, msg), not msg.periodic)
        inc = self.incarnation[node_id]
        for req in out.timers:
            self._push(now + req.delay, "timer", (node_id, inc, req.kind, req.arg), req.kind not in QUIET_TIMERS)
        if out.changed or any(not m.periodic for _, m in out.sends):
            self.last_change = now
        if self.config.trace and (out.sends or out.changed or what.startswith("recv")):
            sends = ",".join(f"{to}:{m}" for to, m in out.sends)
            self._log(f"t={now:.3f} node={node_id} {what} → sends=[{sends}]")
        for d in out.diagnostics:
            self._log(f"t={now:.3f} node={node_id} diag {d}")
        if self.config.assert_invariants:
            check_node(self.nodes, node)

    def _make_node(self, name: str, stack, dests) -> Node:
        spec = self.scenario.nodes.get(name)
        policy = self.scenario.policy_for(name, self.config.rule, self.config.cap) if spec else Policy()
        weights = {}
        for e in self.scenario.edges:
            if name in (e.a, e.b):
                weights[e.b if e.a == name else e.a] = e.weight
        node = Node(name, stack, dests, policy, self.config.timers, self.next_fid.get(name, 1), weights)
        self.incarnation[name] = self.incarnation.get(name, 0) + 1
        self.nodes[name] = node
        self.messages_sent.setdefault(name, 0)
        return node

    def _retire(self, name: str) -> None:
        node = self.nodes.pop(name)
        self.next_fid[name] = node.next_fid
        self.incarnation[name] += 1

    # ---------------------------------------------------------------- setup

    def _build(self) -> None:
        for e in self.scenario.edges:
            key = frozenset((e.a, e.b))
            self.links[key] = e.delay if e.delay is not None else self._draw_delay()
            self.weights[key] = e.weight
        for name in sorted(self.scenario.nodes):
            spec = self.scenario.nodes[name]
            self._make_node(name, spec.stack, spec.dests)
        for key in self.links:
            a, b = sorted(key)
            self.nodes[a].links.add(b)
            self.nodes[b].links.add(a)
        for name in sorted(self.nodes):
            self._push(0.0, "activate", name, True)
        for act in self.scenario.script:
            self._push(act.at, "script", act, True)

    # ---------------------------------------------------------------- events

    def _deliver(self, src: str, dst: str, msg: Message) -> None:
        self.delivered_or_dropped += 1
        node = self.nodes.get(dst)
        if node is None or frozenset((src, dst)) not in self.links or not node.active:
            self._log(f"t={self.clock.now:.3f} node={dst} drop {msg}")
            return
        out = node.on_message(msg, self.clock)
        self._emit(dst, out, f"recv {msg}")

    def _timer(self, name: str, inc: int, kind: str, arg) -> None:
        node = self.nodes.get(name)
        if node is None or self.incarnation.get(name) != inc:
            return
        out = node.on_timer(kind, arg, self.clock)
        if kind in QUIET_TIMERS and not out.changed and all(m.periodic for _, m in out.sends):
            # quiet housekeeping: deliver the sends without a trace line
            saved, self.config.trace = self.config.trace, False
            self._emit(name, out, f"timer {kind}")
            self.config.trace = saved
            return
        self._emit(name, out, f"timer {kind}")

    def _link_down(self, a: str, b: str) -> None:
        self.links.pop(frozenset((a, b)), None)
        for x, y in ((a, b), (b, a)):
            if x in self.nodes and self.nodes[x].active:
                self._emit(x, self.nodes[x].link_down(y, self.clock), f"link_down {y}")

    def _link_up(self, a: str, b: str, delay: Optional[float]) -> None:
        key = frozenset((a, b))
        if key in self.links:
            raise ScenarioError(f"link {a}-{b} already up")
        self.links[key] = delay if delay is not None else self._draw_delay()
        for x, y in ((a, b), (b, a)):
            node = self.nodes.get(x)
            if node is None:
                continue
            if node.active:
                self._emit(x, node.link_up(y, self.clock), f"link_up {y}")
            else:
                node.links.add(y)

    def _script(self, act: Action) -> None:
        now = self.clock.now
        self._log(f"t={now:.3f} script {act}")
        self.last_change = now
        name = act.name
        args = act.args

        def need(v: str) -> Node:
            if v not in self.nodes:
                raise ScenarioError(f"{name}: unknown or failed node {v}")
            return self.nodes[v]

        if name == "fail_link":
            need(args[0]), need(args[1])
            if frozenset(args[:2]) not in self.links:
                raise ScenarioError(f"fail_link: no link {args[0]}-{args[1]}")
            self._link_down(args[0], args[1])
        elif name == "add_link":
            need(args[0]), need(args[1])
            self._link_up(args[0], args[1], float(args[2]) if len(args) > 2 else None)
        elif name in ("fail_node", "crash_node"):
            v = args[0]
            node = need(v)
            peers = sorted(node.links)
            self._retire(v)
            for p in peers:
                key = frozenset((v, p))
                if name == "fail_node":
                    self.links.pop(key, None)
                    if p in self.nodes:
                        self._emit(p, self.nodes[p].link_down(v, self.clock), f"link_down {v}")
        elif name == "add_node":
            v = args[0]
            if v in self.nodes:
                raise ScenarioError(f"add_node: {v} is already running")
            spec = self.scenario.nodes.get(v)
            stack = parse_stack(args[1]) if len(args) > 1 else (spec.stack if spec else None)
            if stack is None:
                raise ScenarioError(f"add_node: no stack for {v}")
            dests = parse_dests(act.options["dests"]) if "dests" in act.options else (spec.dests if spec else ())
            node = self._make_node(v, stack, dests)
            peers = [p for p in act.options.get("links", "").split(",") if p]
            for p in peers:
                need(p)
            for key in list(self.links):
                if v in key:
                    other = next(iter(key - {v}))
                    node.links.add(other)
            for p in peers:
                if frozenset((v, p)) not in self.links:
                    self.links[frozenset((v, p))] = self._draw_delay()
                    node.links.add(p)
                    self.nodes[p].links.add(v)
            self._emit(v, node.on_activate(self.clock), "activate")
        elif name == "set_stack":
            node = need(args[0])
            self._emit(args[0], node.on_stack_change(parse_stack(args[1]), self.clock), f"set_stack {args[1]}")
        elif name == "set_destinations":
            node = need(args[0])
            dests = parse_dests(args[1]) if len(args) > 1 else ()
            self._emit(args[0], node.on_destination_change(dests, self.clock), "set_destinations")
        elif name == "set_policy":
            v = args[0]
            old = need(v)
            rule = parse_rule(act.options.get("rule", old.policy.rule.value))
            cap = int(act.options.get("cap", old.policy.cap))
            links = set(old.links)
            self._retire(v)
            node = self._make_node(v, old.stack, old.own_dests)
            node.policy = Policy(rule, cap, old.policy.filters)
            node.links = links
            self._emit(v, node.on_activate(self.clock), "reboot")
        elif name == "send_probe":
            src, dest = args[0], args[1]
            need(src)
            header, delivery = dataplane.probe(self.nodes, src, dest)
            self.probes.append(ProbeResult(now, src, dest, header, delivery))
            status = "delivered" if delivery.delivered else f"failed ({delivery.reason})"
            self._log(f"t={now:.3f} probe {src}->{dest} header={header} path={'-'.join(delivery.path)} {status}")

    # ---------------------------------------------------------------- loop

    def _armed(self) -> bool:
        """Some node still waits for a pathlet to expire."""
        return any(node.expiry for node in self.nodes.values())

    def run(self) -> RunResult:
        self._build()
        window = self.config.timers.dead + self.config.timers.hello
        while self.heap:
            at = self.heap[0][0]
            if self.pending == 0 and at > self.last_change + window and not self._armed():
                break
            if at > self.config.horizon_ms:
                raise NonConvergence(
                    f"no quiescence before {self.config.horizon_ms:.0f} ms (last change {self.last_change:.3f} ms)")
            at, _, kind, payload, loud = heapq.heappop(self.heap)
            if loud:
                self.pending -= 1
            self.clock.now = at
            if kind == "deliver":
                self._deliver(*payload)
            elif kind == "timer":
                self._timer(*payload)
            elif kind == "script":
                self._script(payload)
            elif kind == "activate":
                node = self.nodes.get(payload)
                if node is not None and not node.active:
                    self._emit(payload, node.on_activate(self.clock), "activate")
        alive = sorted(self.nodes)
        metrics = Metrics(
            messages_sent={n: self.messages_sent.get(n, 0) for n in alive},
            pathlets_stored={n: self.nodes[n].pathlets_stored() for n in alive},
            convergence_ms=self.last_change,
            end_ms=self.clock.now,
            edges=len(self.links),
        )
        return RunResult(metrics, self.trace, self.nodes, self.probes, self.sent)


def run(scenario: Scenario, seed: int = 0, config: Optional[RunConfig] = None) -> RunResult:
    return Simulation(scenario, seed, config).run()


def convergence_time(result: RunResult) -> float:
    return result.metrics.convergence_ms
