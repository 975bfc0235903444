"""Scenario files.

Line-oriented, ``#`` starts a comment::

    [nodes]
    v1 (0 1 3)
    v6 (0) dests=d
    v3 (0 1 3) rule=hops
    [edges]
    v1 v2 10
    v2 v3            # delay drawn from the run seed
    [filters]
    v3 v5 start=v2 scope=(0 1 3)
    [script]
    500 fail_link v1 v3
    900 set_stack v2 (0 2 1)
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .labels import Stack, check_vertex_stack, format_stack, parse_stack
from .node import Filter, Policy, Rule

ACTIONS = {
    "fail_link", "add_link", "fail_node", "crash_node", "add_node",
    "set_stack", "set_destinations", "set_policy", "send_probe",
}


class ScenarioError(ValueError):
    pass


@dataclass
class NodeSpec:
    stack: Stack
    dests: Tuple[str, ...] = ()
    rule: Rule = Rule.ALL_CHAINS
    cap: Optional[int] = None


@dataclass
class EdgeSpec:
    a: str
    b: str
    delay: Optional[float] = None
    weight: float = 0.0


@dataclass
class Action:
    at: float
    name: str
    args: Tuple[str, ...]
    options: Dict[str, str] = field(default_factory=dict)

    def __str__(self) -> str:
        opts = " ".join(f"{k}={v}" for k, v in sorted(self.options.items()))
        return " ".join(x for x in (self.name, " ".join(self.args), opts) if x)


@dataclass
class Scenario:
    nodes: Dict[str, NodeSpec] = field(default_factory=dict)
    edges: List[EdgeSpec] = field(default_factory=list)
    filters: Dict[str, List[Filter]] = field(default_factory=dict)
    script: List[Action] = field(default_factory=list)

    def policy_for(self, node: str, rule: Optional[Rule] = None, cap: Optional[int] = None) -> Policy:
        spec = self.nodes[node]
        chosen = spec.rule if rule is None or spec.rule is not Rule.ALL_CHAINS else rule
        size = spec.cap or cap or Policy().cap
        return Policy(chosen, size, tuple(self.filters.get(node, ())))

    def validate(self) -> "Scenario":
        seen = set()
        for name, spec in self.nodes.items():
            try:
                check_vertex_stack(spec.stack)
            except ValueError as err:
                raise ScenarioError(f"node {name}: {err}") from None
        for e in self.edges:
            for v in (e.a, e.b):
                if v not in self.nodes:
                    raise ScenarioError(f"edge {e.a}-{e.b} names unknown node {v}")
            if e.a == e.b:
                raise ScenarioError(f"self-loop on {e.a}")
            pair = frozenset((e.a, e.b))
            if pair in seen:
                raise ScenarioError(f"duplicate edge {e.a}-{e.b}")
            seen.add(pair)
            if e.delay is not None and e.delay < 0:
                raise ScenarioError(f"negative delay on {e.a}-{e.b}")
        for node, fs in self.filters.items():
            if node not in self.nodes:
                raise ScenarioError(f"filter for unknown node {node}")
        for act in self.script:
            if act.name not in ACTIONS:
                raise ScenarioError(f"unknown action {act.name}")
            if act.at < 0:
                raise ScenarioError(f"action {act} scheduled before time 0")
        return self


_OPT = re.compile(r"^(\w+)=(.*)$")


def _split(line: str) -> List[str]:
    """Whitespace split that keeps parenthesized stacks in one token."""
    out, depth, cur = [], 0, ""
    for ch in line:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch.isspace() and depth == 0:
            if cur:
                out.append(cur)
            cur = ""
        else:
            cur += ch
    if depth != 0:
        raise ScenarioError(f"unbalanced parentheses: {line!r}")
    if cur:
        out.append(cur)
    return out


def _options(tokens: List[str]) -> Tuple[List[str], Dict[str, str]]:
    args, opts = [], {}
    for tok in tokens:
        m = _OPT.match(tok)
        if m:
            opts[m.group(1)] = m.group(2)
        else:
            args.append(tok)
    return args, opts


def parse_dests(text: str) -> Tuple[str, ...]:
    return tuple(sorted(d for d in text.split(",") if d and d != "-"))


def parse_rule(text: str) -> Rule:
    try:
        return Rule(text)
    except ValueError:
        raise ScenarioError(f"unknown composition rule {text!r}; use one of {[r.value for r in Rule]}") from None


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("nodes", "edges", "filters", "script"):
                raise ScenarioError(f"line {lineno}: unknown section [{section}]")
            continue
        try:
            args, opts = _options(_split(line))
            if section == "nodes":
                name, stack = args[0], parse_stack(args[1])
                sc.nodes[name] = NodeSpec(stack, parse_dests(opts.get("dests", "")),
                                          parse_rule(opts.get("rule", "all")),
                                          int(opts["cap"]) if "cap" in opts else None)
            elif section == "edges":
                delay = float(args[2]) if len(args) > 2 else None
                sc.edges.append(EdgeSpec(args[0], args[1], delay, float(opts.get("weight", 0.0))))
            elif section == "filters":
                node, neighbor = args[0], args[1]
                scope = parse_stack(opts["scope"]) if "scope" in opts else None
                sc.filters.setdefault(node, []).append(
                    Filter(neighbor, opts.get("start"), opts.get("end"), scope))
            elif section == "script":
                sc.script.append(Action(float(args[0]), args[1], tuple(args[2:]), opts))
            else:
                raise ScenarioError("content before any section header")
        except ScenarioError as err:
            raise ScenarioError(f"line {lineno}: {err}") from None
        except (IndexError, ValueError) as err:
            raise ScenarioError(f"line {lineno}: cannot parse {raw.strip()!r} ({err})") from None
    return sc.validate()


def format_scenario(sc: Scenario) -> str:
    lines = ["[nodes]"]
    for name in sorted(sc.nodes):
        spec = sc.nodes[name]
        extra = []
        if spec.dests:
            extra.append("dests=" + ",".join(spec.dests))
        if spec.rule is not Rule.ALL_CHAINS:
            extra.append("rule=" + spec.rule.value)
        if spec.cap:
            extra.append(f"cap={spec.cap}")
        lines.append(" ".join([name, format_stack(spec.stack)] + extra))
    lines.append("[edges]")
    for e in sc.edges:
        parts = [e.a, e.b]
        if e.delay is not None:
            parts.append(f"{e.delay:g}")
        if e.weight:
            parts.append(f"weight={e.weight:g}")
        lines.append(" ".join(parts))
    if sc.filters:
        lines.append("[filters]")
        for node in sorted(sc.filters):
            for f in sc.filters[node]:
                parts = [node, f.neighbor]
                if f.start:
                    parts.append(f"start={f.start}")
                if f.end:
                    parts.append(f"end={f.end}")
                if f.scope is not None:
                    parts.append(f"scope={format_stack(f.scope)}")
                lines.append(" ".join(parts))
    if sc.script:
        lines.append("[script]")
        for act in sc.script:
            lines.append(f"{act.at:g} {act}")
    return "\n".join(lines) + "\n"


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


FIG1 = """\
# seven-router example: three areas under the root, destination d at v6
[nodes]
v1 (0 1 3)
v2 (0 1 3)
v3 (0 1 3)
v4 (0 1)
v5 (0 1)
v6 (0) dests=d
v7 (0 2 1)
[edges]
v1 v2 10
v1 v3 10
v2 v3 10
v2 v4 10
v2 v6 10
v3 v5 10
v4 v5 10
v4 v6 10
v5 v7 10
"""


def fig1() -> Scenario:
    return parse_scenario(FIG1)
