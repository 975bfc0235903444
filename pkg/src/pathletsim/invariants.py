"""Run-time invariant checks used by the engine's assertion mode and the tests."""
from __future__ import annotations

from typing import List, Mapping

from .node import Node


class InvariantBreach(AssertionError):
    pass


def scope_violations(node: Node) -> List[str]:
    bad = []
    for key, p in node.known.items():
        if key.start != node.id and not node.in_scope(p.scope):
            bad.append(f"{node.id} holds out-of-scope {p}")
    for p in node.composed():
        if p.key in node.known:
            bad.append(f"{node.id} stores its own composed {p} as known")
    return bad


def expansion_cycles(nodes: Mapping[str, Node], node: Node) -> List[str]:
    from .dataplane import ExpansionCycle, walk

    bad = []
    for fid in sorted(node.components):
        try:
            walk(nodes, node.id, (fid,))
        except ExpansionCycle as err:
            bad.append(f"{node.id} fid {fid}: {err}")
    return bad


def check_node(nodes: Mapping[str, Node], node: Node) -> None:
    problems = scope_violations(node) + expansion_cycles(nodes, node)
    if problems:
        raise InvariantBreach("; ".join(problems))


def check_all(nodes: Mapping[str, Node]) -> None:
    for name in sorted(nodes):
        check_node(nodes, nodes[name])
