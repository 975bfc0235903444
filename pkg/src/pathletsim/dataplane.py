"""FID-stack forwarding over node snapshots."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .node import Node
from .pathlet import DEFAULT_CAP, Chain, Fid, Pathlet, PathletKey, VertexId, chain_is_connected, search_chains


class ForwardingError(RuntimeError):
    pass


class UnknownFid(ForwardingError):
    pass


class ExpansionCycle(ForwardingError):
    pass


@dataclass(frozen=True)
class Packet:
    header: Tuple[Fid, ...]
    dest: Optional[str] = None
    hops: Tuple[VertexId, ...] = ()


def build_header(source: Node, choice: Sequence[Union[Pathlet, PathletKey]]) -> Tuple[Fid, ...]:
    pathlets = []
    for item in choice:
        p = item if isinstance(item, Pathlet) else (source.known.get(item) or _own(source, item))
        if p is None:
            raise ForwardingError(f"{source.id} does not know pathlet {item}")
        pathlets.append(p)
    if not pathlets:
        return ()
    if pathlets[0].start != source.id or not chain_is_connected(pathlets):
        raise ForwardingError("route choice is not a chain starting at the source")
    return tuple(p.fid for p in pathlets)


def _own(node: Node, key: PathletKey) -> Optional[Pathlet]:
    return node.own_pathlet(key.fid) if key.start == node.id else None


def forward_step(node: Node, packet: Packet) -> Tuple[VertexId, Packet]:
    if not packet.header:
        raise ForwardingError("empty header")
    f = packet.header[0]
    if f not in node.nh:
        raise UnknownFid(f"fid {f} unknown at {node.id}")
    header = node.fids[f] + packet.header[1:]
    return node.nh[f], Packet(header, packet.dest, packet.hops + (node.id,))


@dataclass
class Delivery:
    delivered: bool
    path: List[VertexId]
    steps: List[Tuple[VertexId, Fid]] = field(default_factory=list)
    reason: str = ""


def walk(nodes: Mapping[VertexId, Node], start: VertexId, header: Sequence[Fid], dest: Optional[str] = None,
         limit: Optional[int] = None) -> Delivery:
    """Carry a packet hop by hop until its header is empty."""
    if limit is None:
        limit = 4 * (1 + sum(len(n.nh) for n in nodes.values()))
    packet = Packet(tuple(header), dest)
    at = start
    path = [start]
    steps: List[Tuple[VertexId, Fid]] = []
    seen = set()
    while packet.header:
        node = nodes.get(at)
        if node is None:
            return Delivery(False, path, steps, f"no node {at}")
        state = (at, packet.header)
        if state in seen or len(steps) > limit:
            raise ExpansionCycle(f"forwarding loops at {at} with header {packet.header}")
        seen.add(state)
        f = packet.header[0]
        try:
            nxt, packet = forward_step(node, packet)
        except UnknownFid as err:
            return Delivery(False, path, steps, str(err))
        if nxt not in node.links:
            return Delivery(False, path, steps, f"{at} has no link to {nxt}")
        comp = node.components.get(f)
        steps.append((at, comp[0].fid if comp else f))
        at = nxt
        path.append(at)
    if dest is not None:
        host = nodes.get(at)
        if host is None or dest not in host.own_dests:
            return Delivery(False, path, steps, f"{dest} is not hosted at {at}")
    return Delivery(True, path, steps)


def expand_fid(nodes: Mapping[VertexId, Node], start: VertexId, fid: Fid) -> List[Tuple[VertexId, Fid]]:
    """Atomic (vertex, fid) steps that pathlet ``fid`` of ``start`` unfolds into."""
    result = walk(nodes, start, (fid,))
    if not result.delivered:
        raise ForwardingError(result.reason)
    return result.steps


def routes(source: Node, dest: str, cap: Optional[int] = DEFAULT_CAP) -> List[Chain]:
    """Chains from the source's known pathlets ending where ``dest`` is announced."""
    pool = list(source.known.values())
    ends = sorted({p.end for p in pool if dest in p.dests and p.end != source.id})
    found: List[Chain] = []
    for end in ends:
        for ch in search_chains(pool, source.id, end, (), None if cap is None else cap * 4):
            if dest in ch[-1].dests:
                found.append(ch)
    found.sort(key=lambda ch: (len(ch), [(p.start, p.fid) for p in ch]))
    return found if cap is None else found[:cap]


def probe(nodes: Mapping[VertexId, Node], source: VertexId, dest: str) -> Tuple[Tuple[Fid, ...], Delivery]:
    """Route with the source's first choice and walk it."""
    node = nodes[source]
    if dest in node.own_dests:
        return (), Delivery(True, [source])
    options = routes(node, dest, cap=1)
    if not options:
        return (), Delivery(False, [source], reason=f"no route from {source} to {dest}")
    header = build_header(node, options[0])
    return header, walk(nodes, source, header, dest)
