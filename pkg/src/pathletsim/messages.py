"""Control messages, timestamps and handler output."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, FrozenSet, List, Optional, Tuple

from .labels import Stack, format_stack
from .pathlet import Fid, Pathlet, VertexId, format_pathlet

# (simulated ms, global sequence number); the sequence only breaks ties between
# stamps taken in the same millisecond, so comparison stays "older < newer".
Stamp = Tuple[float, int]

HELLO = "Hello"
PATHLET = "Pathlet"
WITHDRAWLET = "Withdrawlet"
WITHDRAW = "Withdraw"


def format_stamp(t: Optional[Stamp]) -> str:
    if t is None:
        return "-"
    return f"{t[0]:.3f}#{t[1]}"


@dataclass(frozen=True)
class Message:
    kind: str
    origin: VertexId
    source: Optional[VertexId] = None
    t: Optional[Stamp] = None
    stack: Stack = ()
    dests: FrozenSet[str] = frozenset()
    active: bool = False
    pathlet: Optional[Pathlet] = None
    fid: Optional[Fid] = None
    periodic: bool = False

    def via(self, source: VertexId) -> "Message":
        """Same message re-sent by ``source`` (origin and timestamp kept)."""
        return Message(self.kind, self.origin, source, self.t, self.stack, self.dests,
                       self.active, self.pathlet, self.fid, self.periodic)

    def __str__(self) -> str:
        if self.kind == HELLO:
            d = ",".join(sorted(self.dests))
            return f"Hello(o={self.origin},s={format_stack(self.stack)},d={{{d}}},a={int(self.active)})"
        head = f"{self.kind}(o={self.origin},src={self.source},t={format_stamp(self.t)}"
        if self.kind == PATHLET:
            return f"{head},p={format_pathlet(self.pathlet)})"
        if self.kind == WITHDRAWLET:
            return f"{head},f={self.fid},s={format_stack(self.stack)})"
        return f"{head},s={format_stack(self.stack)})"


def hello(origin: VertexId, stack: Stack, dests: FrozenSet[str], active: bool, periodic: bool = False) -> Message:
    return Message(HELLO, origin, stack=stack, dests=frozenset(dests), active=active, periodic=periodic)


@dataclass(frozen=True)
class TimerRequest:
    kind: str
    delay: float
    arg: Any = None


@dataclass
class NodeOutput:
    sends: List[Tuple[VertexId, Message]] = field(default_factory=list)
    timers: List[TimerRequest] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)
    changed: bool = False

    def send(self, to: VertexId, msg: Message) -> None:
        self.sends.append((to, msg))

    def timer(self, kind: str, delay: float, arg: Any = None) -> None:
        self.timers.append(TimerRequest(kind, delay, arg))

    @property
    def forwarding_clears(self) -> List[Tuple[Fid, float]]:
        return [(r.arg, r.delay) for r in self.timers if r.kind == "fwd_clear"]

    def is_empty(self) -> bool:
        return not self.sends and not self.timers and not self.changed
