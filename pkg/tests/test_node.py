import copy

import pytest

from pathletsim.engine import RunConfig, run
from pathletsim.labels import BOTTOM
from pathletsim.messages import HELLO, PATHLET, WITHDRAW, WITHDRAWLET, Message, hello
from pathletsim.node import HistoryEntry, Node, discover_border_vertices
from pathletsim.pathlet import Pathlet, PathletKey
from pathletsim.scenario import Action, fig1

B = BOTTOM


class Clock:
    def __init__(self, now=0.0):
        self.now = now
        self.seq = 0

    def stamp(self):
        self.seq += 1
        return (self.now, self.seq)


def P(fid, s, e, scope, dests=()):
    return Pathlet(fid, s, e, tuple(scope), frozenset(dests))


def node_with(neighbors, name="u", stack=(0, 1)):
    """A node that has greeted each (name, stack) neighbor."""
    clock = Clock()
    u = Node(name, stack)
    u.active = True
    for n, s in neighbors:
        u.links.add(n)
        u.on_hello(hello(n, s, frozenset(), False), clock)
    return u, clock


def kinds(out):
    return [(to, m.kind) for to, m in out.sends]


@pytest.fixture(scope="module")
def fig():
    return run(fig1(), 0, RunConfig()).nodes


# ---------------------------------------------------------------- propagation and borders

def test_targets_atomic_stays_in_area(fig):
    v2 = fig["v2"]
    assert v2.propagation_targets(v2.stack, (0, 1, B), start="v2", end="v4") == ["v1", "v3"]


def test_targets_crossing_leaves_area(fig):
    v5 = fig["v5"]
    assert v5.propagation_targets(v5.stack, (0, 1), start="v5", end="v4") == ["v7"]


def test_targets_empty_scope(fig):
    v2 = fig["v2"]
    assert v2.propagation_targets(v2.stack, ()) == []


def test_border_examples(fig):
    assert fig["v2"].is_border_vertex((0, 1, 3))
    assert not any(fig["v6"].is_border_vertex(a) for a in [(0,), (0, 1), (0, 1, 3), (0, 2)])
    assert not any(n.is_border_vertex((0,)) for n in fig.values())


def test_discover_example():
    pool = [P(1, "v2", "v4", (0, 1, B)), P(3, "v4", "v6", (0, B))]
    assert discover_border_vertices("v2", (0, 1), pool) == {"v4"}


def test_discover_empty_pool():
    assert discover_border_vertices("v2", (0, 1), []) == frozenset()


def test_discover_needs_a_link_leaving_the_area():
    pool = [P(1, "v2", "v4", (0, 1, B)), P(3, "v4", "v5", (0, 1, B))]
    assert discover_border_vertices("v2", (0, 1), pool) == frozenset()


def test_discover_one_pathlet_is_not_a_pair():
    # the same link cannot witness both sides
    pool = [P(1, "v4", "v6", (0, B))]
    assert discover_border_vertices("v2", (0,), pool) == frozenset()


# ---------------------------------------------------------------- activation and hello

def test_activate_isolated():
    u = Node("u", (0, 1))
    out = u.on_activate(Clock())
    assert out.sends == []
    assert [t.kind for t in out.timers] == ["hello"]


def test_activate_greets_every_link():
    u = Node("u", (0, 1))
    u.links |= {"a", "b", "c"}
    out = u.on_activate(Clock())
    assert [to for to, _ in out.sends] == ["a", "b", "c"]
    assert len({str(m) for _, m in out.sends}) == 1
    assert all(m.kind == HELLO and m.active for _, m in out.sends)


def test_hello_unchanged_is_silent():
    u, clock = node_with([("a", (0, 1))])
    out = u.on_hello(hello("a", (0, 1), frozenset(), False), clock)
    assert out.sends == [] and not out.changed


def test_hello_creates_atomic_pathlet():
    u, clock = node_with([("a", (0, 2))])
    atom = u.atomic_to("a")
    assert atom.scope == (0, B) and atom.start == "u"
    assert u.nh[atom.fid] == "a" and u.fids[atom.fid] == ()
    assert u.history[atom.key].positive


def test_hello_from_stranger_dropped():
    u, clock = node_with([])
    out = u.on_hello(hello("x", (0, 1), frozenset(), False), clock)
    assert out.sends == [] and out.diagnostics


def test_empty_stack_hello_removes_atomic():
    u, clock = node_with([("a", (0, 1)), ("b", (0, 1))])
    atom = u.atomic_to("a")
    u.links.discard("a")
    out = u.on_hello(hello("a", (), frozenset(), False), clock, local=True)
    assert u.atomic_to("a") is None
    assert ("b", WITHDRAWLET) in kinds(out)
    assert not u.history[atom.key].positive


def test_active_hello_dumps_known_state():
    u, clock = node_with([("a", (0, 1)), ("b", (0, 1))])
    out = u.on_hello(hello("b", (0, 1), frozenset(), True), clock)
    sent = {m.pathlet.key for to, m in out.sends if to == "b" and m.kind == PATHLET}
    assert u.atomic_to("a").key in sent


# ---------------------------------------------------------------- pathlet receipt

def relay():
    """u at (0 1) between a and b, both in the same area."""
    return node_with([("a", (0, 1)), ("b", (0, 1))])


def test_new_pathlet_is_stored_and_forwarded():
    u, clock = relay()
    p = P(5, "a", "x", (0, 1, B))
    out = u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 99), pathlet=p), clock)
    assert u.known[p.key] == p
    assert u.history[p.key] == HistoryEntry(p.scope, (1.0, 99), True)
    assert kinds(out) == [("b", PATHLET)]


def test_equal_stamp_duplicate_is_dropped_silently():
    u, clock = relay()
    p = P(5, "a", "x", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 99), pathlet=p), clock)
    before = (dict(u.known), dict(u.history))
    out = u.on_pathlet(Message(PATHLET, "a", "b", (1.0, 99), pathlet=p), clock)
    assert out.sends == []
    assert (u.known, u.history) == before


def test_stale_pathlet_gets_correction_with_stored_stamp():
    u, clock = relay()
    p = P(5, "a", "x", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (2.0, 99), pathlet=p), clock)
    old = P(5, "a", "y", (0, 1, B))
    out = u.on_pathlet(Message(PATHLET, "a", "b", (1.0, 7), pathlet=old), clock)
    assert kinds(out) == [("b", PATHLET)]
    assert out.sends[0][1].t == (2.0, 99) and out.sends[0][1].pathlet == p
    assert u.known[p.key] == p


def test_own_unknown_pathlet_is_withdrawn():
    u, clock = relay()
    ghost = P(7, "u", "v5", (0, 1))
    out = u.on_pathlet(Message(PATHLET, "u", "a", (1.0, 3), pathlet=ghost), clock)
    assert kinds(out) == [("a", WITHDRAWLET)]
    m = out.sends[0][1]
    assert (m.fid, m.stack) == (7, (0, 1))


def test_out_of_scope_pathlet_dropped_without_history():
    u, clock = relay()
    p = P(5, "a", "x", (0, 2, 1))
    out = u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 9), pathlet=p), clock)
    assert out.sends == [] and p.key not in u.known and p.key not in u.history


def test_invalid_pathlet_dropped():
    u, clock = relay()
    p = P(5, "a", "a", (0, 1, B))
    out = u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 9), pathlet=p), clock)
    assert out.sends == [] and out.diagnostics


# ---------------------------------------------------------------- withdrawals

def test_unknown_withdrawlet_recorded_and_forwarded():
    u, clock = relay()
    key = PathletKey("a", 5)
    out = u.on_withdrawlet(Message(WITHDRAWLET, "a", "a", (1.0, 9), stack=(0, 1, B), fid=5), clock)
    assert u.history[key] == HistoryEntry((0, 1, B), (1.0, 9), False)
    assert kinds(out) == [("b", WITHDRAWLET)]
    assert ("purge" in [t.kind for t in out.timers])


def test_withdrawlet_removes_known():
    u, clock = relay()
    p = P(5, "a", "x", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 9), pathlet=p), clock)
    u.on_withdrawlet(Message(WITHDRAWLET, "a", "a", (2.0, 1), stack=p.scope, fid=5), clock)
    assert p.key not in u.known and not u.history[p.key].positive


def test_stale_withdrawlet_gets_corrective_pathlet():
    u, clock = relay()
    p = P(5, "a", "x", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (2.0, 9), pathlet=p), clock)
    out = u.on_withdrawlet(Message(WITHDRAWLET, "a", "b", (1.0, 1), stack=p.scope, fid=5), clock)
    assert kinds(out) == [("b", PATHLET)] and out.sends[0][1].t == (2.0, 9)
    assert p.key in u.known


def test_fresh_withdraw_removes_all_matching_with_one_forward():
    u, clock = relay()
    ps = [P(f, "a", e, (0, 1, B)) for f, e in ((5, "x"), (6, "y"), (7, "z"))]
    for i, p in enumerate(ps):
        u.on_pathlet(Message(PATHLET, "a", "a", (1.0, i + 1), pathlet=p), clock)
    out = u.on_withdraw(Message(WITHDRAW, "a", "a", (5.0, 1), stack=(0, 1, B)), clock)
    assert not any(p.key in u.known for p in ps)
    assert [(to, m.kind) for to, m in out.sends if m.kind == WITHDRAW] == [("b", WITHDRAW)]


def test_mixed_freshness_withdraw_is_decomposed():
    u, clock = relay()
    old, new = P(5, "a", "x", (0, 1, B)), P(6, "a", "y", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (1.0, 1), pathlet=old), clock)
    u.on_pathlet(Message(PATHLET, "a", "a", (9.0, 1), pathlet=new), clock)
    out = u.on_withdraw(Message(WITHDRAW, "a", "b", (5.0, 1), stack=(0, 1, B)), clock)
    assert old.key not in u.known and new.key in u.known
    assert ("b", PATHLET) in kinds(out)  # correction for the newer one
    assert WITHDRAW not in [m.kind for _, m in out.sends]


# ---------------------------------------------------------------- stack and destination changes

def test_same_stack_change_only_greets():
    u, clock = relay()
    before = dict(u.known)
    out = u.on_stack_change(u.stack, clock)
    assert {m.kind for _, m in out.sends} == {HELLO}
    assert u.known == before


def test_stack_change_rescopes_atomics_keeping_fids():
    u, clock = node_with([("a", (0, 1)), ("b", (0, 2))])
    fa, fb = u.atomic_to("a").fid, u.atomic_to("b").fid
    u.on_stack_change((0, 2), clock)
    assert (u.atomic_to("a").fid, u.atomic_to("a").scope) == (fa, (0, B))
    assert (u.atomic_to("b").fid, u.atomic_to("b").scope) == (fb, (0, 2, B))


def test_destination_change_greets_with_new_set():
    u, clock = relay()
    out = u.on_destination_change({"d2"}, clock)
    assert all(m.kind == HELLO and m.dests == frozenset({"d2"}) for _, m in out.sends)
    assert u.own_dests == {"d2"}


def test_neighbor_destination_change_reannounces():
    u, clock = relay()
    out = u.on_hello(hello("a", (0, 1), frozenset({"d9"}), False), clock)
    assert u.atomic_to("a").dests == {"d9"}
    assert ("b", PATHLET) in kinds(out)


# ---------------------------------------------------------------- whole-run behavior

def test_lost_context_expires():
    sc = fig1()
    sc.script = [Action(1000, "fail_link", ("v2", "v6"))]
    r = run(sc, 0, RunConfig())
    # v6 can no longer be fed v2's pathlets at all, so they go at once
    assert not [k for k in r.nodes["v6"].known if k.start == "v2"]
    # elsewhere the failure leaves pathlets that are only usable through their own end
    expired = {line.split()[1] for line in r.trace if "timer expire" in line}
    assert expired and all(not n.expiry for n in r.nodes.values())


def test_expiry_armed_for_unreachable_start_and_leaves_negative_entry():
    u, clock = relay()
    p = P(5, "far", "x", (0, 1, B))
    out = u.on_pathlet(Message(PATHLET, "far", "a", (1.0, 9), pathlet=p), clock)
    armed = [t for t in out.timers if t.kind == "expire"]
    assert [t.arg[0] for t in armed] == [p.key]
    u.on_timer("expire", armed[0].arg, clock)
    assert p.key not in u.known
    assert u.history[p.key] == HistoryEntry(p.scope, (1.0, 9), False)
    # the same instance offered again is taken back
    u.on_pathlet(Message(PATHLET, "far", "b", (1.0, 9), pathlet=p), clock)
    assert u.known[p.key] == p


def test_expiry_disarmed_when_start_becomes_reachable():
    u, clock = relay()
    p = P(5, "far", "x", (0, 1, B))
    out = u.on_pathlet(Message(PATHLET, "far", "a", (1.0, 9), pathlet=p), clock)
    arg = next(t.arg for t in out.timers if t.kind == "expire")
    bridge = P(6, "a", "far", (0, 1, B))
    u.on_pathlet(Message(PATHLET, "a", "a", (2.0, 1), pathlet=bridge), clock)
    assert p.key not in u.expiry
    u.on_timer("expire", arg, clock)
    assert p.key in u.known


def test_stale_timer_is_noop():
    u, clock = relay()
    before = dict(u.known)
    out = u.on_timer("expire", (PathletKey("zz", 1), 5.0), clock)
    assert out.sends == [] and u.known == before


def test_crash_detected_by_silence_matches_explicit_failure():
    def final(kind):
        sc = fig1()
        sc.script = [Action(1000, kind, ("v7",))]
        nodes = run(sc, 0, RunConfig()).nodes
        return {n: sorted((k.start, p.end, p.scope) for k, p in x.known.items()) for n, x in nodes.items()}
    assert final("crash_node") == final("fail_node")


def test_handlers_are_deterministic(fig):
    a, b = copy.deepcopy(fig["v5"]), copy.deepcopy(fig["v5"])
    m = hello("v4", (0, 2), frozenset(), False)
    oa, ob = a.on_hello(m, Clock(5000.0)), b.on_hello(m, Clock(5000.0))
    assert [(to, str(x)) for to, x in oa.sends] == [(to, str(x)) for to, x in ob.sends]
    assert a.known == b.known and a.history == b.history


def test_composed_pathlets_never_in_known(fig):
    for name, node in fig.items():
        for p in node.composed():
            assert p.key not in node.known
            assert node.history[p.key].positive
