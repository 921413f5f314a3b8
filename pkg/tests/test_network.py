import itertools
import math

import pytest

from fctdse.errors import ConfigurationError, StructuralError, WalkSearchError
from fctdse.network import (
    ChannelBuffer,
    DiGraph,
    SinusoidalDelay,
    SwitchingSchedule,
    WalkOrder,
    find_walk,
    parse_delay,
    switching_schedule,
    validate_walk,
)


def complete(n):
    return DiGraph(n, [(u, v) for u in range(1, n + 1) for v in range(1, n + 1) if u != v])


def test_find_walk_complete_graph():
    w = find_walk(complete(3))
    assert w.nodes == (1, 2, 3) and not w.closed


def test_find_walk_cycle_closed():
    g = DiGraph(3, [(1, 2), (2, 3), (3, 1)])
    assert find_walk(g, closed=True).nodes == (1, 2, 3, 1)


def test_find_walk_none_for_converging_arcs():
    g = DiGraph(3, [(1, 2), (3, 2)])
    assert find_walk(g) is None
    assert find_walk(g, closed=True) is None


def test_two_node_one_arc():
    g = DiGraph(2, [(1, 2)])
    assert find_walk(g).nodes == (1, 2)
    assert find_walk(g, closed=True) is None


def test_walk_with_revisit():
    # star out of node 2: 1 -> 2 -> 3, and 3 -> 2 -> 4
    g = DiGraph(4, [(1, 2), (2, 3), (3, 2), (2, 4)])
    w = find_walk(g)
    assert w.nodes == (1, 2, 3, 2, 4)
    assert validate_walk(g, w)
    assert find_walk(g, path=True) is None


def test_path_mode_finds_hamiltonian_path():
    g = DiGraph(3, [(2, 1), (1, 3)])
    assert find_walk(g, path=True).nodes == (2, 1, 3)


def test_single_node():
    g = DiGraph(1)
    assert find_walk(g).nodes == (1,)
    assert find_walk(g, closed=True).nodes == (1,)
    assert find_walk(g, closed=True, path=True).nodes == (1,)


def test_large_graph_requires_user_walk():
    with pytest.raises(WalkSearchError):
        find_walk(complete(13))


def test_validate_walk_messages():
    g = DiGraph(2, [(1, 2)])
    check = validate_walk(g, WalkOrder((2, 1)))
    assert not check and check.message == "missing edge 2->1"
    assert validate_walk(g, WalkOrder((1,))).message == "walk misses node 2"
    assert not validate_walk(g, WalkOrder(()))
    assert not validate_walk(g, WalkOrder((1, 5)))
    g2 = DiGraph(2, [(1, 2), (2, 1)])
    assert not validate_walk(g2, WalkOrder((1, 2), closed=True))
    assert validate_walk(g2, WalkOrder((1, 2, 1), closed=True))


def test_graph_construction_errors():
    with pytest.raises(StructuralError):
        DiGraph(0)
    with pytest.raises(StructuralError):
        DiGraph(2, [(1, 1)])
    with pytest.raises(StructuralError):
        DiGraph(2, [(1, 3)])


def test_adjacency_and_connectivity():
    g = DiGraph(3, [(1, 2), (2, 3)])
    A = g.adjacency()
    assert A[1, 0] == 1 and A[0, 1] == 0
    assert not g.is_strongly_connected()
    g.add_edge(3, 1)
    assert g.is_strongly_connected()


def test_walk_first_appearance():
    assert WalkOrder((1, 2, 3, 2, 4)).first_appearance() == [1, 2, 3, 4]


def test_channel_zero_delay_delivers_same_step():
    ch = ChannelBuffer((1, 2))
    ch.send(0.0, "a")
    assert ch.poll(0.0) == ["a"] and ch.latest == "a"


def test_channel_delay_and_hold():
    ch = ChannelBuffer((1, 2), 0.5)
    ch.send(0.0, "a")
    ch.send(0.1, "b")
    assert ch.poll(0.4) == [] and ch.latest is None
    assert ch.poll(0.5) == ["a"]
    assert ch.poll(0.59) == []
    assert ch.latest == "a"
    assert ch.poll(0.6) == ["b"] and ch.latest == "b"
    assert ch.pending() == 0


def test_channel_keeps_latest_sent_when_delays_shrink():
    ch = ChannelBuffer((1, 2), lambda t: 1.0 - t)
    ch.send(0.0, "old")  # due at 1.0
    ch.send(0.5, "new")  # due at 1.0
    ch.poll(1.0)
    assert ch.latest == "new"


def test_sinusoidal_delay():
    d = parse_delay({"kind": "sinusoid", "offset": 0.3, "amplitude": 0.1, "frequency": 2.0})
    assert d(0.0) == pytest.approx(0.3)
    assert d(math.pi / 4) == pytest.approx(0.4)
    with pytest.raises(ConfigurationError):
        SinusoidalDelay(0.1, 0.2)
    with pytest.raises(ConfigurationError):
        parse_delay(-1.0)
    with pytest.raises(ConfigurationError):
        parse_delay("soon")


def test_switching_schedule():
    s = switching_schedule([(0, 0.5, [(1, 2)]), (0.5, 2.0, [])])
    s.check_covers(0.0, 2.0)
    assert s.active_edges(0.2) == {(1, 2)}
    assert s.active_edges(0.5) == frozenset()
    assert s.active_edges(2.0) == frozenset()
    assert s.union() == {(1, 2)}
    with pytest.raises(ConfigurationError):
        s.check_covers(0.0, 3.0)
    with pytest.raises(ConfigurationError):
        switching_schedule([(0, 0.4, []), (0.5, 1.0, [])]).check_covers(0, 1)
    g = DiGraph(2, [(1, 2, 0.1)])
    assert s.view(g, 0.1).edges == {(1, 2)}
    assert SwitchingSchedule.static([(1, 2)]).active_edges(100.0) == {(1, 2)}


def test_schedule_from_json():
    s = SwitchingSchedule.from_json([{"start": 1, "end": 2, "edges": [[2, 1]]}, {"start": 0, "end": 1}])
    assert s.intervals[0][0] == 0.0
    assert s.active_edges(1.5) == {(2, 1)}


def _brute_exists(g, closed):
    # A Hamiltonian walk exists iff some ordering of the nodes is chained by
    # reachability (closed: and the last reaches the first).
    R = g.reachability()
    n = g.node_count
    for perm in itertools.permutations(range(n)):
        ok = all(R[perm[k], perm[k + 1]] for k in range(n - 1))
        if closed:
            ok = ok and R[perm[-1], perm[0]] and (n == 1 or g.is_strongly_connected())
        if ok:
            return True
    return False


def test_find_walk_small_exhaustive():
    # every digraph on 3 nodes
    arcs = [(u, v) for u in range(1, 4) for v in range(1, 4) if u != v]
    for mask in range(1 << len(arcs)):
        g = DiGraph(3, [a for k, a in enumerate(arcs) if mask >> k & 1])
        for closed in (False, True):
            w = find_walk(g, closed=closed)
            assert (w is not None) == _brute_exists(g, closed)
            if w is not None:
                assert validate_walk(g, w)


def test_channel_arithmetic_example():
    ch = ChannelBuffer((1, 2), 0.5)
    ch.send(0.3, "m")
    assert ch.poll(0.799) == []
    assert ch.poll(0.8) == ["m"]


def test_time_varying_delay_matches_event_list():
    d = lambda t: 0.1 + 0.05 * math.sin(t)
    ch = ChannelBuffer((1, 2), d)
    dt = 1e-2
    sends = [k * dt for k in range(300)]
    got = {}
    for k in range(400):
        t = k * dt
        if k < len(sends):
            ch.send(t, k)
        for payload in ch.poll(t):
            got[payload] = t
    assert ch.pending() == 0 and len(got) == len(sends)
    for k, ts in enumerate(sends):
        due = ts + d(ts)
        expected = math.ceil((due - 1e-9) / dt) * dt
        assert got[k] == pytest.approx(expected, abs=1e-12)


def test_strongly_connected_graphs_up_to_eight_have_closed_walks():
    import numpy as np

    rng = np.random.default_rng(11)
    checked = 0
    while checked < 40:
        n = int(rng.integers(2, 9))
        g = DiGraph(n, [(u, v) for u in range(1, n + 1) for v in range(1, n + 1) if u != v and rng.random() < 0.3])
        if not g.is_strongly_connected():
            continue
        w = find_walk(g, closed=True)
        assert w is not None and validate_walk(g, w)
        checked += 1
