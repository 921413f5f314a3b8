"""Directed communication graph, Hamiltonian walks and delayed channels.

Node labels are the integers ``1..N``. A walk is a vertex sequence in which
consecutive vertices are joined by an arc; it is Hamiltonian when every
vertex appears at least once. Estimates travel along the walk hop by hop,
each hop being a :class:`ChannelBuffer` on the corresponding arc.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from fctdse.errors import ConfigurationError, StructuralError, WalkSearchError

MAX_SEARCH_NODES = 12
TIME_EPS = 1e-9


@dataclass(frozen=True)
class SinusoidalDelay:
    """Bounded time-varying delay ``offset + amplitude * sin(frequency * t)``."""

    offset: float
    amplitude: float
    frequency: float = 1.0

    def __post_init__(self):
        if self.offset - abs(self.amplitude) < 0:
            raise ConfigurationError("sinusoidal delay must stay non-negative")

    def __call__(self, t):
        return self.offset + self.amplitude * math.sin(self.frequency * t)


def parse_delay(spec):
    """Delay from a scenario value: a number or a ``{"kind": "sinusoid", ...}`` dict."""
    if spec is None:
        return 0.0
    if isinstance(spec, (int, float)):
        if spec < 0 or not math.isfinite(spec):
            raise ConfigurationError(f"delay must be a finite non-negative number, got {spec}")
        return float(spec)
    if isinstance(spec, dict) and spec.get("kind") == "sinusoid":
        return SinusoidalDelay(
            float(spec["offset"]), float(spec["amplitude"]), float(spec.get("frequency", 1.0))
        )
    raise ConfigurationError(f"unrecognised delay specification {spec!r}")


def delay_at(delay, t) -> float:
    return delay(t) if callable(delay) else float(delay)


class DiGraph:
    """Directed graph on nodes ``1..N`` with a delay attached to each arc."""

    def __init__(self, node_count: int, edges: Iterable = ()):
        if node_count < 1:
            raise StructuralError("graph needs at least one node")
        self.node_count = int(node_count)
        self.delays: dict[tuple[int, int], object] = {}
        for e in edges:
            if len(e) == 3:
                self.add_edge(e[0], e[1], e[2])
            else:
                self.add_edge(e[0], e[1])

    def add_edge(self, u, v, delay=0.0):
        u, v = int(u), int(v)
        for x in (u, v):
            if not 1 <= x <= self.node_count:
                raise StructuralError(f"node {x} outside 1..{self.node_count}")
        if u == v:
            raise StructuralError(f"self-loop at node {u}")
        self.delays[(u, v)] = delay

    @property
    def nodes(self) -> range:
        return range(1, self.node_count + 1)

    @property
    def edges(self) -> set[tuple[int, int]]:
        return set(self.delays)

    def has_edge(self, u, v) -> bool:
        return (u, v) in self.delays

    def successors(self, u) -> list[int]:
        return sorted(v for (a, v) in self.delays if a == u)

    def adjacency(self) -> np.ndarray:
        """Matrix ``M[k-1, j-1] = 1`` when ``j -> k`` (j transmits to k)."""
        M = np.zeros((self.node_count, self.node_count))
        for (u, v) in self.delays:
            M[v - 1, u - 1] = 1.0
        return M

    def reachability(self) -> np.ndarray:
        """Boolean transitive closure; ``R[u-1, v-1]`` iff ``v`` reachable from ``u``."""
        N = self.node_count
        R = np.eye(N, dtype=bool)
        for (u, v) in self.delays:
            R[u - 1, v - 1] = True
        for k in range(N):
            R |= np.outer(R[:, k], R[k, :])
        return R

    def is_strongly_connected(self) -> bool:
        return bool(self.reachability().all())


@dataclass(frozen=True)
class WalkOrder:
    nodes: tuple
    closed: bool = False
    path: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))

    def first_appearance(self) -> list[int]:
        """Distinct nodes in order of first visit."""
        seen, out = set(), []
        for v in self.nodes:
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out


@dataclass
class WalkCheck:
    valid: bool
    message: str = ""

    def __bool__(self):
        return self.valid


def validate_walk(g: DiGraph, w: WalkOrder) -> WalkCheck:
    if not w.nodes:
        return WalkCheck(False, "empty walk")
    for v in w.nodes:
        if not 1 <= v <= g.node_count:
            return WalkCheck(False, f"node {v} outside 1..{g.node_count}")
    for u, v in zip(w.nodes, w.nodes[1:]):
        if not g.has_edge(u, v):
            return WalkCheck(False, f"missing edge {u}->{v}")
    missing = sorted(set(g.nodes) - set(w.nodes))
    if missing:
        return WalkCheck(False, f"walk misses node {missing[0]}")
    if w.closed and w.nodes[0] != w.nodes[-1]:
        return WalkCheck(False, f"closed walk must end at {w.nodes[0]}, ends at {w.nodes[-1]}")
    if w.path:
        body = w.nodes[:-1] if w.closed and len(w.nodes) > 1 else w.nodes
        if len(set(body)) != len(body):
            return WalkCheck(False, "path mode requires distinct vertices")
    return WalkCheck(True, "ok")


def _shortest_walk(g: DiGraph, closed: bool):
    # Breadth-first over (node, visited-set); per state keep the
    # lexicographically smallest path. Shortest covering walks never revisit
    # a node N times, so the revisit budget is implied.
    N = g.node_count
    full = (1 << N) - 1
    if closed:
        starts = [1]  # every node lies on a closed walk, rotate to start at 1
    else:
        starts = list(g.nodes)
    frontier = {(s, 1 << (s - 1)): (s,) for s in starts}
    best = dict(frontier)
    if N == 1:
        return (1,)
    succ = {u: g.successors(u) for u in g.nodes}
    while frontier:
        nxt = {}
        for (u, mask), walk in sorted(frontier.items(), key=lambda kv: kv[1]):
            for v in succ[u]:
                m2 = mask | (1 << (v - 1))
                cand = walk + (v,)
                if closed and v == starts[0] and m2 == full:
                    nxt.setdefault("done", []).append(cand)
                    continue
                if not closed and m2 == full:
                    nxt.setdefault("done", []).append(cand)
                    continue
                key = (v, m2)
                if key in best and len(best[key]) < len(cand):
                    continue
                if key not in nxt or cand < nxt[key]:
                    nxt[key] = cand
        done = nxt.pop("done", None)
        if done:
            return min(done)
        for k, wk in nxt.items():
            best[k] = wk
        frontier = nxt
    return None


def _hamiltonian_path(g: DiGraph, closed: bool):
    N = g.node_count
    if N == 1:
        return (1,)
    succ = {u: g.successors(u) for u in g.nodes}

    def extend(walk, seen):
        if len(walk) == N:
            if not closed:
                return walk
            return walk + (walk[0],) if g.has_edge(walk[-1], walk[0]) else None
        for v in succ[walk[-1]]:
            if v not in seen:
                found = extend(walk + (v,), seen | {v})
                if found:
                    return found
        return None

    for s in ([1] if closed else g.nodes):
        found = extend((s,), {s})
        if found:
            return found
    return None


def find_walk(g: DiGraph, closed: bool = False, path: bool = False) -> WalkOrder | None:
    """Shortest Hamiltonian walk, ties broken lexicographically.

    With ``path=True`` only vertex-distinct walks (Hamiltonian paths or
    cycles) are considered. Returns ``None`` when no walk exists.

    Raises
    ------
    WalkSearchError
        For graphs with more than 12 nodes; supply the walk instead.
    """
    if g.node_count > MAX_SEARCH_NODES:
        raise WalkSearchError(
            f"graph has {g.node_count} nodes (> {MAX_SEARCH_NODES}); walk must be user-supplied"
        )
    nodes = _hamiltonian_path(g, closed) if path else _shortest_walk(g, closed)
    if nodes is None:
        return None
    return WalkOrder(nodes, closed=closed, path=path)


class ChannelBuffer:
    """One directed arc carrying timestamped payloads with a delay.

    Payloads sent at ``t`` become visible at ``t + delay(t)``. The receiver
    holds the most recently *sent* delivered payload (zero-order hold).
    """

    def __init__(self, edge, delay=0.0):
        self.edge = tuple(edge)
        self.delay = delay
        self._queue: list = []
        self._seq = itertools.count()
        self.latest = None
        self.latest_send_time = -math.inf
        self.deliveries: list[tuple[float, float]] = []  # (send_time, poll_time)

    def send(self, t, payload):
        deliver = t + delay_at(self.delay, t)
        heapq.heappush(self._queue, (deliver, next(self._seq), t, payload))

    def poll(self, t) -> list:
        """Deliver everything due by ``t``; returns payloads in send order."""
        out = []
        while self._queue and self._queue[0][0] <= t + TIME_EPS:
            _, _, ts, payload = heapq.heappop(self._queue)
            out.append((ts, payload))
            self.deliveries.append((ts, t))
        out.sort(key=lambda item: item[0])
        for ts, payload in out:
            if ts >= self.latest_send_time:
                self.latest_send_time = ts
                self.latest = payload
        return [p for _, p in out]

    def pending(self) -> int:
        return len(self._queue)


def channel_send(buf: ChannelBuffer, t, payload):
    buf.send(t, payload)


def channel_poll(buf: ChannelBuffer, t) -> list:
    return buf.poll(t)


@dataclass
class SwitchingSchedule:
    """Piecewise-constant active edge sets.

    ``intervals`` holds ``(start, end, edges)``; an interval is active on
    ``[start, end)`` and the last one also at its end point.
    """

    intervals: list = field(default_factory=list)

    @classmethod
    def static(cls, edges, t_final=math.inf):
        return cls([(0.0, t_final, frozenset(edges))])

    @classmethod
    def from_json(cls, entries):
        intervals = []
        for e in entries:
            edges = frozenset((int(a), int(b)) for a, b in e.get("edges", []))
            intervals.append((float(e["start"]), float(e["end"]), edges))
        return cls(sorted(intervals, key=lambda iv: iv[0]))

    def check_covers(self, t0, t_final):
        if not self.intervals:
            raise ConfigurationError("switching schedule is empty")
        cursor = t0
        for start, end, _ in self.intervals:
            if end < start:
                raise ConfigurationError(f"schedule interval [{start}, {end}] is reversed")
            if start > cursor + TIME_EPS:
                raise ConfigurationError(f"schedule gap on [{cursor}, {start}]")
            cursor = max(cursor, end)
        if cursor < t_final - TIME_EPS:
            raise ConfigurationError(f"schedule gap on [{cursor}, {t_final}]")

    def active_edges(self, t) -> frozenset:
        active = set()
        last = self.intervals[-1] if self.intervals else None
        for iv in self.intervals:
            start, end, edges = iv
            if start - TIME_EPS <= t < end - TIME_EPS or (iv is last and abs(t - end) <= TIME_EPS):
                active |= edges
        return frozenset(active)

    def union(self) -> frozenset:
        out = set()
        for _, _, edges in self.intervals:
            out |= edges
        return frozenset(out)

    def view(self, g: DiGraph, t) -> DiGraph:
        active = self.active_edges(t)
        return DiGraph(g.node_count, [(u, v, d) for (u, v), d in g.delays.items() if (u, v) in active])


def switching_schedule(active_edges) -> SwitchingSchedule:
    """Build a schedule from ``[(start, end, edges), ...]``."""
    return SwitchingSchedule(sorted(((float(a), float(b), frozenset(map(tuple, e))) for a, b, e in active_edges), key=lambda iv: iv[0]))
