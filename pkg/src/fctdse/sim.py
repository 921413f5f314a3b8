"""Scenario description, simulation loop, traces and run summaries.

A run integrates, on one fixed-step RK4 clock:

* the plant in canonical coordinates and the full transition matrix
  (computed once and shared with the agents),
* every agent's estimator,
* optionally the consensus states of every node.

Signals exchanged between agents (finite-time estimates and latch flags)
travel over delayed channels and are held constant across each step.

Scenario files are JSON documents::

    {
      "name": "...",
      "system": {"A": [[...]], "sensors": [[[...]], ...], "stable": true},
      "x0": [...],
      "graph": {"nodes": N, "edges": [{"from": 1, "to": 2, "delay": 0.0}, ...],
                "schedule": [{"start": 0, "end": 1, "edges": [[1, 2]]}, ...]},
      "walk": [1, 2] | "auto",
      "objective": "O1" | "O2",
      "observers": {"default": {...}, "1": {"lambda": 1, "gamma": 5, "mu": 0.05}},
      "dt": 0.001, "t_final": 5.0, "decimate": 1,
      "noise": {"kind": "gaussian", "amplitude": 0.01, "seed": 0, "onset": 0.5,
                "sensors": [1]},
      "consensus": {"mode": "linear", "weight": 1.0, "p": 1.0, "r": 0.5},
      "phi_mode": "shared" | "local",
      "message_period": null,
      "restart_on_upstream_latch": true
    }

Matrices are arrays of rows; node labels are 1-based. ``sensors[k]`` is the
output matrix of node ``k + 1``. Delays are numbers or
``{"kind": "sinusoid", "offset": .., "amplitude": .., "frequency": ..}``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from fctdse import _kernels
from fctdse.canonical import CanonicalForm, LtiSystem, decompose, report_to_json, validate
from fctdse.consensus import ConsensusConfig, consensus_rhs
from fctdse.errors import ConfigurationError, FctDseError, IntegrationError
from fctdse.network import (
    ChannelBuffer,
    DiGraph,
    SwitchingSchedule,
    WalkOrder,
    find_walk,
    parse_delay,
    validate_walk,
)
from fctdse.numerics import as_vector, rk4_step, step_times
from fctdse.observer import AgentObserver, ObserverConfig

log = logging.getLogger(__name__)

DEFAULT_GAINS = (
    {"lam": 1.0, "gamma": 5.0, "mu": 0.05},
    {"lam": 0.8, "gamma": 20.0, "mu": 0.1},
)
LATCH_TOL_STEPS = 2


@dataclass
class NoiseSpec:
    """Additive output disturbance, sampled once per step and held."""

    amplitude: float
    kind: str = "gaussian"
    seed: int = 0
    onset: float = 0.0
    sensors: list | None = None  # node labels; None means all

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ConfigurationError(f"noise kind must be 'gaussian' or 'uniform', got {self.kind!r}")
        if self.amplitude < 0:
            raise ConfigurationError("noise amplitude must be non-negative")


@dataclass
class Scenario:
    system: LtiSystem
    x0: np.ndarray
    graph: DiGraph
    walk: WalkOrder | None = None
    objective: str = "O1"
    observers: dict = field(default_factory=dict)
    dt: float = 1e-3
    t_final: float = 5.0
    decimate: int = 1
    noise: NoiseSpec | None = None
    consensus: ConsensusConfig | None = None
    schedule: SwitchingSchedule | None = None
    phi_mode: str = "shared"
    message_period: float | None = None
    restart_on_upstream_latch: bool = True
    conv_threshold_rel: float = 1e-6
    conv_window: int = 50
    full_tol_rel: float = 1e-5
    name: str = ""
    source: str | None = None

    def __post_init__(self):
        self.x0 = as_vector(self.x0, "x0", self.system.n)
        if self.objective not in ("O1", "O2"):
            raise ConfigurationError(f"objective must be 'O1' or 'O2', got {self.objective!r}")
        if self.graph.node_count != self.system.N:
            raise ConfigurationError(
                f"graph has {self.graph.node_count} nodes but the system has {self.system.N} sensors"
            )
        if not (self.dt > 0 and self.t_final > 0):
            raise ConfigurationError("dt and t_final must be positive")
        if self.dt > self.t_final / 100 * (1 + 1e-12):
            raise ConfigurationError(f"dt={self.dt} exceeds t_final/100={self.t_final / 100}")
        if self.decimate < 1:
            raise ConfigurationError("decimate must be >= 1")
        if self.phi_mode not in ("shared", "local"):
            raise ConfigurationError(f"phi_mode must be 'shared' or 'local', got {self.phi_mode!r}")
        if self.message_period is not None and not self.message_period > 0:
            raise ConfigurationError("message_period must be positive")
        if self.schedule is not None:
            self.schedule.check_covers(0.0, self.t_final)
            extra = self.schedule.union() - self.graph.edges
            if extra:
                raise ConfigurationError(f"schedule uses edges not in the graph: {sorted(extra)}")
        if self.consensus is not None:
            if self.objective != "O2":
                raise ConfigurationError("consensus requires objective O2")
            if self.consensus.N != self.graph.node_count:
                raise ConfigurationError("consensus weight matrix size does not match the graph")
            self.consensus.validate()

    def observer_config(self, node, position) -> ObserverConfig:
        cfg = self.observers.get(node)
        if cfg is None:
            cfg = self.observers.get("default")
        if cfg is None:
            cfg = ObserverConfig(**DEFAULT_GAINS[min(position, 1)])
        return cfg


def _observer_from_json(d) -> ObserverConfig:
    return ObserverConfig(
        lam=float(d.get("lambda", d.get("lam", 1.0))),
        gamma=float(d.get("gamma", 5.0)),
        mu=float(d.get("mu", 0.05)),
        kappa=float(d.get("kappa", 1.0)),
        theta_hat_init=d.get("theta_hat_init"),
        estimator=d.get("estimator", "drem"),
    )


def scenario_from_dict(d: dict, source=None) -> Scenario:
    """Build a :class:`Scenario` from its JSON document."""
    try:
        sysd = d["system"]
        system = LtiSystem(
            sysd["A"],
            [np.atleast_2d(np.array(c, dtype=float)) for c in sysd["sensors"]],
            stable=bool(sysd.get("stable", False)),
        )
        gd = d["graph"]
        graph = DiGraph(int(gd["nodes"]))
        for e in gd.get("edges", []):
            if isinstance(e, dict):
                graph.add_edge(e["from"], e["to"], parse_delay(e.get("delay", 0.0)))
            else:
                graph.add_edge(e[0], e[1], parse_delay(e[2] if len(e) > 2 else 0.0))
        schedule = SwitchingSchedule.from_json(gd["schedule"]) if gd.get("schedule") else None

        objective = d.get("objective", "O1")
        walk = d.get("walk", "auto")
        if walk in (None, "auto"):
            walk = None
        else:
            walk = WalkOrder(tuple(walk), closed=len(walk) > 1 and walk[0] == walk[-1])

        observers = {}
        for key, val in (d.get("observers") or {}).items():
            observers[key if key == "default" else int(key)] = _observer_from_json(val)

        noise = None
        if d.get("noise"):
            nd = d["noise"]
            noise = NoiseSpec(
                amplitude=float(nd["amplitude"]),
                kind=nd.get("kind", "gaussian"),
                seed=int(nd.get("seed", 0)),
                onset=float(nd.get("onset", 0.0)),
                sensors=nd.get("sensors"),
            )

        consensus = None
        if d.get("consensus"):
            cd = d["consensus"]
            if "a" in cd:
                a = np.array(cd["a"], dtype=float)
            else:
                a = float(cd.get("weight", 1.0)) * graph.adjacency()
            consensus = ConsensusConfig(
                a=a,
                p=float(cd.get("p", 1.0)),
                mode=cd.get("mode", "linear"),
                r=float(cd.get("r", 0.5)),
                r1=float(cd.get("r1", 0.5)),
                r2=float(cd.get("r2", 1.5)),
                dead_zone=float(cd.get("dead_zone", 1e-9)),
            )

        return Scenario(
            system=system,
            x0=d["x0"],
            graph=graph,
            walk=walk,
            objective=objective,
            observers=observers,
            dt=float(d.get("dt", 1e-3)),
            t_final=float(d.get("t_final", 5.0)),
            decimate=int(d.get("decimate", 1)),
            noise=noise,
            consensus=consensus,
            schedule=schedule,
            phi_mode=d.get("phi_mode", "shared"),
            message_period=d.get("message_period"),
            restart_on_upstream_latch=bool(d.get("restart_on_upstream_latch", True)),
            conv_threshold_rel=float(d.get("conv_threshold_rel", 1e-6)),
            conv_window=int(d.get("conv_window", 50)),
            full_tol_rel=float(d.get("full_tol_rel", 1e-5)),
            name=d.get("name", ""),
            source=str(source) if source is not None else None,
        )
    except FctDseError as exc:
        _tag(exc, source)
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{source or '<scenario>'}: malformed scenario: {exc!r}") from exc


def load_scenario_dict(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_scenario(path) -> Scenario:
    return scenario_from_dict(load_scenario_dict(path), source=path)


def bundled_scenario_path(name="paper_sec6.json") -> Path:
    return Path(__file__).parent / "data" / name


def _tag(exc, source):
    if source and exc.args and not str(exc.args[0]).startswith(str(source)):
        exc.args = (f"{source}: {exc.args[0]}",) + exc.args[1:]


def resolve_walk(scenario: Scenario) -> WalkOrder:
    """The walk to use, validated against the objective."""
    closed = scenario.objective == "O2"
    g = scenario.graph
    w = scenario.walk
    if w is None:
        w = find_walk(g, closed=closed)
        if w is None:
            kind = "closed" if closed else "open"
            raise ConfigurationError(f"no {kind} Hamiltonian walk")
        return w
    if closed and not w.closed:
        raise ConfigurationError("objective O2 needs a closed Hamiltonian walk")
    check = validate_walk(g, w)
    if not check:
        raise ConfigurationError(f"invalid walk {list(w.nodes)}: {check.message}")
    return w


# ---------------------------------------------------------------------------
# traces


@dataclass
class TraceRecord:
    t: float
    x_true: np.ndarray
    agents: list  # per agent: dict(err_norm, delta, omega, theta_err, latched)
    node_errors: list | None = None
    full_err: float = 0.0


@dataclass
class Trace:
    """Columnar simulation output at full time resolution."""

    agent_nodes: list
    t: np.ndarray
    x_true: np.ndarray
    err_norm: np.ndarray  # (steps, agents)
    delta: np.ndarray
    omega: np.ndarray
    theta_err: np.ndarray
    fct_err: np.ndarray
    latched: np.ndarray
    full_err: np.ndarray
    theta_hat: list  # per agent (steps, n_i), original parameter coordinates
    theta_param: list  # per agent (steps, n_i), estimator coordinates (after re-anchoring)
    theta_fct: list
    node_errors: np.ndarray | None = None  # (steps, N) for O2
    node_estimates_final: list | None = None
    decimate: int = 1

    def column_names(self) -> list[str]:
        cols = ["t"]
        for node in self.agent_nodes:
            cols += [f"a{node}_{c}" for c in ("err_norm", "delta", "omega", "theta_err", "latched")]
        if self.node_errors is not None:
            cols += [f"node{k + 1}_err" for k in range(self.node_errors.shape[1])]
        cols.append("full_err")
        cols += [f"x_true_{k + 1}" for k in range(self.x_true.shape[1])]
        return cols

    def indices(self, decimate=None) -> np.ndarray:
        d = self.decimate if decimate is None else decimate
        idx = np.arange(0, self.t.size, d)
        if idx[-1] != self.t.size - 1:
            idx = np.append(idx, self.t.size - 1)
        return idx

    def rows(self, decimate=None):
        for k in self.indices(decimate):
            row = [self.t[k]]
            for a in range(len(self.agent_nodes)):
                row += [self.err_norm[k, a], self.delta[k, a], self.omega[k, a], self.theta_err[k, a], int(self.latched[k, a])]
            if self.node_errors is not None:
                row += list(self.node_errors[k])
            row.append(self.full_err[k])
            row += list(self.x_true[k])
            yield row

    def records(self, decimate=None):
        for k in self.indices(decimate):
            agents = [
                {
                    "err_norm": float(self.err_norm[k, a]),
                    "delta": float(self.delta[k, a]),
                    "omega": float(self.omega[k, a]),
                    "theta_err": float(self.theta_err[k, a]),
                    "latched": bool(self.latched[k, a]),
                }
                for a in range(len(self.agent_nodes))
            ]
            yield TraceRecord(
                t=float(self.t[k]),
                x_true=self.x_true[k].copy(),
                agents=agents,
                node_errors=None if self.node_errors is None else self.node_errors[k].tolist(),
                full_err=float(self.full_err[k]),
            )

    def write_csv(self, path, decimate=None):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.column_names()) + "\n")
            for row in self.rows(decimate):
                fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % (float(v) + 0.0)  # + 0.0 maps -0.0 to 0.0


@dataclass
class RunSummary:
    latch_times_s: dict
    observed_convergence_s: dict
    final_error_norms: dict
    validation: dict
    full_state_convergence_s: float | None = None
    restart_times_s: dict = field(default_factory=dict)
    walk: list = field(default_factory=list)
    dims: list = field(default_factory=list)
    runtime_s: float = 0.0
    backend: str = ""

    def to_json(self) -> dict:
        return {
            "latch_times_s": self.latch_times_s,
            "observed_convergence_s": self.observed_convergence_s,
            "final_error_norms": self.final_error_norms,
            "validation": self.validation,
            "full_state_convergence_s": self.full_state_convergence_s,
            "restart_times_s": self.restart_times_s,
            "walk": self.walk,
            "dims": self.dims,
            "runtime_s": self.runtime_s,
            "backend": self.backend,
        }


# ---------------------------------------------------------------------------
# run


@dataclass(frozen=True)
class Message:
    sender: int
    stack: tuple  # theta_fct arrays for blocks 0..k
    flags: tuple  # latch flags for blocks 0..k


class _Hop:
    def __init__(self, u, v, delay):
        self.edge = (u, v)
        self.channel = ChannelBuffer((u, v), delay)
        self.sent = 0


def first_sustained(values, threshold, t) -> float | None:
    """First time after which ``values <= threshold`` for the rest of the run."""
    above = np.nonzero(values > threshold)[0]
    if above.size == 0:
        return float(t[0])
    k = above[-1] + 1
    return float(t[k]) if k < t.size else None


def first_window(values, threshold, t, window) -> float | None:
    """First time starting ``window`` consecutive samples with ``values <= threshold``."""
    ok = values <= threshold
    run = 0
    for k, flag in enumerate(ok):
        run = run + 1 if flag else 0
        if run >= window:
            return float(t[k - window + 1])
    return None


def run(scenario: Scenario):
    """Simulate ``scenario``; returns ``(trace, summary)``.

    Errors raised by any module carry the scenario path in their message.
    """
    try:
        return _Simulation(scenario).execute()
    except FctDseError as exc:
        _tag(exc, scenario.source)
        raise


class _Simulation:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.walk = resolve_walk(sc)
        self.agent_nodes = self.walk.first_appearance()
        order = [node - 1 for node in self.agent_nodes]
        self.cf: CanonicalForm = decompose(sc.system, order)
        self.report = validate(self.cf, sc.system)
        self.theta = self.cf.to_canonical(sc.x0)
        cf = self.cf
        n = sc.system.n
        self.n = n
        self.A = cf.A_can
        self.agents = [
            AgentObserver(cf, i, sc.observer_config(node, i), local_phi=sc.phi_mode == "local", node=node)
            for i, node in enumerate(self.agent_nodes)
        ]
        self.theta_blocks = [self.theta[cf.state_slice(i)] for i in range(cf.N)]

        # flat state layout
        off = 0
        self.sl_x = slice(off, off + n)
        off += n
        self.sl_phi = slice(off, off + n * n)
        off += n * n
        self.sl_agents = []
        for ag in self.agents:
            self.sl_agents.append(slice(off, off + ag.size))
            off += ag.size
        self.sl_z = []
        if sc.consensus is not None:
            N = sc.graph.node_count
            for i in range(cf.N):
                self.sl_z.append(slice(off, off + N * cf.dims[i]))
                off += N * cf.dims[i]
            self.pins = [sc.consensus.pinning(self.agent_nodes[i] - 1) for i in range(cf.N)]
        self.size = off

        # channels along the walk
        nodes = self.walk.nodes
        pos_of_agent = [nodes.index(node) for node in self.agent_nodes]
        self.pos_of_agent = pos_of_agent
        self.agent_at_pos = {p: i for i, p in enumerate(pos_of_agent)}
        last = pos_of_agent[-1]
        g = sc.graph
        self.fwd = [_Hop(nodes[h], nodes[h + 1], g.delays[(nodes[h], nodes[h + 1])]) for h in range(last)]
        self.transport = sc.objective == "O2" and sc.consensus is None
        self.ret = []
        if self.transport:
            L = len(nodes) - 1
            seq = list(range(last, L)) + list(range(0, last))
            self.ret = [_Hop(nodes[h], nodes[h + 1], g.delays[(nodes[h], nodes[h + 1])]) for h in seq]

        # agent runtime status
        N_ag = len(self.agents)
        self.upstream: list[Message | None] = [None] * N_ag
        self.armed = [i == 0 for i in range(N_ag)]
        self.latched = [False] * N_ag
        self.latch_time: list[float | None] = [None] * N_ag
        self.full_at_node: dict[int, np.ndarray] = {}

        # noise
        self.rng = None
        if sc.noise is not None:
            self.rng = np.random.default_rng(sc.noise.seed)
            rows = np.zeros(int(cf.output_offsets[-1]), dtype=bool)
            sensors = sc.noise.sensors or self.agent_nodes
            for i, node in enumerate(self.agent_nodes):
                if node in sensors:
                    rows[cf.output_slice(i)] = True
            self.noise_rows = rows

    # -- per-step discrete logic ----------------------------------------
    def upstream_stack(self, i) -> np.ndarray:
        lead = self.cf.leading(i - 1) if i > 0 else 0
        msg = self.upstream[i]
        if msg is None or i == 0:
            return np.zeros(lead)
        return np.concatenate(msg.stack[:i]) if i else np.zeros(0)

    def own_fct_list(self, i, y) -> list:
        ag = self.agents[i]
        s = y[self.sl_agents[i]]
        msg = self.upstream[i]
        if i == 0:
            ups = []
        elif msg is None:
            ups = [np.zeros(self.cf.dims[j]) for j in range(i)]
        else:
            ups = list(msg.stack[:i])
        return ups + [ag.theta_fct(s)]

    def own_message(self, i, y) -> Message:
        fl = self.own_fct_list(i, y)
        ups_flags = self.upstream[i].flags[:i] if (i and self.upstream[i] is not None) else (False,) * i
        return Message(self.agent_nodes[i], tuple(f.copy() for f in fl), tuple(ups_flags) + (self.latched[i],))

    def update_latches(self, t, y):
        for i, ag in enumerate(self.agents):
            if self.latched[i] or not self.armed[i]:
                continue
            if ag.excited(y[self.sl_agents[i]]):
                self.latched[i] = True
                self.latch_time[i] = t

    def receive(self, i, msg, t, y, Phi):
        self.upstream[i] = msg
        if not self.armed[i] and all(msg.flags[:i]):
            self.armed[i] = True
            if self.sc.restart_on_upstream_latch:
                ag = self.agents[i]
                s = y[self.sl_agents[i]]
                ag.restart(s, ag.phi_lead(s, Phi), t)
            self.update_latches(t, y)

    def may_send(self, hop, t, k):
        sc = self.sc
        if sc.schedule is not None and hop.edge not in sc.schedule.active_edges(t):
            return False
        if sc.message_period is not None:
            prev = math.floor((t - sc.dt) / sc.message_period + 1e-9) if k else -1
            cur = math.floor(t / sc.message_period + 1e-9)
            return cur > prev
        return True

    def exchange(self, t, k, y):
        Phi = y[self.sl_phi].reshape(self.n, self.n)
        relay = None
        for h, hop in enumerate(self.fwd):
            i = self.agent_at_pos.get(h)
            payload = self.own_message(i, y) if i is not None else relay
            if payload is not None and self.may_send(hop, t, k):
                hop.channel.send(t, payload)
                hop.sent += 1
            hop.channel.poll(t)
            relay = hop.channel.latest
            j = self.agent_at_pos.get(h + 1)
            if j is not None and relay is not None:
                self.receive(j, relay, t, y, Phi)

        if self.transport:
            last = len(self.agents) - 1
            own = self.own_fct_list(last, y)
            full = np.concatenate(own)
            self.full_at_node = {self.agent_nodes[last]: full}
            relay = full
            for hop in self.ret:
                if relay is not None and self.may_send(hop, t, k):
                    hop.channel.send(t, relay)
                    hop.sent += 1
                hop.channel.poll(t)
                relay = hop.channel.latest
                if relay is not None and hop.edge[1] not in self.full_at_node:
                    self.full_at_node[hop.edge[1]] = relay

    # -- continuous dynamics --------------------------------------------
    def make_rhs(self, upstream, noise, cons_inputs):
        n = self.n
        A = self.A
        agents = list(zip(self.agents, self.sl_agents, upstream))
        sc = self.sc

        def rhs(t, y):
            out = np.empty_like(y)
            x = y[self.sl_x]
            Phi = y[self.sl_phi].reshape(n, n)
            out[self.sl_x] = A @ x
            out[self.sl_phi] = (A @ Phi).ravel()
            for (ag, sl, up) in agents:
                nz = None if noise is None else noise[ag.rows]
                ag.rhs(y[sl], x, Phi, up, nz, out[sl])
            if sc.consensus is not None:
                N = sc.graph.node_count
                for i, sl in enumerate(self.sl_z):
                    z = y[sl].reshape(N, self.cf.dims[i])
                    out[sl] = consensus_rhs(z, sc.consensus, cons_inputs[i], self.pins[i]).ravel()
            return out

        return rhs

    def initial_state(self) -> np.ndarray:
        y = np.zeros(self.size)
        y[self.sl_x] = self.theta
        y[self.sl_phi] = np.eye(self.n).ravel()
        for ag, sl in zip(self.agents, self.sl_agents):
            y[sl] = ag.initial_state()
        return y

    def execute(self):
        sc = self.sc
        cf = self.cf
        t_start = time.perf_counter()
        ts = step_times(0.0, sc.t_final, sc.dt)
        K = ts.size
        N_ag = len(self.agents)
        N = sc.graph.node_count
        n = self.n
        y = self.initial_state()

        err = np.zeros((K, N_ag))
        delta = np.zeros((K, N_ag))
        omega = np.zeros((K, N_ag))
        th_err = np.zeros((K, N_ag))
        fct_err = np.zeros((K, N_ag))
        latched = np.zeros((K, N_ag), dtype=bool)
        full_err = np.zeros(K)
        x_true = np.zeros((K, n))
        theta_hat = [np.zeros((K, cf.dims[i])) for i in range(N_ag)]
        theta_param = [np.zeros((K, cf.dims[i])) for i in range(N_ag)]
        theta_fct = [np.zeros((K, cf.dims[i])) for i in range(N_ag)]
        node_err = np.zeros((K, N)) if sc.objective == "O2" else None
        node_est = None

        for k in range(K):
            t = float(ts[k])
            self.update_latches(t, y)
            self.exchange(t, k, y)

            # log
            x = y[self.sl_x]
            Phi = y[self.sl_phi].reshape(n, n)
            x_true[k] = cf.T @ x
            fct_lists = []
            for i, ag in enumerate(self.agents):
                s = y[self.sl_agents[i]]
                fl = self.own_fct_list(i, y)
                fct_lists.append(fl)
                sl = cf.state_slice(i)
                lead = cf.leading(i)
                phi = ag.phi_lead(s, Phi)
                xi_hat = phi[sl, :lead] @ np.concatenate(fl) if lead else np.zeros(0)
                err[k, i] = np.linalg.norm(xi_hat - x[sl])
                if ag.n_i:
                    Om = s[ag.sl_Om].reshape(ag.n_i, ag.n_i)
                    delta[k, i] = _kernels.adjugate_det(np.ascontiguousarray(Om))[1]
                    omega[k, i] = ag.omega(s)
                    th = ag.theta_hat(s)
                    theta_hat[i][k] = th
                    theta_param[i][k] = s[ag.sl_th]
                    theta_fct[i][k] = fl[-1]
                    th_err[k, i] = np.linalg.norm(th - self.theta_blocks[i])
                    fct_err[k, i] = np.linalg.norm(fl[-1] - self.theta_blocks[i])
                latched[k, i] = self.latched[i]
            full_hat = Phi @ np.concatenate(fct_lists[-1])
            full_err[k] = np.linalg.norm(full_hat - x)
            if node_err is not None:
                ests = self.node_estimates(y, Phi)
                node_err[k] = [np.linalg.norm(e - x) for e in ests]
                node_est = ests

            if k + 1 == K:
                break
            upstream = [self.upstream_stack(i) for i in range(N_ag)]
            noise = None
            if self.rng is not None and t >= sc.noise.onset - 1e-12:
                m = self.noise_rows.size
                if sc.noise.kind == "gaussian":
                    draw = self.rng.normal(0.0, sc.noise.amplitude, m)
                else:
                    draw = self.rng.uniform(-sc.noise.amplitude, sc.noise.amplitude, m)
                noise = np.where(self.noise_rows, draw, 0.0)
            cons_inputs = None
            if sc.consensus is not None:
                cons_inputs = [fct_lists[i][i] for i in range(N_ag)]
            rhs = self.make_rhs(upstream, noise, cons_inputs)
            y = rk4_step(rhs, t, y, float(ts[k + 1] - t))
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite simulation state at t={ts[k + 1]:.6g}", t=float(ts[k + 1]))

        trace = Trace(
            agent_nodes=list(self.agent_nodes),
            t=ts,
            x_true=x_true,
            err_norm=err,
            delta=delta,
            omega=omega,
            theta_err=th_err,
            fct_err=fct_err,
            latched=latched,
            full_err=full_err,
            theta_hat=theta_hat,
            theta_param=theta_param,
            theta_fct=theta_fct,
            node_errors=node_err,
            node_estimates_final=None if node_est is None else [cf.T @ e for e in node_est],
            decimate=sc.decimate,
        )
        summary = self.summarize(trace, time.perf_counter() - t_start)
        return trace, summary

    def node_estimates(self, y, Phi) -> list:
        sc = self.sc
        N = sc.graph.node_count
        n = self.n
        if sc.consensus is not None:
            z_nodes = np.zeros((N, n))
            for i, sl in enumerate(self.sl_z):
                z = y[sl].reshape(N, self.cf.dims[i])
                z_nodes[:, self.cf.state_slice(i)] = z
            return [Phi @ z_nodes[k] for k in range(N)]
        return [Phi @ self.full_at_node.get(k + 1, np.zeros(n)) for k in range(N)]

    def summarize(self, trace: Trace, runtime) -> RunSummary:
        sc = self.sc
        scale = float(np.linalg.norm(sc.x0))
        thr = sc.conv_threshold_rel * scale
        labels = [str(node) for node in self.agent_nodes]
        latch = {lab: self.latch_time[i] for i, lab in enumerate(labels)}
        observed = {
            lab: first_window(trace.err_norm[:, i], thr, trace.t, sc.conv_window)
            for i, lab in enumerate(labels)
        }
        full_conv = first_sustained(trace.full_err, sc.full_tol_rel * scale, trace.t)
        final = {lab: float(trace.err_norm[-1, i]) for i, lab in enumerate(labels)}
        final["full"] = float(trace.full_err[-1])
        if trace.node_errors is not None:
            final["nodes"] = {str(k + 1): float(v) for k, v in enumerate(trace.node_errors[-1])}

        tol = LATCH_TOL_STEPS * sc.dt
        lt = [self.latch_time[i] for i in range(len(labels))]
        order_ok = all(
            (a is None and b is None) or (a is not None and (b is None or b >= a - tol))
            for a, b in zip(lt, lt[1:])
        )
        consistent = all(
            observed[lab] is None or lt[i] is None or observed[lab] >= lt[i] - tol
            for i, lab in enumerate(labels)
        )
        hops = self.fwd + self.ret
        validation = {
            "walk_valid": True,
            "canonical_form": all(r.passed for r in self.report.values()),
            "converged": all(self.latched),
            "transfers_supported": all(h.sent > 0 for h in hops),
            "latch_order": order_ok,
            "convergence_consistent": consistent,
            "finite": bool(np.all(np.isfinite(trace.err_norm))),
        }
        if not validation["converged"]:
            missing = [labels[i] for i in range(len(labels)) if not self.latched[i]]
            log.warning("agents %s never latched", missing)
        return RunSummary(
            latch_times_s=latch,
            observed_convergence_s=observed,
            final_error_norms=final,
            validation=validation,
            full_state_convergence_s=full_conv,
            restart_times_s={lab: list(self.agents[i].restarts) for i, lab in enumerate(labels)},
            walk=list(self.walk.nodes),
            dims=[int(d) for d in self.cf.dims],
            runtime_s=runtime,
            backend=_kernels.BACKEND,
        )


def write_outputs(trace: Trace, summary: RunSummary, out_dir, decimate=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out / "traces.csv", decimate)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.to_json(), fh, indent=2)
    return out / "traces.csv", out / "summary.json"


def with_overrides(d: dict, **changes) -> dict:
    """Deep copy of a scenario document with top-level keys replaced."""
    out = copy.deepcopy(d)
    out.update(changes)
    return out
