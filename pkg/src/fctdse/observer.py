"""Per-agent parameter-estimation-based observer with finite convergence time.

Agent ``i`` (0-based position along the walk) owns block ``i`` of the
canonical form. Its unknown parameter is the initial condition of that
block, ``theta_i = x_i(0)``, and its measurement obeys the linear regression

    ytt_i(t) = Psi_i(t) theta_i + eps_i(t),    Psi_i = C_ii Phi_ii(t),

where ``ytt_i`` is the sensor output with the contribution of the upstream
blocks (computed from the upstream finite-time estimates) removed, and
``eps_i`` vanishes once those estimates are exact. The regression is
filtered, mixed through the adjugate of the filtered regressor matrix into
scalar regressions with common regressor ``Delta = det(Omega)``, estimated
by a gradient law, and finally inverted in closed form through the scalar
``omega`` that tracks the decay of the parameter error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fctdse import _kernels
from fctdse.canonical import CanonicalForm
from fctdse.errors import ConfigurationError, ProtocolError, StructuralError
from fctdse.numerics import adjugate_and_det


@dataclass
class ObserverConfig:
    """Tuning of one agent.

    ``lam`` is the filter pole, ``gamma`` the adaptation gain and ``mu`` the
    clipping margin of the reconstruction. ``kappa`` scales the regression
    (both sides) to keep ``det(Omega)`` away from underflow on large blocks.
    """

    lam: float = 1.0
    gamma: float = 5.0
    mu: float = 0.05
    kappa: float = 1.0
    theta_hat_init: np.ndarray | None = None
    estimator: str = "drem"

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.mu < 1:
            raise ConfigurationError(f"mu must lie in (0, 1), got {self.mu}")
        if not self.kappa > 0:
            raise ConfigurationError(f"kappa must be positive, got {self.kappa}")
        if self.estimator not in ("drem", "gradient"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.theta_hat_init is not None:
            self.theta_hat_init = np.asarray(self.theta_hat_init, dtype=float).reshape(-1)

    def init_for(self, n_i) -> np.ndarray:
        if self.theta_hat_init is None:
            return np.zeros(n_i)
        if self.theta_hat_init.size != n_i:
            raise ConfigurationError(
                f"theta_hat_init has {self.theta_hat_init.size} entries, block has {n_i}"
            )
        return self.theta_hat_init.copy()


@dataclass
class AgentObserverState:
    index: int
    Phi: np.ndarray
    Y: np.ndarray
    Omega: np.ndarray
    omega: float
    theta_hat: np.ndarray
    upstream_fct: list = field(default_factory=list)
    t: float = 0.0

    @classmethod
    def initial(cls, index, n_i, theta_hat_init=None, t=0.0):
        return cls(
            index=index,
            Phi=np.eye(n_i),
            Y=np.zeros(n_i),
            Omega=np.zeros((n_i, n_i)),
            omega=1.0,
            theta_hat=np.zeros(n_i) if theta_hat_init is None else np.array(theta_hat_init, float),
            t=t,
        )


@dataclass
class FctEstimate:
    theta_fct: np.ndarray
    converged_flag: bool = False
    t_c: float | None = None


@dataclass
class DremDerivative:
    dY: np.ndarray
    dOmega: np.ndarray
    domega: float
    dtheta: np.ndarray
    delta: float
    dPhi: np.ndarray | None = None


def regressor(cf: CanonicalForm, i: int, phi) -> np.ndarray:
    """``Psi_i = C_ii Phi_ii``; ``phi`` is any leading block of the transition matrix covering block ``i``."""
    sl = cf.state_slice(i)
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] < sl.stop or phi.shape[1] < sl.stop:
        raise StructuralError(f"transition matrix {phi.shape} does not cover block {i + 1}")
    return cf.C_block(i, i) @ phi[sl, sl]


def perturbed_output(cf: CanonicalForm, i: int, y_i, phi, upstream_fct: Sequence) -> np.ndarray:
    """Sensor output with the upstream blocks' contribution removed.

    For ``i = 0`` this is ``y_i`` itself. Otherwise, with
    ``s = stack(theta_fct_0 .. theta_fct_{i-1})``::

        y_i - [C_i0 .. C_i,i-1] Phi^{(i-1)} s - C_ii sum_j Phi_ij theta_fct_j

    Raises
    ------
    ProtocolError
        If fewer than ``i`` upstream estimates are supplied.
    """
    y_i = np.asarray(y_i, dtype=float)
    if i == 0:
        return y_i.copy()
    if len(upstream_fct) < i:
        raise ProtocolError(f"agent {i + 1} is missing the estimate of upstream block {len(upstream_fct) + 1}")
    phi = np.asarray(phi, dtype=float)
    lead = cf.leading(i - 1)
    stack = np.concatenate([np.asarray(upstream_fct[j], float).reshape(-1) for j in range(i)])
    rows = cf.output_slice(i)
    C_left = cf.C_can[rows, :lead]
    out = y_i - C_left @ (phi[:lead, :lead] @ stack)
    sl = cf.state_slice(i)
    acc = np.zeros(cf.dims[i])
    for j in range(i):
        acc += phi[sl, cf.state_slice(j)] @ np.asarray(upstream_fct[j], float)
    return out - cf.C_block(i, i) @ acc


def drem_rhs(state: AgentObserverState, cfg: ObserverConfig, y_tt, Psi, A_ii=None) -> DremDerivative:
    """Time derivatives of the filtered regression, mixing and estimator.

    ``Y' = -lam (Y - Psi^T ytt)``, ``Omega' = -lam (Omega - Psi^T Psi)``,
    ``omega' = -gamma Delta^2 omega`` and
    ``theta' = gamma Delta (adj(Omega) Y - Delta theta)``, with
    ``Delta = det(Omega)``. When ``A_ii`` is given the agent's transition
    block derivative ``A_ii Phi`` is included.
    """
    lam, gam, k = cfg.lam, cfg.gamma, cfg.kappa
    Psi = k * np.atleast_2d(np.asarray(Psi, dtype=float))
    ytt = k * np.asarray(y_tt, dtype=float).reshape(-1)
    if Psi.shape[0] != ytt.size or Psi.shape[1] != state.Y.size:
        raise StructuralError(f"Psi {Psi.shape} incompatible with output {ytt.size} / block {state.Y.size}")
    adj, delta = adjugate_and_det(state.Omega)
    vals = np.concatenate([state.Y, state.Omega.ravel(), [state.omega], state.theta_hat])
    if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(ytt)):
        from fctdse.errors import IntegrationError

        raise IntegrationError(f"non-finite observer input at t={state.t:.6g}", t=state.t)
    dPhi = None if A_ii is None else np.asarray(A_ii, float) @ state.Phi
    return DremDerivative(
        dY=-lam * (state.Y - Psi.T @ ytt),
        dOmega=-lam * (state.Omega - Psi.T @ Psi),
        domega=-gam * delta * delta * state.omega,
        dtheta=gam * delta * (adj @ state.Y - delta * state.theta_hat),
        delta=delta,
        dPhi=dPhi,
    )


def gradient_baseline_rhs(theta_hat, cfg: ObserverConfig, y_tt, Psi) -> np.ndarray:
    """Plain gradient estimator ``theta' = gamma Psi^T (ytt - Psi theta)``; asymptotic only."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    y_tt = np.asarray(y_tt, dtype=float).reshape(-1)
    theta_hat = np.asarray(theta_hat, dtype=float)
    return cfg.gamma * (Psi.T @ (y_tt - Psi @ theta_hat))


def fct_reconstruct(theta_hat, theta_hat_init, omega, mu, previous: FctEstimate | None = None, t=None) -> FctEstimate:
    """Closed-form finite-time estimate from the running estimate and ``omega``.

    ``omega_c = min(omega, 1 - mu)`` and
    ``theta_fct = (theta_hat - omega_c theta_hat_init) / (1 - omega_c)``.
    The convergence flag latches the first time ``omega < 1 - mu``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_hat_init = np.asarray(theta_hat_init, dtype=float)
    omega_c = omega if omega < 1.0 - mu else 1.0 - mu
    theta_fct = (theta_hat - omega_c * theta_hat_init) / (1.0 - omega_c)
    flag = omega < 1.0 - mu
    if previous is not None and previous.converged_flag:
        return FctEstimate(theta_fct, True, previous.t_c)
    return FctEstimate(theta_fct, flag, t if flag else None)


def state_estimate(cf: CanonicalForm, i: int, phi, fct_list: Sequence) -> np.ndarray:
    """``x_hat_i = sum_{j <= i} Phi_ij theta_fct_j`` (block ``i`` only)."""
    if len(fct_list) < i + 1:
        raise ProtocolError(f"agent {i + 1} needs {i + 1} block estimates, got {len(fct_list)}")
    phi = np.asarray(phi, dtype=float)
    sl = cf.state_slice(i)
    out = np.zeros(cf.dims[i])
    for j in range(i + 1):
        out += phi[sl, cf.state_slice(j)] @ np.asarray(fct_list[j], float)
    return out


def full_state_estimate(cf: CanonicalForm, phi, fct_list: Sequence):
    """Full estimate at the last agent: ``(x_hat_canonical, T x_hat_canonical)``."""
    if len(fct_list) < cf.N:
        raise ProtocolError(f"full reconstruction needs {cf.N} block estimates, got {len(fct_list)}")
    stack = np.concatenate([np.asarray(f, float).reshape(-1) for f in fct_list[: cf.N]])
    x_can = np.asarray(phi, float) @ stack
    return x_can, cf.T @ x_can


class AgentObserver:
    """Simulation-side wrapper of one agent's estimator.

    Holds the constant block matrices and the flat-state layout::

        [Phi^{(i)} (local mode only) | Phi_loc | Y | Omega | omega | theta_hat]

    ``Phi_loc`` is the agent's own diagonal transition block, restarted at
    identity whenever the estimator is restarted. After a restart at
    ``t_r`` the regression parameter becomes ``Phi_ii(t_r) theta_i``; the
    anchor matrix ``Phi_ii(t_r)`` maps it back.
    """

    def __init__(self, cf: CanonicalForm, i: int, cfg: ObserverConfig, local_phi=False, node=None):
        self.cf = cf
        self.i = i
        self.cfg = cfg
        self.node = node if node is not None else i + 1
        self.n_i = int(cf.dims[i])
        self.lead = cf.leading(i)
        self.up_lead = cf.leading(i - 1) if i > 0 else 0
        self.local_phi = bool(local_phi)
        self.rows = cf.output_slice(i)
        self.sl = cf.state_slice(i)
        self.A_ii = np.ascontiguousarray(cf.A_block(i, i))
        self.C_ii = np.ascontiguousarray(cf.C_block(i, i))
        self.C_row = np.ascontiguousarray(cf.C_can[self.rows, : self.lead])
        self.A_lead = np.ascontiguousarray(cf.A_can[: self.lead, : self.lead])
        self.theta_init = cfg.init_for(self.n_i)

        self.lead_size = self.lead * self.lead if self.local_phi else 0
        self.core_size = _kernels.agent_state_size(self.n_i) if self.n_i else 0
        self.size = self.lead_size + self.core_size
        n = self.n_i
        nn = n * n
        c0 = self.lead_size
        self.sl_phi = slice(c0, c0 + nn)
        self.sl_Y = slice(c0 + nn, c0 + nn + n)
        self.sl_Om = slice(c0 + nn + n, c0 + 2 * nn + n)
        self.ix_w = c0 + 2 * nn + n
        self.sl_th = slice(c0 + 2 * nn + n + 1, c0 + self.core_size)

        self.anchor = np.eye(n)
        self.anchor_time = 0.0
        self.restarts: list[float] = []

    # -- state handling -------------------------------------------------
    def initial_state(self) -> np.ndarray:
        s = np.zeros(self.size)
        if self.local_phi:
            s[: self.lead_size] = np.eye(self.lead).ravel()
        if self.n_i:
            self._reset_core(s, np.eye(self.n_i), 0.0)
        return s

    def _reset_core(self, s, anchor, t):
        n = self.n_i
        s[self.sl_phi] = np.eye(n).ravel()
        s[self.sl_Y] = 0.0
        s[self.sl_Om] = 0.0
        s[self.ix_w] = 1.0
        s[self.sl_th] = anchor @ self.theta_init
        self.anchor = np.array(anchor, dtype=float)
        self.anchor_time = t

    def restart(self, s, phi_lead, t):
        """Restart the estimator at ``t`` with the transition block taken from ``phi_lead``."""
        if not self.n_i:
            return
        self._reset_core(s, phi_lead[self.sl, self.sl], t)
        self.restarts.append(t)

    def phi_lead(self, s, Phi_global) -> np.ndarray:
        if self.local_phi:
            return s[: self.lead_size].reshape(self.lead, self.lead)
        return Phi_global[: self.lead, : self.lead]

    # -- dynamics ---------------------------------------------------------
    def rhs(self, s, x_can, Phi_global, upstream_stack, noise, out):
        """Fill ``out`` with ``ds/dt``; returns ``det(Omega)`` (0 for empty blocks)."""
        phi = self.phi_lead(s, Phi_global)
        if self.local_phi:
            out[: self.lead_size] = (self.A_lead @ phi).ravel()
        if not self.n_i:
            return 0.0
        y = self.C_row @ x_can[: self.lead]
        if noise is not None:
            y = y + noise
        if self.i > 0:
            G = self.C_row @ phi[:, : self.up_lead]
            y = y - G @ upstream_stack
        c0 = self.lead_size
        core = s[c0:]
        dcore = out[c0:]
        cfg = self.cfg
        delta = _kernels.agent_rhs(core, self.A_ii, self.C_ii, y, cfg.lam, cfg.gamma, cfg.kappa, dcore)
        if cfg.estimator == "gradient":
            n, nn = self.n_i, self.n_i * self.n_i
            Psi = cfg.kappa * (self.C_ii @ core[:nn].reshape(n, n))
            th = core[2 * nn + n + 1:]
            dcore[2 * nn + n + 1:] = gradient_baseline_rhs(th, cfg, cfg.kappa * y, Psi)
        return delta

    # -- outputs ----------------------------------------------------------
    def omega(self, s) -> float:
        return float(s[self.ix_w]) if self.n_i else 0.0

    def theta_hat(self, s) -> np.ndarray:
        """Running estimate mapped back to ``theta_i = x_i(0)`` coordinates."""
        if not self.n_i:
            return np.zeros(0)
        return np.linalg.solve(self.anchor, s[self.sl_th])

    def theta_fct(self, s) -> np.ndarray:
        if not self.n_i:
            return np.zeros(0)
        if self.cfg.estimator == "gradient":
            return self.theta_hat(s)
        est = fct_reconstruct(s[self.sl_th], self.anchor @ self.theta_init, s[self.ix_w], self.cfg.mu)
        return np.linalg.solve(self.anchor, est.theta_fct)

    def excited(self, s) -> bool:
        """Sufficient-excitation test ``omega < 1 - mu``."""
        if not self.n_i:
            return True
        if self.cfg.estimator == "gradient":
            return False
        return bool(s[self.ix_w] < 1.0 - self.cfg.mu)

    def snapshot(self, s, upstream_fct=(), t=0.0) -> AgentObserverState:
        n = self.n_i
        return AgentObserverState(
            index=self.i,
            Phi=s[self.sl_phi].reshape(n, n).copy(),
            Y=s[self.sl_Y].copy(),
            Omega=s[self.sl_Om].reshape(n, n).copy(),
            omega=self.omega(s),
            theta_hat=s[self.sl_th].copy(),
            upstream_fct=list(upstream_fct),
            t=t,
        )
