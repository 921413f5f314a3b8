"""Consensus protocols that spread the block estimates to every node.

For block ``i`` each node ``k`` keeps ``z_k`` (an estimate of ``theta_i``)
and runs

    z_k' = -sum_j a_kj f(z_k - z_j) - p_k f(z_k - theta_fct_i)

where only the node that owns block ``i`` has ``p_k > 0``. ``f`` is the
identity (linear), the signed power ``|e|^r sign(e)`` (finite time) or the
sum of two signed powers with exponents below and above one (fixed time).
Powers act elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fctdse.errors import ConfigurationError

MODES = ("linear", "finite_time", "fixed_time")


def signed_power(e, r, dead_zone=0.0):
    """``|e|^r sign(e)`` elementwise; entries with ``|e| < dead_zone`` map to 0."""
    e = np.asarray(e, dtype=float)
    out = np.sign(e) * np.abs(e) ** r
    if dead_zone > 0:
        out = np.where(np.abs(e) < dead_zone, 0.0, out)
    return out


def laplacian(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.diag(a.sum(axis=1)) - a


@dataclass
class ConsensusConfig:
    """Weights and protocol choice.

    ``a[k, j] > 0`` iff node ``j`` transmits to node ``k``; ``p`` is the
    pinning gain applied at the block owner. ``dead_zone`` zeroes
    differences smaller than itself so the non-smooth modes do not chatter
    at rounding level.
    """

    a: np.ndarray
    p: float = 1.0
    mode: str = "linear"
    r: float = 0.5
    r1: float = 0.5
    r2: float = 1.5
    dead_zone: float = 1e-9

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ConfigurationError("consensus weight matrix must be square")
        if np.any(self.a < 0) or np.any(np.diag(self.a) != 0):
            raise ConfigurationError("consensus weights must be non-negative with zero diagonal")
        if self.mode not in MODES:
            raise ConfigurationError(f"consensus mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.r <= 1:
            raise ConfigurationError(f"r must lie in (0, 1], got {self.r}")
        if not 0 < self.r1 <= 1:
            raise ConfigurationError(f"r1 must lie in (0, 1], got {self.r1}")
        if not self.r2 > 1:
            raise ConfigurationError(f"r2 must exceed 1, got {self.r2}")
        if not self.p > 0:
            raise ConfigurationError(f"pinning gain p must be positive, got {self.p}")

    @property
    def N(self) -> int:
        return self.a.shape[0]

    def pinning(self, owner) -> np.ndarray:
        """Diagonal of ``P`` for the block owned by node index ``owner`` (0-based)."""
        p = np.zeros(self.N)
        p[owner] = self.p
        return p

    def pinned_laplacian(self, owner) -> np.ndarray:
        return laplacian(self.a) + np.diag(self.pinning(owner))

    def validate(self):
        """Raise unless the graph is strongly connected and every pinned Laplacian is stable."""
        reach = (self.a > 0).T | np.eye(self.N, dtype=bool)
        for k in range(self.N):
            reach |= np.outer(reach[:, k], reach[k, :])
        if not reach.all():
            raise ConfigurationError("consensus requires a strongly connected graph")
        for owner in range(self.N):
            eig = np.linalg.eigvals(self.pinned_laplacian(owner))
            if eig.real.min() <= 0:
                raise ConfigurationError(
                    f"pinned Laplacian for node {owner + 1} has eigenvalue with real part {eig.real.min():.3g}"
                )
        return self


def gershgorin_discs(M):
    """``(centers, radii)`` of the row Gershgorin discs."""
    M = np.asarray(M, dtype=float)
    centers = np.diag(M).copy()
    radii = np.abs(M).sum(axis=1) - np.abs(centers)
    return centers, radii


def consensus_rhs(z, cfg: ConsensusConfig, fct_inputs, p_diag) -> np.ndarray:
    """Derivative of one block's consensus states.

    Parameters
    ----------
    z : (N, n_i) array
        Row ``k`` is node ``k``'s estimate of the block.
    fct_inputs : (N, n_i) array or (n_i,) array
        Finite-time estimate available at each node (only rows with
        ``p_diag > 0`` matter).
    p_diag : (N,) array
        Pinning gains.
    """
    z = np.asarray(z, dtype=float)
    theta = np.broadcast_to(np.asarray(fct_inputs, dtype=float), z.shape)
    a = cfg.a
    p = np.asarray(p_diag, dtype=float)[:, None]
    if cfg.mode == "linear":
        return -(laplacian(a) @ z) - p * (z - theta)

    diff = z[:, None, :] - z[None, :, :]  # diff[k, j] = z_k - z_j
    pin = z - theta
    dz = cfg.dead_zone
    if cfg.mode == "finite_time":
        exps = (cfg.r,)
    else:
        exps = (cfg.r1, cfg.r2)
    out = np.zeros_like(z)
    for r in exps:
        out -= np.einsum("kj,kjd->kd", a, signed_power(diff, r, dz))
        out -= p * signed_power(pin, r, dz)
    return out


def run_omniscience(scenario):
    """Simulate ``scenario`` (objective O2 with consensus) and return per-node estimates.

    Returns ``(trace, summary, estimates)`` where ``estimates[k]`` is the
    final full-state estimate of node ``k + 1`` in original coordinates.
    """
    from fctdse.sim import run

    trace, summary = run(scenario)
    return trace, summary, trace.node_estimates_final
