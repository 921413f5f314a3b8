"""Multisensor observable canonical form.

Given ``xdot = A x`` and sensors ``y_i = C_i x`` taken in a chosen order, find
an orthogonal ``T`` (``x_orig = T x``) such that ``T^-1 A T`` and ``C T`` are
block-lower-triangular and every diagonal pair ``(C_ii, A_ii)`` is
observable. Block ``i`` is the part of the state that sensor ``i`` observes
and no earlier sensor does.

The construction is a recursive observability staircase: split off the
observable subspace of the first sensor, restrict ``A`` to the (invariant)
unobservable remainder, and repeat with the next sensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fctdse.errors import NotJointlyObservableError, StructuralError
from fctdse.numerics import (
    DEFAULT_RANK_TOL,
    as_matrix,
    orthonormal_complement,
    rank_and_range,
)

PATTERN_TOL = 1e-10


def observable_subspace(C, A, tol_rel=DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the observable subspace of ``(C, A)``.

    This is ``range(O^T)`` for the observability matrix ``O``, grown one
    Krylov block at a time with re-orthonormalisation instead of forming
    explicit powers of ``A``.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if n == 0 or C.size == 0 or not np.any(C):
        return np.zeros((n, 0))
    scale = max(np.linalg.norm(A, 2), 1e-300)
    r, Q = rank_and_range(C.T, tol_rel)
    while 0 < r < n:
        M = np.hstack([Q, (A.T @ Q) / scale])
        r_new, Q_new = rank_and_range(M, tol_rel)
        if r_new <= r:
            break
        r, Q = r_new, Q_new
    return Q


def observability_matrix(C, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    blocks = [C]
    for _ in range(1, A.shape[0]):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def is_observable(C, A, tol_rel=DEFAULT_RANK_TOL) -> bool:
    n = np.asarray(A).shape[0]
    return observable_subspace(C, A, tol_rel).shape[1] == n


@dataclass
class LtiSystem:
    """Autonomous plant ``xdot = A x`` observed by ``N`` sensors.

    Parameters
    ----------
    A : (n, n) array_like
    sensor_blocks : sequence of (m_i, n) array_like
    stable : bool
        Require ``A`` Hurwitz.
    check_observable : bool
        Verify joint observability of the stacked pair on construction.
    """

    A: np.ndarray
    sensor_blocks: list
    stable: bool = False
    check_observable: bool = True
    tol_rel: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        self.A = as_matrix(self.A, "A", square=True)
        n = self.A.shape[0]
        if n == 0:
            raise StructuralError("state dimension must be positive")
        blocks = []
        for k, Ci in enumerate(self.sensor_blocks):
            Ci = as_matrix(np.atleast_2d(Ci), f"C_{k + 1}")
            if Ci.shape[1] != n:
                raise StructuralError(f"C_{k + 1} has {Ci.shape[1]} columns, expected {n}")
            blocks.append(Ci)
        if not blocks:
            raise StructuralError("at least one sensor block is required")
        self.sensor_blocks = blocks
        if self.stable and np.max(np.linalg.eigvals(self.A).real) >= 0:
            raise StructuralError("A is declared stable but is not Hurwitz")
        if self.check_observable:
            deficit = self.observability_deficit()
            if deficit:
                raise NotJointlyObservableError(
                    f"(C, A) is not jointly observable: rank deficit {deficit}", deficit
                )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return len(self.sensor_blocks)

    @property
    def output_dims(self) -> list[int]:
        return [Ci.shape[0] for Ci in self.sensor_blocks]

    @property
    def C(self) -> np.ndarray:
        return np.vstack(self.sensor_blocks)

    def observability_deficit(self) -> int:
        return self.n - observable_subspace(self.C, self.A, self.tol_rel).shape[1]


@dataclass
class CanonicalForm:
    """Result of :func:`decompose`.

    ``C_can`` stacks the sensor rows in ``order``; ``dims[i]`` and
    ``out_dims[i]`` are the state and output sizes of block ``i``.
    """

    T: np.ndarray
    A_can: np.ndarray
    C_can: np.ndarray
    dims: list
    out_dims: list
    order: list = field(default_factory=list)

    def __post_init__(self):
        self.state_offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.output_offsets = np.concatenate([[0], np.cumsum(self.out_dims)]).astype(int)

    @property
    def N(self) -> int:
        return len(self.dims)

    def state_slice(self, i) -> slice:
        return slice(self.state_offsets[i], self.state_offsets[i + 1])

    def output_slice(self, i) -> slice:
        return slice(self.output_offsets[i], self.output_offsets[i + 1])

    def A_block(self, j, k) -> np.ndarray:
        return self.A_can[self.state_slice(j), self.state_slice(k)]

    def C_block(self, j, k) -> np.ndarray:
        return self.C_can[self.output_slice(j), self.state_slice(k)]

    def leading(self, i) -> int:
        """State size of blocks ``0..i`` inclusive."""
        return int(self.state_offsets[i + 1])

    def to_canonical(self, x_orig) -> np.ndarray:
        return np.linalg.solve(self.T, np.asarray(x_orig, dtype=float))

    def to_original(self, x_can) -> np.ndarray:
        return self.T @ np.asarray(x_can, dtype=float)

    def to_json(self) -> dict:
        return {
            "T": self.T.tolist(),
            "A_can": self.A_can.tolist(),
            "C_can": self.C_can.tolist(),
            "dims": [int(d) for d in self.dims],
            "out_dims": [int(d) for d in self.out_dims],
            "order": [int(k) + 1 for k in self.order],
        }


def _upper_blocks(M, row_offsets, col_offsets):
    """Yield the strictly-upper blocks of a block-partitioned matrix."""
    N = len(row_offsets) - 1
    for j in range(N):
        for k in range(j + 1, N):
            yield M[row_offsets[j]:row_offsets[j + 1], col_offsets[k]:col_offsets[k + 1]]


def _max_upper(M, row_offsets, col_offsets) -> float:
    return max((float(np.max(np.abs(B))) for B in _upper_blocks(M, row_offsets, col_offsets) if B.size), default=0.0)


def decompose(sys: LtiSystem, order: Sequence[int] | None = None, tol_rel=DEFAULT_RANK_TOL) -> CanonicalForm:
    """Multisensor observable canonical form of ``sys``.

    Parameters
    ----------
    order : sequence of int, optional
        0-based permutation of the sensors; defaults to ``0..N-1``.

    Raises
    ------
    NotJointlyObservableError
        If the stacked pair leaves a non-empty unobservable remainder.
    """
    N = sys.N
    order = list(range(N)) if order is None else [int(k) for k in order]
    if sorted(order) != list(range(N)):
        raise StructuralError(f"order must be a permutation of 0..{N - 1}, got {order}")

    n = sys.n
    A = sys.A
    U = np.eye(n)  # orthonormal basis of the still-unobserved subspace
    columns, dims = [], []
    for k in order:
        if U.shape[1] == 0:
            dims.append(0)
            continue
        A_rest = U.T @ A @ U
        C_rest = sys.sensor_blocks[k] @ U
        V = observable_subspace(C_rest, A_rest, tol_rel)
        dims.append(V.shape[1])
        if V.shape[1]:
            columns.append(U @ V)
            U = U @ orthonormal_complement(V, U.shape[1])
    if U.shape[1]:
        raise NotJointlyObservableError(
            f"(C, A) is not jointly observable: rank deficit {U.shape[1]}", U.shape[1]
        )

    T = np.hstack(columns)
    A_can = T.T @ A @ T
    C_can = np.vstack([sys.sensor_blocks[k] for k in order]) @ T
    out_dims = [sys.sensor_blocks[k].shape[0] for k in order]
    cf = CanonicalForm(T, A_can, C_can, dims, out_dims, order)

    # rounding leaves ~eps entries where the structure is exactly zero
    scale = 1.0 + np.linalg.norm(A, 2) + np.linalg.norm(sys.C, 2)
    for M, rows in ((cf.A_can, cf.state_offsets), (cf.C_can, cf.output_offsets)):
        for B in _upper_blocks(M, rows, cf.state_offsets):
            if B.size and np.max(np.abs(B)) <= 1e-9 * scale:
                B[...] = 0.0
        M += 0.0  # normalise -0.0
    return cf


@dataclass
class CheckResult:
    passed: bool
    magnitude: float
    detail: str = ""


def validate(cf: CanonicalForm, sys: LtiSystem, tol=PATTERN_TOL) -> dict[str, CheckResult]:
    """Check every canonical-form invariant; never raises on failure."""
    n = sys.n
    T = cf.T
    report = {}
    if T.shape != (n, n) or cf.A_can.shape != (n, n) or cf.C_can.shape[1] != n:
        report["dimensions"] = CheckResult(False, float("inf"), "shape mismatch")
        return report
    report["dimensions"] = CheckResult(sum(cf.dims) == n, float(abs(sum(cf.dims) - n)))

    orth = float(np.max(np.abs(T.T @ T - np.eye(n))))
    report["orthogonality"] = CheckResult(orth <= tol, orth)

    a_pat = _max_upper(cf.A_can, cf.state_offsets, cf.state_offsets)
    c_pat = _max_upper(cf.C_can, cf.output_offsets, cf.state_offsets)
    report["zero_pattern"] = CheckResult(max(a_pat, c_pat) <= tol, max(a_pat, c_pat))

    order = cf.order or list(range(sys.N))
    C_ord = np.vstack([sys.sensor_blocks[k] for k in order])
    try:
        Tinv_A_T = np.linalg.solve(T, sys.A @ T)
        sim_a = float(np.max(np.abs(cf.A_can - Tinv_A_T)))
    except np.linalg.LinAlgError:
        sim_a = float("inf")
    sim_c = float(np.max(np.abs(cf.C_can - C_ord @ T))) if C_ord.shape == cf.C_can.shape else float("inf")
    report["similarity"] = CheckResult(max(sim_a, sim_c) <= tol, max(sim_a, sim_c))

    bad = [
        i + 1
        for i in range(cf.N)
        if cf.dims[i] and not is_observable(cf.C_block(i, i), cf.A_block(i, i))
    ]
    report["diagonal_observability"] = CheckResult(
        not bad, float(len(bad)), f"unobservable diagonal blocks: {bad}" if bad else ""
    )
    return report


def report_to_json(report: dict[str, CheckResult]) -> dict:
    return {
        name: {"passed": bool(r.passed), "magnitude": r.magnitude, "detail": r.detail}
        for name, r in report.items()
    }
