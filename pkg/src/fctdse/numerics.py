"""Dense linear algebra and fixed-step integration primitives.

Matrices are plain ``float64`` numpy arrays; :func:`as_matrix` is the single
entry point that enforces shape and finiteness on user-supplied data.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from fctdse import _kernels
from fctdse.errors import IntegrationError, StructuralError

DEFAULT_RANK_TOL = 1e-10
DEFAULT_DT = 1e-3

# Pade degree for the scaling-and-squaring exponential and the norm bound the
# scaled argument must satisfy; together they give a truncation error below
# double-precision unit roundoff.
_PADE_DEGREE = 6
_PADE_NORM_BOUND = 0.5


class OdeState(NamedTuple):
    t: float
    y: np.ndarray


def as_matrix(value, name="matrix", square=False) -> np.ndarray:
    """Return ``value`` as a finite 2-D float array or raise StructuralError."""
    M = np.array(value, dtype=float)
    if M.ndim == 1 and M.size == 0:
        M = M.reshape(0, 0)
    if M.ndim != 2:
        raise StructuralError(f"{name} must be 2-D, got shape {M.shape}")
    if square and M.shape[0] != M.shape[1]:
        raise StructuralError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise StructuralError(f"{name} has non-finite entries")
    return M


def as_vector(value, name="vector", size=None) -> np.ndarray:
    v = np.array(value, dtype=float).reshape(-1)
    if size is not None and v.size != size:
        raise StructuralError(f"{name} must have {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise StructuralError(f"{name} has non-finite entries")
    return v


def _pade_coefficients(q):
    c = [1.0]
    for k in range(1, q + 1):
        c.append(c[-1] * (q - k + 1) / (k * (2 * q - k + 1)))
    return c


def mat_exp(A, t=1.0) -> np.ndarray:
    """Matrix exponential ``e^{A t}``.

    Scaling and squaring around a diagonal [6/6] Pade approximant: the
    argument is halved until its infinity norm is at most 1/2, the rational
    approximation is evaluated, then squared back. With these choices the
    Pade truncation error is below unit roundoff, so accuracy is limited by
    the conditioning of the squaring phase only.
    """
    A = as_matrix(A, "A", square=True)
    if not math.isfinite(t):
        raise StructuralError("t must be finite")
    n = A.shape[0]
    X = A * t
    norm = np.linalg.norm(X, np.inf) if n else 0.0
    s = 0
    if norm > _PADE_NORM_BOUND:
        s = int(math.ceil(math.log2(norm / _PADE_NORM_BOUND)))
        X = X / 2.0**s

    c = _pade_coefficients(_PADE_DEGREE)
    I = np.eye(n)
    X2 = X @ X
    # split into even and odd powers: N = U + V, D = U - V
    even = c[0] * I
    odd = c[1] * I
    P = I
    for k in range(2, _PADE_DEGREE + 1, 2):
        P = P @ X2
        even = even + c[k] * P
        if k + 1 <= _PADE_DEGREE:
            odd = odd + c[k + 1] * P
    V = X @ odd
    E = np.linalg.solve(even - V, even + V)
    for _ in range(s):
        E = E @ E
    return E


def adjugate_and_det(M):
    """Adjugate and determinant of a square matrix, jointly.

    Uses the Faddeev-LeVerrier recursion, which never divides by the
    determinant and is therefore valid for singular input (a zero matrix
    has zero adjugate for n >= 2 and unit adjugate for n = 1).

    Returns
    -------
    adj : (n, n) ndarray
    det : float
    """
    M = as_matrix(M, "M", square=True)
    return _kernels.adjugate_det(np.ascontiguousarray(M))


def rank_and_range(M, tol_rel=DEFAULT_RANK_TOL):
    """Numerical rank and an orthonormal basis of the column space.

    Rank counts singular values ``>= sigma_max * max(rows, cols) * tol_rel``.
    The basis comes from a column-pivoted QR (LAPACK ``geqp3``: largest
    remaining column norm, ties to the lowest index), so it is
    deterministic for a given input.
    """
    M = as_matrix(M, "M")
    rows, cols = M.shape
    if rows == 0 or cols == 0:
        raise StructuralError("rank_and_range needs a non-empty matrix")
    sv = np.linalg.svd(M, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    if smax == 0.0:
        return 0, np.zeros((rows, 0))
    r = int(np.count_nonzero(sv >= smax * max(rows, cols) * tol_rel))
    Q, _, _ = scipy.linalg.qr(M, pivoting=True, mode="economic")
    return r, Q[:, :r]


def orthonormal_complement(B, n=None) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``range(B)``.

    ``B`` must already have orthonormal columns.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0] if n is None else n
    r = B.shape[1] if B.ndim == 2 else 0
    if r == 0:
        return np.eye(n)
    if r >= n:
        return np.zeros((n, 0))
    Q, _ = np.linalg.qr(B, mode="complete")
    return Q[:, r:]


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_times(t0, t_final, dt) -> np.ndarray:
    """Grid ``t0 + k*dt`` clamped so the last point is exactly ``t_final``."""
    if not dt > 0:
        raise StructuralError("dt must be positive")
    if not t_final > t0:
        raise StructuralError("t_final must exceed t0")
    steps = int(math.ceil((t_final - t0) / dt - 1e-9))
    ts = t0 + dt * np.arange(steps + 1)
    ts[-1] = t_final
    return ts


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: Sequence[float],
    t0: float,
    t_final: float,
    dt: float = DEFAULT_DT,
) -> list[OdeState]:
    """Classical fixed-step RK4 from ``t0`` to ``t_final``.

    Raises
    ------
    IntegrationError
        When the state becomes non-finite; ``err.t`` is the first sample
        time at which that happened.
    """
    ts = step_times(t0, t_final, dt)
    y = np.array(y0, dtype=float)
    out = [OdeState(float(ts[0]), y.copy())]
    for k in range(1, ts.size):
        t_prev = ts[k - 1]
        y = rk4_step(rhs, t_prev, y, ts[k] - t_prev)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={ts[k]:.6g}", t=float(ts[k]))
        out.append(OdeState(float(ts[k]), y.copy()))
    return out
