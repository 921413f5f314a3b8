"""Reference numpy implementations of the hot kernels.

Used when the compiled ``_core`` extension is unavailable or when
``FCTDSE_PURE_PYTHON=1`` is set. The compiled versions must agree with
these to rounding error.
"""

import numpy as np


def adjugate_det(M):
    """Faddeev-LeVerrier: returns ``(adj(M), det(M))`` for any square ``M``."""
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 1.0
    I = np.eye(n)
    Mk = np.zeros((n, n))
    c = 1.0  # c_{n-k+1}, leading coefficient is 1
    for k in range(1, n + 1):
        Mk = M @ Mk + c * I
        c = -np.trace(M @ Mk) / k
    # after the loop Mk = M_n and c = c_0
    sign = -1.0 if n % 2 else 1.0
    det = sign * c
    adj = -sign * Mk
    return adj, float(det)


def agent_state_size(n):
    return 2 * n * n + 2 * n + 1


def agent_rhs(s, A, C, ytt, lam, gam, kappa, out):
    """Right-hand side of one agent's estimator.

    State layout of ``s`` (and ``out``) for block size ``n``::

        [Phi (n*n) | Y (n) | Omega (n*n) | omega | theta_hat (n)]

    ``Phi`` is the agent's own transition block, ``C`` the diagonal output
    block and ``ytt`` the (perturbed) output. Returns the scalar
    ``det(Omega)`` used for mixing.
    """
    n = A.shape[0]
    nn = n * n
    Phi = s[:nn].reshape(n, n)
    Y = s[nn:nn + n]
    Om = s[nn + n:2 * nn + n].reshape(n, n)
    w = s[2 * nn + n]
    th = s[2 * nn + n + 1:]

    Psi = kappa * (C @ Phi)
    yk = kappa * ytt
    adj, det = adjugate_det(Om)

    out[:nn] = (A @ Phi).reshape(-1)
    out[nn:nn + n] = -lam * (Y - Psi.T @ yk)
    out[nn + n:2 * nn + n] = (-lam * (Om - Psi.T @ Psi)).reshape(-1)
    out[2 * nn + n] = -gam * det * det * w
    out[2 * nn + n + 1:] = gam * det * (adj @ Y - det * th)
    return det
