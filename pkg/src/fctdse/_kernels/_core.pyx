# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_fallback``; same signatures."""

import numpy as np

DEF MAXN = 16


cdef double _fl(const double* M, int n, double* adj) noexcept nogil:
    # Faddeev-LeVerrier on row-major M; writes adj, returns det.
    cdef double Mk[MAXN * MAXN]
    cdef double T[MAXN * MAXN]
    cdef double c = 1.0, tr, acc
    cdef int i, j, l, k
    for i in range(n * n):
        Mk[i] = 0.0
    for k in range(1, n + 1):
        # T = M @ Mk + c I
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + M[i * n + l] * Mk[l * n + j]
                T[i * n + j] = acc
            T[i * n + i] += c
        for i in range(n * n):
            Mk[i] = T[i]
        # c = -trace(M @ Mk) / k
        tr = 0.0
        for i in range(n):
            for l in range(n):
                tr = tr + M[i * n + l] * Mk[l * n + i]
        c = -tr / k
    cdef double sign = -1.0 if n % 2 else 1.0
    for i in range(n * n):
        adj[i] = -sign * Mk[i]
    return sign * c


def adjugate_det(const double[:, ::1] M):
    cdef int n = M.shape[0]
    if n > MAXN:
        from fctdse._kernels import _fallback
        return _fallback.adjugate_det(np.asarray(M))
    adj = np.empty((n, n))
    if n == 0:
        return adj, 1.0
    cdef double[:, ::1] av = adj
    cdef double det = _fl(&M[0, 0], n, &av[0, 0])
    return adj, det


def agent_state_size(int n):
    return 2 * n * n + 2 * n + 1


def agent_rhs(const double[::1] s, const double[:, ::1] A, const double[:, ::1] C,
              const double[::1] ytt, double lam, double gam, double kappa,
              double[::1] out):
    cdef int n = A.shape[0]
    cdef int m = C.shape[0]
    if n > MAXN or m > MAXN:
        from fctdse._kernels import _fallback
        return _fallback.agent_rhs(np.asarray(s), np.asarray(A), np.asarray(C),
                                   np.asarray(ytt), lam, gam, kappa, np.asarray(out))
    cdef int nn = n * n
    cdef int oY = nn, oOm = nn + n, ow = 2 * nn + n, oth = 2 * nn + n + 1
    cdef double Psi[MAXN * MAXN]
    cdef double adj[MAXN * MAXN]
    cdef double PtY[MAXN]
    cdef double acc, det, w
    cdef int i, j, l

    with nogil:
        # Psi = kappa * C @ Phi  (m x n)
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + C[i, l] * s[l * n + j]
                Psi[i * n + j] = kappa * acc
        # dPhi = A @ Phi
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + A[i, l] * s[l * n + j]
                out[i * n + j] = acc
        # dY = -lam (Y - Psi^T kappa ytt)
        for j in range(n):
            acc = 0.0
            for i in range(m):
                acc = acc + Psi[i * n + j] * (kappa * ytt[i])
            out[oY + j] = -lam * (s[oY + j] - acc)
        # dOmega = -lam (Omega - Psi^T Psi)
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(m):
                    acc = acc + Psi[l * n + i] * Psi[l * n + j]
                out[oOm + i * n + j] = -lam * (s[oOm + i * n + j] - acc)
        det = _fl(&s[oOm], n, adj)
        w = s[ow]
        out[ow] = -gam * det * det * w
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc = acc + adj[i * n + j] * s[oY + j]
            out[oth + i] = gam * det * (acc - det * s[oth + i])
    return det
