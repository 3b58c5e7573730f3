# cython: language_level=3
"""Compiled mixture-encode kernels.

Same contract as ``gic.kernels.reference`` (including the cache layout), with
the O(m*n*C*d) responsibility and gradient loops as typed C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def encode_forward(W, X, alpha, mu, log_sigma):
    """Encode all rows of W at once; see the reference module for semantics."""
    W = np.ascontiguousarray(W, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    log_sigma = np.ascontiguousarray(log_sigma, dtype=np.float64)

    cdef Py_ssize_t m = W.shape[0], n = W.shape[1]
    cdef Py_ssize_t C = mu.shape[0], d = mu.shape[1]

    sigma = np.exp(log_sigma)
    iv2 = np.exp(-2.0 * log_sigma)
    iv3 = np.exp(-3.0 * log_sigma)
    shift0 = alpha - alpha.max()
    logpi = shift0 - np.log(np.exp(shift0).sum())
    pi = np.exp(logpi)
    psi = log_sigma.sum(axis=1)

    diff = np.empty((n, C, d))
    D = np.empty((n, C))
    Qfull = np.empty((m, n, C))
    R = np.empty((m, n, C))
    S0 = np.zeros((m, C))
    Fmu = np.zeros((m, C, d))
    Fsig = np.zeros((m, C, d))
    F = np.empty((m, 2 * d * C))
    M = W > 0.0

    cdef double[:, ::1] Wv = W, Xv = X, muv = mu, iv2v = iv2, iv3v = iv3
    cdef double[:, ::1] sigv = sigma, Dv = D, S0v = S0, Fv = F
    cdef double[:, :, ::1] diffv = diff, Qv = Qfull, Rv = R
    cdef double[:, :, ::1] Fmuv = Fmu, Fsigv = Fsig
    cdef double[::1] logpiv = logpi, psiv = psi
    cdef Py_ssize_t i, j, c, k
    cdef double acc, top, tot, wij, lc, q, r

    with nogil:
        for j in range(n):
            for c in range(C):
                acc = 0.0
                for k in range(d):
                    diffv[j, c, k] = Xv[j, k] - muv[c, k]
                    acc += diffv[j, c, k] * diffv[j, c, k] * iv2v[c, k]
                Dv[j, c] = acc

        for i in range(m):
            for j in range(n):
                wij = Wv[i, j]
                top = logpiv[0] - psiv[0] - 0.5 * wij * Dv[j, 0]
                for c in range(1, C):
                    lc = logpiv[c] - psiv[c] - 0.5 * wij * Dv[j, c]
                    if lc > top:
                        top = lc
                tot = 0.0
                for c in range(C):
                    lc = logpiv[c] - psiv[c] - 0.5 * wij * Dv[j, c]
                    Qv[i, j, c] = exp(lc - top)
                    tot += Qv[i, j, c]
                for c in range(C):
                    Qv[i, j, c] /= tot
                    q = Qv[i, j, c] if wij > 0.0 else 0.0
                    r = wij * q
                    Rv[i, j, c] = r
                    S0v[i, c] += q
                    for k in range(d):
                        Fmuv[i, c, k] += r * diffv[j, c, k]
                        Fsigv[i, c, k] += r * diffv[j, c, k] * diffv[j, c, k]

        for i in range(m):
            for c in range(C):
                for k in range(d):
                    Fmuv[i, c, k] *= iv2v[c, k]
                    Fsigv[i, c, k] = Fsigv[i, c, k] * iv3v[c, k] \
                        - S0v[i, c] / sigv[c, k]
                    Fv[i, c * 2 * d + k] = Fmuv[i, c, k]
                    Fv[i, c * 2 * d + d + k] = Fsigv[i, c, k]

    cache = {
        "W": W, "M": M, "Qfull": Qfull, "R": R, "diff": diff,
        "sigma": sigma, "iv2": iv2, "iv3": iv3, "S0": S0, "pi": pi,
        "Fmu": Fmu, "Fsig": Fsig, "shape": (m, n, C, d),
    }
    return F, cache


def encode_backward(cache, gF):
    """Vector-Jacobian products for encode_forward; reference semantics."""
    cdef Py_ssize_t m, n, C, d
    m, n, C, d = cache["shape"]

    W = np.ascontiguousarray(cache["W"])
    Qfull = np.ascontiguousarray(cache["Qfull"])
    R = np.ascontiguousarray(cache["R"])
    diff = np.ascontiguousarray(cache["diff"])
    sigma = np.ascontiguousarray(cache["sigma"])
    iv2 = np.ascontiguousarray(cache["iv2"])
    iv3 = np.ascontiguousarray(cache["iv3"])
    S0 = np.ascontiguousarray(cache["S0"])
    pi = np.ascontiguousarray(cache["pi"])
    Fmu = np.ascontiguousarray(cache["Fmu"])
    Fsig = np.ascontiguousarray(cache["Fsig"])
    g = np.ascontiguousarray(gF, dtype=np.float64).reshape(m, C, 2 * d)

    gX = np.zeros((n, d))
    gmu = np.zeros((C, d))
    gs = np.zeros((C, d))
    glogpi = np.zeros(C)
    gD = np.zeros((n, C))
    T1 = np.zeros((n, C, d))   # sum_i R[i,j,c] gFmu[i,c,.]
    T2 = np.zeros((n, C, d))   # sum_i R[i,j,c] gFsig[i,c,.]
    gQrow = np.empty((n, C))

    cdef double[:, ::1] Wv = W, sigv = sigma, iv2v = iv2, iv3v = iv3
    cdef double[:, ::1] S0v = S0, gXv = gX, gmuv = gmu, gsv = gs, gDv = gD
    cdef double[:, ::1] gQv = gQrow
    cdef double[:, :, ::1] Qv = Qfull, Rv = R, diffv = diff
    cdef double[:, :, ::1] Fmuv = Fmu, Fsigv = Fsig, gv = g
    cdef double[:, :, ::1] T1v = T1, T2v = T2
    cdef double[::1] glogpiv = glogpi, piv = pi
    cdef Py_ssize_t i, j, c, k
    cdef double acc, inner, gl, gs0, wij, gd, t

    with nogil:
        for i in range(m):
            for c in range(C):
                gs0 = 0.0
                for k in range(d):
                    gs0 -= gv[i, c, d + k] / sigv[c, k]
                    gsv[c, k] += -2.0 * gv[i, c, k] * Fmuv[i, c, k] \
                        - 3.0 * gv[i, c, d + k] * Fsigv[i, c, k] \
                        - 2.0 * S0v[i, c] * gv[i, c, d + k] / sigv[c, k]
                # gQ for this i over all j (masked)
                for j in range(n):
                    if Wv[i, j] > 0.0:
                        acc = 0.0
                        for k in range(d):
                            acc += gv[i, c, k] * iv2v[c, k] * diffv[j, c, k] \
                                + gv[i, c, d + k] * iv3v[c, k] \
                                * diffv[j, c, k] * diffv[j, c, k]
                        gQv[j, c] = Wv[i, j] * acc + gs0
                    else:
                        gQv[j, c] = 0.0
            for j in range(n):
                wij = Wv[i, j]
                inner = 0.0
                for c in range(C):
                    inner += gQv[j, c] * Qv[i, j, c]
                for c in range(C):
                    gl = Qv[i, j, c] * (gQv[j, c] - inner)
                    glogpiv[c] += gl
                    gDv[j, c] += -0.5 * gl * wij
                    for k in range(d):
                        T1v[j, c, k] += Rv[i, j, c] * gv[i, c, k]
                        T2v[j, c, k] += Rv[i, j, c] * gv[i, c, d + k]

        for j in range(n):
            for c in range(C):
                gd = gDv[j, c]
                for k in range(d):
                    t = iv2v[c, k] * T1v[j, c, k] \
                        + 2.0 * diffv[j, c, k] * iv3v[c, k] * T2v[j, c, k] \
                        + 2.0 * gd * diffv[j, c, k] * iv2v[c, k]
                    gXv[j, k] += t
                    gmuv[c, k] -= t
                    gsv[c, k] += -2.0 * gd * diffv[j, c, k] * diffv[j, c, k] \
                        * iv2v[c, k]

        for c in range(C):
            for k in range(d):
                gsv[c, k] -= glogpiv[c]

    galpha = glogpi - pi * glogpi.sum()
    return gX, galpha, gmu, gs
