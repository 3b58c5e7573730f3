"""Pure-numpy implementation of the mixture-encode forward/backward pass.

One call encodes every vertex of a graph at one scale. Row i of ``W`` holds
vertex i's receptive-field weights over the n member columns (0 = not a
member; members always have strictly positive weight). The feature for
vertex i is, per mixture component c, the pair of log-likelihood gradients

    dmu_c    = sum_j a_ij Q_ijc (x_j - mu_c) / sigma_c^2
    dsigma_c = sum_j Q_ijc (a_ij (x_j - mu_c)^2 - sigma_c^2) / sigma_c^3

laid out as Cat_c[dmu_c, dsigma_c], where Q is the member responsibility
softmax over components (weight-scaled squared distances, computed in the
log domain) and the mixture weights come from softmax(alpha). Component
responsibilities receive gradient through alpha even though d/dalpha is not
part of the feature itself.
"""

from __future__ import annotations

import numpy as np


def _log_softmax(v: np.ndarray) -> np.ndarray:
    shift = v - v.max()
    return shift - np.log(np.exp(shift).sum())


def encode_forward(W, X, alpha, mu, log_sigma):
    """Encode all rows of W at once.

    W: (m, n) field weights; X: (n, d); alpha: (C,); mu, log_sigma: (C, d).
    Returns (F, cache) with F of shape (m, 2*d*C).
    """
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    m, n = W.shape
    C, d = mu.shape

    sigma = np.exp(log_sigma)
    iv2 = np.exp(-2.0 * log_sigma)            # 1 / sigma^2
    iv3 = np.exp(-3.0 * log_sigma)            # 1 / sigma^3
    logpi = _log_softmax(alpha)
    pi = np.exp(logpi)
    psi = log_sigma.sum(axis=1)               # log det sigma_c

    diff = X[:, None, :] - mu[None, :, :]      # (n, C, d)
    D = np.einsum("jcd,cd->jc", diff * diff, iv2)  # squared Mahalanobis parts

    # member log-responsibilities; terms constant across c are dropped
    logits = (logpi - psi)[None, None, :] - 0.5 * W[:, :, None] * D[None, :, :]
    shift = logits.max(axis=2, keepdims=True)
    e = np.exp(logits - shift)
    Qfull = e / e.sum(axis=2, keepdims=True)   # (m, n, C)
    M = W > 0.0
    Q = Qfull * M[:, :, None]
    R = W[:, :, None] * Q

    S0 = Q.sum(axis=1)                         # (m, C)
    Fmu = np.einsum("ijc,jcd->icd", R, diff) * iv2[None, :, :]
    Fsig = np.einsum("ijc,jcd->icd", R, diff * diff) * iv3[None, :, :] \
        - S0[:, :, None] / sigma[None, :, :]

    F = np.stack([Fmu, Fsig], axis=2).reshape(m, 2 * d * C)
    cache = {
        "W": W, "M": M, "Qfull": Qfull, "R": R, "diff": diff,
        "sigma": sigma, "iv2": iv2, "iv3": iv3, "S0": S0, "pi": pi,
        "Fmu": Fmu, "Fsig": Fsig, "shape": (m, n, C, d),
    }
    return F, cache


def encode_backward(cache, gF):
    """Vector-Jacobian products for encode_forward.

    gF: (m, 2*d*C) upstream gradient. Returns (gX, galpha, gmu, glog_sigma).
    """
    m, n, C, d = cache["shape"]
    W, M, Qfull, R = cache["W"], cache["M"], cache["Qfull"], cache["R"]
    diff, sigma = cache["diff"], cache["sigma"]
    iv2, iv3, S0, pi = cache["iv2"], cache["iv3"], cache["S0"], cache["pi"]
    Fmu, Fsig = cache["Fmu"], cache["Fsig"]

    g = np.asarray(gF, dtype=np.float64).reshape(m, C, 2, d)
    gFmu, gFsig = g[:, :, 0, :], g[:, :, 1, :]

    diff2 = diff * diff

    # responsibilities: feature terms linear in R = W*Q and in S0 = sum_j Q
    gR = np.einsum("icd,jcd->ijc", gFmu * iv2[None], diff) \
        + np.einsum("icd,jcd->ijc", gFsig * iv3[None], diff2)
    gS0 = -(gFsig / sigma[None, :, :]).sum(axis=2)          # (m, C)
    gQ = (W[:, :, None] * gR + gS0[:, None, :]) * M[:, :, None]

    # softmax over c (masked rows contribute nothing: their gQ is zero)
    inner = np.einsum("ijc,ijc->ij", gQ, Qfull)
    gl = Qfull * (gQ - inner[:, :, None])                   # (m, n, C)

    # direct sigma paths (everything expressed against log sigma)
    gs = -2.0 * np.einsum("icd,icd->cd", gFmu, Fmu) \
        - 3.0 * np.einsum("icd,icd->cd", gFsig, Fsig) \
        - 2.0 * np.einsum("ic,icd->cd", S0, gFsig / sigma[None, :, :])

    # diff paths from the feature numerators
    gdiff = iv2[None, :, :] * np.einsum("ijc,icd->jcd", R, gFmu) \
        + 2.0 * diff * iv3[None, :, :] * np.einsum("ijc,icd->jcd", R, gFsig)

    # logits -> mixture weights, log-variances, distances
    glogpi = gl.sum(axis=(0, 1))                            # (C,)
    galpha = glogpi - pi * glogpi.sum()
    gs += -glogpi[:, None]                                  # psi = sum_d log sigma
    gD = -0.5 * np.einsum("ijc,ij->jc", gl, W)              # (n, C)
    gdiff += 2.0 * gD[:, :, None] * diff * iv2[None, :, :]
    gs += -np.einsum("jc,jcd->cd", gD, diff2 * iv2[None, :, :]) * 2.0

    gX = gdiff.sum(axis=1)                                  # (n, d)
    gmu = -gdiff.sum(axis=0)                                # (C, d)
    return gX, galpha, gmu, gs
