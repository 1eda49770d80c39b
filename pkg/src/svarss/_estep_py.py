"""Vectorized E-step kernel for a group of blocks sharing one mask pattern.

All blocks in a group have the same interior observation pattern, so for a
given assignment the covariance side of the Kalman recursions (predicted and
filtered covariances, gains, smoother gains) is identical across blocks.
Those are computed once per assignment, batched over assignments; the mean
recursions, which do depend on the data, are batched over (block, assignment)
pairs.  Only sums over time of the six expected statistics are returned,
which is all the M-step needs.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalError

LOG2PI = float(np.log(2.0 * np.pi))


def estep_group(A, C, mu, sig2, logpi, x0s, ys, obs_pad, q_arr, Z):
    """Run the conditional smoother for every (block, assignment) pair.

    Parameters
    ----------
    A, C : (p, p) model matrices.
    mu, sig2, logpi : (p, m_max) per-series mixture parameters, padded.
    x0s : (B, p) block anchor values.
    ys : (B, n, p) observed values, zero at unobserved cells; ys[b, s]
        holds time t0+s+1 of block b.
    obs_pad, q_arr : (n, p) int64 and (n,) int64; obs_pad[s, :q_arr[s]] are
        the observed series at step s+1.
    Z : (nz, n, p) int64 component assignments.

    Returns
    -------
    (blk_ll, N, sx, sxm, sxx, smm, sxy) with blk_ll of shape (B,) and the
    six statistics summed over blocks and steps, shaped (p, m_max[, p[, p]]).
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    p = A.shape[0]
    B = x0s.shape[0]
    nz, n, _ = Z.shape
    rows = np.arange(p)

    # per-assignment shock means/covariances at each step
    mu_sel = mu[rows[np.newaxis, np.newaxis, :], Z]          # (nz, n, p)
    sig_sel = sig2[rows[np.newaxis, np.newaxis, :], Z]       # (nz, n, p)
    b_all = mu_sel @ C.T                                     # (nz, n, p)
    Q_all = np.einsum("ik,znk,jk->znij", C, sig_sel, C)      # (nz, n, p, p)
    logprior = logpi[rows[np.newaxis, np.newaxis, :], Z].sum(axis=(1, 2))

    # ---- covariance pass, shared by all blocks -------------------------
    eye = np.eye(p)
    Vf = np.empty((nz, n + 1, p, p))
    Vf[:, 0] = 0.0
    Pp = np.empty((nz, n, p, p))
    K_st: list[np.ndarray | None] = [None] * n
    Sinv_st: list[np.ndarray | None] = [None] * n
    logdetS = np.zeros((nz, n))
    V = np.zeros((nz, p, p))
    for s in range(n):
        P = A[np.newaxis] @ V @ A.T[np.newaxis] + Q_all[:, s]
        P = 0.5 * (P + P.transpose(0, 2, 1))
        Pp[:, s] = P
        q = int(q_arr[s])
        if q > 0:
            o = obs_pad[s, :q]
            S = P[:, o][:, :, o]
            try:
                chol = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise NumericalError(
                    "singular innovation covariance in E-step", time_index=s + 1
                ) from None
            logdetS[:, s] = 2.0 * np.log(
                chol[:, np.arange(q), np.arange(q)]
            ).sum(axis=1)
            Sinv = np.linalg.inv(S)
            Sinv = 0.5 * (Sinv + Sinv.transpose(0, 2, 1))
            K = P[:, :, o] @ Sinv
            IKH = np.broadcast_to(eye, (nz, p, p)).copy()
            IKH[:, :, o] -= K
            V = IKH @ P @ IKH.transpose(0, 2, 1)
            V = 0.5 * (V + V.transpose(0, 2, 1))
            V[:, o, :] = 0.0
            V[:, :, o] = 0.0
            K_st[s] = K
            Sinv_st[s] = Sinv
        else:
            V = P
        Vf[:, s + 1] = V

    Vs = np.empty((nz, n + 1, p, p))
    Vs[:, n] = Vf[:, n]
    Js = np.empty((nz, n, p, p))
    cross = np.empty((nz, n, p, p))
    for s in range(n - 1, -1, -1):
        try:
            Jt = np.linalg.solve(Pp[:, s], A[np.newaxis] @ Vf[:, s])
        except np.linalg.LinAlgError:
            raise NumericalError(
                "singular predicted covariance in smoother", time_index=s + 1
            ) from None
        J = Jt.transpose(0, 2, 1)
        Js[:, s] = J
        Vnew = Vf[:, s] + J @ (Vs[:, s + 1] - Pp[:, s]) @ J.transpose(0, 2, 1)
        Vs[:, s] = 0.5 * (Vnew + Vnew.transpose(0, 2, 1))
        cross[:, s] = Vs[:, s + 1] @ J.transpose(0, 2, 1)

    # ---- mean pass, batched over (block, assignment) -------------------
    mf = np.empty((B, nz, n + 1, p))
    mp_st = np.empty((B, nz, n, p))
    mf[:, :, 0] = x0s[:, np.newaxis, :]
    ll = np.zeros((B, nz))
    cur = mf[:, :, 0]
    for s in range(n):
        mp = cur @ A.T + b_all[np.newaxis, :, s]
        q = int(q_arr[s])
        if q > 0:
            o = obs_pad[s, :q]
            yo = ys[:, s, :][:, o]
            innov = yo[:, np.newaxis, :] - mp[:, :, o]
            quad = np.einsum("bzi,zij,bzj->bz", innov, Sinv_st[s], innov)
            ll += -0.5 * (q * LOG2PI + logdetS[np.newaxis, :, s] + quad)
            cur = mp + np.einsum("zij,bzj->bzi", K_st[s], innov)
            cur[:, :, o] = yo[:, np.newaxis, :]
        else:
            cur = mp
        mf[:, :, s + 1] = cur
        mp_st[:, :, s] = mp

    ms = np.empty_like(mf)
    ms[:, :, n] = mf[:, :, n]
    for s in range(n - 1, -1, -1):
        diff = ms[:, :, s + 1] - mp_st[:, :, s]
        ms[:, :, s] = mf[:, :, s] + np.einsum("zij,bzj->bzi", Js[:, s], diff)

    # ---- posterior weights over assignments ----------------------------
    logw = ll + logprior[np.newaxis, :]
    mx = logw.max(axis=1)
    if not np.all(np.isfinite(mx)):
        raise NumericalError("all assignment likelihoods are -inf for a block")
    blk_ll = mx + np.log(np.exp(logw - mx[:, np.newaxis]).sum(axis=1))
    w = np.exp(logw - blk_ll[:, np.newaxis])

    # ---- accumulate the six statistics ---------------------------------
    m_max = mu.shape[1]
    N = np.zeros((p, m_max))
    sx = np.zeros((p, m_max, p))
    sxm = np.zeros((p, m_max, p))
    sxx = np.zeros((p, m_max, p, p))
    smm = np.zeros((p, m_max, p, p))
    sxy = np.zeros((p, m_max, p, p))
    G = w.sum(axis=0)
    for s in range(n):
        m1 = ms[:, :, s + 1]
        m0 = ms[:, :, s]
        M1 = np.einsum("bz,bzp->zp", w, m1)
        M0 = np.einsum("bz,bzp->zp", w, m0)
        M11 = np.einsum("bz,bzp,bzq->zpq", w, m1, m1) + G[:, np.newaxis, np.newaxis] * Vs[:, s + 1]
        M00 = np.einsum("bz,bzp,bzq->zpq", w, m0, m0) + G[:, np.newaxis, np.newaxis] * Vs[:, s]
        M10 = np.einsum("bz,bzp,bzq->zpq", w, m1, m0) + G[:, np.newaxis, np.newaxis] * cross[:, s]
        for j in range(p):
            idx = Z[:, s, j]
            np.add.at(N[j], idx, G)
            np.add.at(sx[j], idx, M1)
            np.add.at(sxm[j], idx, M0)
            np.add.at(sxx[j], idx, M11)
            np.add.at(smm[j], idx, M00)
            np.add.at(sxy[j], idx, M10)
    return blk_ll, N, sx, sxm, sxx, smm, sxy
