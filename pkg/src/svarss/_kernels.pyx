# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled E-step kernel.

Mirrors _estep_py.estep_group: same arguments, same return tuple, same
numbers up to rounding.  The linear algebra is hand-rolled (matrices here
are tiny, p <= 8, so calling BLAS would mostly pay dispatch overhead).
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

from .errors import NumericalError

cnp.import_array()

cdef double LOG2PI = 1.8378770664093453


cdef int _chol(double[:, ::1] S, double[:, ::1] L, int q) noexcept nogil:
    """Lower Cholesky factor of the leading q x q part of S; -1 if not PD."""
    cdef int i, j, k
    cdef double acc
    for i in range(q):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return -1
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return 0


cdef void _chol_inverse(double[:, ::1] L, double[:, ::1] out, double[:, ::1] work, int q) noexcept nogil:
    """out = (L L')^{-1} for the leading q x q part, then symmetrized."""
    cdef int c, i, k
    cdef double acc
    for c in range(q):
        for i in range(q):
            acc = 1.0 if i == c else 0.0
            for k in range(i):
                acc -= L[i, k] * work[k, c]
            work[i, c] = acc / L[i, i]
        for i in range(q - 1, -1, -1):
            acc = work[i, c]
            for k in range(i + 1, q):
                acc -= L[k, i] * out[k, c]
            out[i, c] = acc / L[i, i]
    for i in range(q):
        for c in range(i):
            acc = 0.5 * (out[i, c] + out[c, i])
            out[i, c] = acc
            out[c, i] = acc


cdef int _chol_solve_matrix(double[:, ::1] M, double[:, ::1] RHS,
                            double[:, ::1] L, double[:, ::1] work,
                            double[:, ::1] out, int p) noexcept nogil:
    """out = M^{-1} RHS for symmetric PD M (p x p); -1 if M not PD."""
    cdef int c, i, k
    cdef double acc
    if _chol(M, L, p) != 0:
        return -1
    for c in range(p):
        for i in range(p):
            acc = RHS[i, c]
            for k in range(i):
                acc -= L[i, k] * work[k, c]
            work[i, c] = acc / L[i, i]
        for i in range(p - 1, -1, -1):
            acc = work[i, c]
            for k in range(i + 1, p):
                acc -= L[k, i] * out[k, c]
            out[i, c] = acc / L[i, i]
    return 0


def estep_group(A_in, C_in, mu_in, sig2_in, logpi_in, x0s_in, ys_in,
                obs_pad_in, q_arr_in, Z_in):
    """See _estep_py.estep_group; identical contract."""
    A_arr = np.ascontiguousarray(A_in, dtype=np.float64)
    C_arr = np.ascontiguousarray(C_in, dtype=np.float64)
    mu_arr = np.ascontiguousarray(mu_in, dtype=np.float64)
    sig2_arr = np.ascontiguousarray(sig2_in, dtype=np.float64)
    logpi_arr = np.ascontiguousarray(logpi_in, dtype=np.float64)
    x0s_arr = np.ascontiguousarray(x0s_in, dtype=np.float64)
    ys_arr = np.ascontiguousarray(ys_in, dtype=np.float64)
    obs_arr = np.ascontiguousarray(obs_pad_in, dtype=np.int64)
    q_np = np.ascontiguousarray(q_arr_in, dtype=np.int64)
    Z_arr = np.ascontiguousarray(Z_in, dtype=np.int64)

    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] C = C_arr
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] sig2 = sig2_arr
    cdef double[:, ::1] logpi = logpi_arr
    cdef double[:, ::1] x0s = x0s_arr
    cdef double[:, :, ::1] ys = ys_arr
    cdef cnp.int64_t[:, ::1] obs_pad = obs_arr
    cdef cnp.int64_t[::1] q_arr = q_np
    cdef cnp.int64_t[:, :, ::1] Z = Z_arr

    cdef int p = A.shape[0]
    cdef int B = x0s.shape[0]
    cdef int nz = Z.shape[0]
    cdef int n = Z.shape[1]
    cdef int m_max = mu.shape[1]
    cdef int b, z, s, i, j, k, c, q, zi, fail_step

    # per-assignment shock means and covariances
    b_all_arr = np.zeros((nz, n, p))
    Q_all_arr = np.zeros((nz, n, p, p))
    logprior_arr = np.zeros(nz)
    cdef double[:, :, ::1] b_all = b_all_arr
    cdef double[:, :, :, ::1] Q_all = Q_all_arr
    cdef double[::1] logprior = logprior_arr
    cdef double acc
    for z in range(nz):
        acc = 0.0
        for s in range(n):
            for j in range(p):
                acc += logpi[j, Z[z, s, j]]
            for i in range(p):
                b_all[z, s, i] = 0.0
                for k in range(p):
                    b_all[z, s, i] += C[i, k] * mu[k, Z[z, s, k]]
            for i in range(p):
                for j in range(p):
                    Q_all[z, s, i, j] = 0.0
                    for k in range(p):
                        Q_all[z, s, i, j] += C[i, k] * sig2[k, Z[z, s, k]] * C[j, k]
        logprior[z] = acc

    # covariance pass, shared across blocks
    Vf_arr = np.zeros((nz, n + 1, p, p))
    Pp_arr = np.zeros((nz, n, p, p))
    K_arr = np.zeros((nz, n, p, p))
    Sinv_arr = np.zeros((nz, n, p, p))
    logdetS_arr = np.zeros((nz, n))
    Js_arr = np.zeros((nz, n, p, p))
    Vs_arr = np.zeros((nz, n + 1, p, p))
    cross_arr = np.zeros((nz, n, p, p))
    cdef double[:, :, :, ::1] Vf = Vf_arr
    cdef double[:, :, :, ::1] Pp = Pp_arr
    cdef double[:, :, :, ::1] K_st = K_arr
    cdef double[:, :, :, ::1] Sinv_st = Sinv_arr
    cdef double[:, ::1] logdetS = logdetS_arr
    cdef double[:, :, :, ::1] Js = Js_arr
    cdef double[:, :, :, ::1] Vs = Vs_arr
    cdef double[:, :, :, ::1] cross = cross_arr

    scratch = np.zeros((10, p, p))
    cdef double[:, ::1] V = scratch[0]
    cdef double[:, ::1] P = scratch[1]
    cdef double[:, ::1] T1 = scratch[2]
    cdef double[:, ::1] S = scratch[3]
    cdef double[:, ::1] L = scratch[4]
    cdef double[:, ::1] Si = scratch[5]
    cdef double[:, ::1] work = scratch[6]
    cdef double[:, ::1] IKH = scratch[7]
    cdef double[:, ::1] T2 = scratch[8]
    cdef double[:, ::1] RHS = scratch[9]

    fail_step = -1
    with nogil:
        for z in range(nz):
            if fail_step >= 0:
                break
            for i in range(p):
                for j in range(p):
                    V[i, j] = 0.0
            for s in range(n):
                # P = A V A' + Q
                for i in range(p):
                    for j in range(p):
                        acc = 0.0
                        for k in range(p):
                            acc += V[i, k] * A[j, k]
                        T1[i, j] = acc
                for i in range(p):
                    for j in range(p):
                        acc = Q_all[z, s, i, j]
                        for k in range(p):
                            acc += A[i, k] * T1[k, j]
                        P[i, j] = acc
                for i in range(p):
                    for j in range(i):
                        acc = 0.5 * (P[i, j] + P[j, i])
                        P[i, j] = acc
                        P[j, i] = acc
                for i in range(p):
                    for j in range(p):
                        Pp[z, s, i, j] = P[i, j]
                q = <int> q_arr[s]
                if q > 0:
                    for i in range(q):
                        for j in range(q):
                            S[i, j] = P[obs_pad[s, i], obs_pad[s, j]]
                    if _chol(S, L, q) != 0:
                        fail_step = s + 1
                        break
                    acc = 0.0
                    for i in range(q):
                        acc += log(L[i, i])
                    logdetS[z, s] = 2.0 * acc
                    _chol_inverse(L, Si, work, q)
                    for i in range(q):
                        for j in range(q):
                            Sinv_st[z, s, i, j] = Si[i, j]
                    # K = P[:, o] Sinv
                    for i in range(p):
                        for c in range(q):
                            acc = 0.0
                            for k in range(q):
                                acc += P[i, obs_pad[s, k]] * Si[k, c]
                            K_st[z, s, i, c] = acc
                    # IKH = I - K H
                    for i in range(p):
                        for j in range(p):
                            IKH[i, j] = 1.0 if i == j else 0.0
                    for i in range(p):
                        for c in range(q):
                            IKH[i, obs_pad[s, c]] -= K_st[z, s, i, c]
                    # V = IKH P IKH'
                    for i in range(p):
                        for j in range(p):
                            acc = 0.0
                            for k in range(p):
                                acc += P[i, k] * IKH[j, k]
                            T1[i, j] = acc
                    for i in range(p):
                        for j in range(p):
                            acc = 0.0
                            for k in range(p):
                                acc += IKH[i, k] * T1[k, j]
                            V[i, j] = acc
                    for i in range(p):
                        for j in range(i):
                            acc = 0.5 * (V[i, j] + V[j, i])
                            V[i, j] = acc
                            V[j, i] = acc
                    for c in range(q):
                        for i in range(p):
                            V[obs_pad[s, c], i] = 0.0
                            V[i, obs_pad[s, c]] = 0.0
                else:
                    for i in range(p):
                        for j in range(p):
                            V[i, j] = P[i, j]
                for i in range(p):
                    for j in range(p):
                        Vf[z, s + 1, i, j] = V[i, j]
            if fail_step >= 0:
                break
            # backward pass
            for i in range(p):
                for j in range(p):
                    Vs[z, n, i, j] = Vf[z, n, i, j]
            for s in range(n - 1, -1, -1):
                # RHS = A Vf[s]; J' = Pp^{-1} RHS
                for i in range(p):
                    for j in range(p):
                        acc = 0.0
                        for k in range(p):
                            acc += A[i, k] * Vf[z, s, k, j]
                        RHS[i, j] = acc
                for i in range(p):
                    for j in range(p):
                        T2[i, j] = Pp[z, s, i, j]
                if _chol_solve_matrix(T2, RHS, L, work, T1, p) != 0:
                    fail_step = s + 1
                    break
                for i in range(p):
                    for j in range(p):
                        Js[z, s, i, j] = T1[j, i]
                # Vs[s] = Vf[s] + J (Vs[s+1] - Pp[s]) J'
                for i in range(p):
                    for j in range(p):
                        T1[i, j] = Vs[z, s + 1, i, j] - Pp[z, s, i, j]
                for i in range(p):
                    for j in range(p):
                        acc = 0.0
                        for k in range(p):
                            acc += T1[i, k] * Js[z, s, j, k]
                        T2[i, j] = acc
                for i in range(p):
                    for j in range(p):
                        acc = Vf[z, s, i, j]
                        for k in range(p):
                            acc += Js[z, s, i, k] * T2[k, j]
                        V[i, j] = acc
                for i in range(p):
                    for j in range(i + 1):
                        acc = 0.5 * (V[i, j] + V[j, i])
                        Vs[z, s, i, j] = acc
                        Vs[z, s, j, i] = acc
                for i in range(p):
                    for j in range(p):
                        acc = 0.0
                        for k in range(p):
                            acc += Vs[z, s + 1, i, k] * Js[z, s, j, k]
                        cross[z, s, i, j] = acc
            if fail_step >= 0:
                break
    if fail_step >= 0:
        raise NumericalError(
            "singular innovation or predicted covariance in E-step",
            time_index=fail_step,
        )

    # mean pass over (block, assignment) pairs
    mf_arr = np.zeros((B, nz, n + 1, p))
    mp_arr = np.zeros((B, nz, n, p))
    ms_arr = np.zeros((B, nz, n + 1, p))
    ll_arr = np.zeros((B, nz))
    cdef double[:, :, :, ::1] mf = mf_arr
    cdef double[:, :, :, ::1] mp_st = mp_arr
    cdef double[:, :, :, ::1] ms = ms_arr
    cdef double[:, ::1] ll = ll_arr
    innov_arr = np.zeros(p)
    cdef double[::1] innov = innov_arr
    cdef double q_ll

    with nogil:
        for b in range(B):
            for z in range(nz):
                for i in range(p):
                    mf[b, z, 0, i] = x0s[b, i]
                for s in range(n):
                    for i in range(p):
                        acc = b_all[z, s, i]
                        for k in range(p):
                            acc += A[i, k] * mf[b, z, s, k]
                        mp_st[b, z, s, i] = acc
                    q = <int> q_arr[s]
                    if q > 0:
                        for c in range(q):
                            innov[c] = ys[b, s, obs_pad[s, c]] - mp_st[b, z, s, obs_pad[s, c]]
                        q_ll = 0.0
                        for i in range(q):
                            for j in range(q):
                                q_ll += innov[i] * Sinv_st[z, s, i, j] * innov[j]
                        ll[b, z] += -0.5 * (q * LOG2PI + logdetS[z, s] + q_ll)
                        for i in range(p):
                            acc = mp_st[b, z, s, i]
                            for c in range(q):
                                acc += K_st[z, s, i, c] * innov[c]
                            mf[b, z, s + 1, i] = acc
                        for c in range(q):
                            mf[b, z, s + 1, obs_pad[s, c]] = ys[b, s, obs_pad[s, c]]
                    else:
                        for i in range(p):
                            mf[b, z, s + 1, i] = mp_st[b, z, s, i]
                for i in range(p):
                    ms[b, z, n, i] = mf[b, z, n, i]
                for s in range(n - 1, -1, -1):
                    for i in range(p):
                        acc = mf[b, z, s, i]
                        for k in range(p):
                            acc += Js[z, s, i, k] * (ms[b, z, s + 1, k] - mp_st[b, z, s, k])
                        ms[b, z, s, i] = acc

    # posterior weights
    blk_ll_arr = np.zeros(B)
    w_arr = np.zeros((B, nz))
    cdef double[::1] blk_ll = blk_ll_arr
    cdef double[:, ::1] w = w_arr
    cdef double mx, total
    cdef int bad = 0
    with nogil:
        for b in range(B):
            mx = -1e308
            for z in range(nz):
                ll[b, z] += logprior[z]
                if ll[b, z] > mx:
                    mx = ll[b, z]
            if mx <= -1e308:
                bad = 1
            total = 0.0
            for z in range(nz):
                total += exp(ll[b, z] - mx)
            blk_ll[b] = mx + log(total)
            for z in range(nz):
                w[b, z] = exp(ll[b, z] - blk_ll[b])
    if bad:
        raise NumericalError("all assignment likelihoods are -inf for a block")

    # statistics, aggregated over blocks per assignment then scattered
    N_arr = np.zeros((p, m_max))
    sx_arr = np.zeros((p, m_max, p))
    sxm_arr = np.zeros((p, m_max, p))
    sxx_arr = np.zeros((p, m_max, p, p))
    smm_arr = np.zeros((p, m_max, p, p))
    sxy_arr = np.zeros((p, m_max, p, p))
    cdef double[:, ::1] N = N_arr
    cdef double[:, :, ::1] sx = sx_arr
    cdef double[:, :, ::1] sxm = sxm_arr
    cdef double[:, :, :, ::1] sxx = sxx_arr
    cdef double[:, :, :, ::1] smm = smm_arr
    cdef double[:, :, :, ::1] sxy = sxy_arr

    G_arr = np.zeros(nz)
    M1_arr = np.zeros((nz, p))
    M0_arr = np.zeros((nz, p))
    M11_arr = np.zeros((nz, p, p))
    M00_arr = np.zeros((nz, p, p))
    M10_arr = np.zeros((nz, p, p))
    cdef double[::1] G = G_arr
    cdef double[:, ::1] M1 = M1_arr
    cdef double[:, ::1] M0 = M0_arr
    cdef double[:, :, ::1] M11 = M11_arr
    cdef double[:, :, ::1] M00 = M00_arr
    cdef double[:, :, ::1] M10 = M10_arr
    cdef double wv
    cdef cnp.int64_t idx

    with nogil:
        for z in range(nz):
            G[z] = 0.0
            for b in range(B):
                G[z] += w[b, z]
        for s in range(n):
            for z in range(nz):
                for i in range(p):
                    M1[z, i] = 0.0
                    M0[z, i] = 0.0
                    for j in range(p):
                        M11[z, i, j] = 0.0
                        M00[z, i, j] = 0.0
                        M10[z, i, j] = 0.0
                for b in range(B):
                    wv = w[b, z]
                    for i in range(p):
                        M1[z, i] += wv * ms[b, z, s + 1, i]
                        M0[z, i] += wv * ms[b, z, s, i]
                        for j in range(p):
                            M11[z, i, j] += wv * ms[b, z, s + 1, i] * ms[b, z, s + 1, j]
                            M00[z, i, j] += wv * ms[b, z, s, i] * ms[b, z, s, j]
                            M10[z, i, j] += wv * ms[b, z, s + 1, i] * ms[b, z, s, j]
                for i in range(p):
                    for j in range(p):
                        M11[z, i, j] += G[z] * Vs[z, s + 1, i, j]
                        M00[z, i, j] += G[z] * Vs[z, s, i, j]
                        M10[z, i, j] += G[z] * cross[z, s, i, j]
                for j in range(p):
                    idx = Z[z, s, j]
                    N[j, idx] += G[z]
                    for i in range(p):
                        sx[j, idx, i] += M1[z, i]
                        sxm[j, idx, i] += M0[z, i]
                        for k in range(p):
                            sxx[j, idx, i, k] += M11[z, i, k]
                            smm[j, idx, i, k] += M00[z, i, k]
                            sxy[j, idx, i, k] += M10[z, i, k]
    return blk_ll_arr, N_arr, sx_arr, sxm_arr, sxx_arr, smm_arr, sxy_arr
