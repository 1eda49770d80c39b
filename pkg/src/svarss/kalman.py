"""Exact filtering and smoothing for one block under a fixed assignment.

Conditioning on a mixture assignment z makes the block linear-Gaussian:
x_t = A x_{t-1} + C e_t with e_t ~ N(mu_z, diag(sig2_z)), observed through a
row selector at each time.  Observations carry no noise, so observed
coordinates are conditioned on exactly (their posterior variance is zero).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError
from .model import SvarModel
from .sampling import Block

__all__ = [
    "ConditionalSSM",
    "SmoothedMoments",
    "build_ssm",
    "filter_smooth",
    "gaussian_condition_oracle",
]

LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class ConditionalSSM:
    """State-space model for a block given one assignment.

    Step s = 1..n corresponds to time t0 + s; b[s-1] and Q[s-1] are the shock
    mean C mu_z and covariance C diag(sig2_z) C' at that step.  The anchor
    state x_{t0} is known exactly.
    """

    A: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    x0: np.ndarray
    obs_idx: tuple[np.ndarray, ...]

    @property
    def n_steps(self) -> int:
        return self.b.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]


@dataclass
class SmoothedMoments:
    """Posterior moments of the block states given its observed values.

    Index 0 is the anchor.  ``lag_one[s]`` is Cov(x_{t0+s+1}, x_{t0+s} | data)
    for s = 0..n-1.  ``loglik`` is log p(observed values at steps 1..n | x0).
    """

    means: np.ndarray
    covs: np.ndarray
    lag_one: np.ndarray
    loglik: float


def build_ssm(model: SvarModel, block: Block, assignment: np.ndarray) -> ConditionalSSM:
    """Assemble the conditional SSM for ``assignment`` (n_steps x p, 0-based)."""
    p = model.p
    n = block.n_steps
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (n, p):
        raise DimensionError(
            f"assignment must be ({n}, {p}) for this block, got {assignment.shape}"
        )
    m_sizes = np.array([s.m for s in model.shocks])
    if np.any(assignment < 0) or np.any(assignment >= m_sizes[np.newaxis, :]):
        raise ValueError("assignment contains component indices out of range")
    # pad to the largest m so mixed component counts index cleanly
    m_max = int(m_sizes.max())
    mu = np.zeros((p, m_max))
    sig2 = np.ones((p, m_max))
    for j, s in enumerate(model.shocks):
        mu[j, : s.m] = s.means
        sig2[j, : s.m] = s.variances

    rows = np.arange(p)
    mu_sel = mu[rows[np.newaxis, :], assignment]
    sig_sel = sig2[rows[np.newaxis, :], assignment]
    b = mu_sel @ model.C.T
    Q = np.einsum("ik,sk,jk->sij", model.C, sig_sel, model.C)
    return ConditionalSSM(
        A=model.A.copy(),
        b=b,
        Q=Q,
        x0=np.asarray(block.x0, dtype=float),
        obs_idx=tuple(np.asarray(o, dtype=np.int64) for o in block.observed[1:]),
    )


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def filter_smooth(ssm: ConditionalSSM, block: Block) -> SmoothedMoments:
    """Kalman filter + RTS smoother with exact observation conditioning.

    Covariance updates use the Joseph form.  Observed coordinates are pinned
    exactly: their filtered mean is the observation and their variance rows
    and columns are zeroed.
    """
    A, p, n = ssm.A, ssm.p, ssm.n_steps
    eye = np.eye(p)

    m_filt = np.empty((n + 1, p))
    V_filt = np.empty((n + 1, p, p))
    m_pred = np.empty((n, p))
    P_pred = np.empty((n, p, p))
    m_filt[0] = ssm.x0
    V_filt[0] = 0.0

    loglik = 0.0
    for s in range(n):
        mp = A @ m_filt[s] + ssm.b[s]
        P = _symmetrize(A @ V_filt[s] @ A.T + ssm.Q[s])
        m_pred[s] = mp
        P_pred[s] = P
        o = ssm.obs_idx[s]
        q = o.size
        if q == 0:
            m_filt[s + 1] = mp
            V_filt[s + 1] = P
            continue
        y = np.asarray(block.values[s + 1], dtype=float)
        S = P[np.ix_(o, o)]
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"singular innovation covariance at time {block.t0 + s + 1}",
                time_index=block.t0 + s + 1,
            ) from None
        innov = y - mp[o]
        white = scipy.linalg.solve_triangular(chol, innov, lower=True)
        loglik += -0.5 * (q * LOG2PI + float(white @ white)) - float(
            np.log(np.diag(chol)).sum()
        )
        # K = P H' S^{-1}
        K = scipy.linalg.cho_solve((chol, True), P[o, :]).T
        m_new = mp + K @ innov
        IKH = eye.copy()
        IKH[:, o] -= K
        V_new = _symmetrize(IKH @ P @ IKH.T)
        # exact conditioning: observed coordinates carry no uncertainty
        m_new[o] = y
        V_new[o, :] = 0.0
        V_new[:, o] = 0.0
        m_filt[s + 1] = m_new
        V_filt[s + 1] = V_new

    means = np.empty((n + 1, p))
    covs = np.empty((n + 1, p, p))
    lag_one = np.empty((n, p, p))
    means[n] = m_filt[n]
    covs[n] = V_filt[n]
    for s in range(n - 1, -1, -1):
        P = P_pred[s]
        # J = V_filt A' P^{-1}; P is PD because Q has full rank
        try:
            J = scipy.linalg.cho_solve(
                (np.linalg.cholesky(P), True), A @ V_filt[s]
            ).T
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"singular predicted covariance at time {block.t0 + s + 1}",
                time_index=block.t0 + s + 1,
            ) from None
        means[s] = m_filt[s] + J @ (means[s + 1] - m_pred[s])
        covs[s] = _symmetrize(V_filt[s] + J @ (covs[s + 1] - P) @ J.T)
        lag_one[s] = covs[s + 1] @ J.T
    return SmoothedMoments(means=means, covs=covs, lag_one=lag_one, loglik=loglik)


def gaussian_condition_oracle(ssm: ConditionalSSM, block: Block) -> SmoothedMoments:
    """Smoothed moments via one dense joint-Gaussian conditioning.

    Builds the joint distribution of (x_{t0+1}, ..., x_{t1}) given the anchor
    by unrolling the recursion, conditions on all observed entries with a
    single Schur complement, and reads the moments off the conditional.
    Intended as an independent cross-check of filter_smooth on small blocks.
    """
    A, p, n = ssm.A, ssm.p, ssm.n_steps
    N = n * p

    mu = np.empty((n, p))
    mu[0] = A @ ssm.x0 + ssm.b[0]
    for s in range(1, n):
        mu[s] = A @ mu[s - 1] + ssm.b[s]

    Sigma = np.zeros((N, N))
    diag_blocks = []
    V = np.zeros((p, p))
    for s in range(n):
        V = A @ V @ A.T + ssm.Q[s]
        V = _symmetrize(V)
        diag_blocks.append(V)
        Sigma[s * p : (s + 1) * p, s * p : (s + 1) * p] = V
    for s in range(n):
        crs = diag_blocks[s]
        for u in range(s + 1, n):
            crs = crs @ A.T
            Sigma[s * p : (s + 1) * p, u * p : (u + 1) * p] = crs
            Sigma[u * p : (u + 1) * p, s * p : (s + 1) * p] = crs.T

    obs_lin = []
    y = []
    for s in range(n):
        for pos, j in enumerate(ssm.obs_idx[s]):
            obs_lin.append(s * p + int(j))
            y.append(float(block.values[s + 1][pos]))
    obs_lin = np.array(obs_lin, dtype=np.int64)
    y = np.array(y)

    S = Sigma[np.ix_(obs_lin, obs_lin)]
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("joint observed covariance is singular") from None
    resid = y - mu.ravel()[obs_lin]
    white = scipy.linalg.solve_triangular(chol, resid, lower=True)
    loglik = -0.5 * (obs_lin.size * LOG2PI + float(white @ white)) - float(
        np.log(np.diag(chol)).sum()
    )

    gain = scipy.linalg.cho_solve((chol, True), Sigma[obs_lin, :]).T
    cond_mean = mu.ravel() + gain @ resid
    cond_cov = Sigma - gain @ Sigma[obs_lin, :]
    cond_cov = _symmetrize(cond_cov)

    means = np.empty((n + 1, p))
    covs = np.empty((n + 1, p, p))
    lag_one = np.empty((n, p, p))
    means[0] = ssm.x0
    covs[0] = 0.0
    for s in range(n):
        sl = slice(s * p, (s + 1) * p)
        means[s + 1] = cond_mean[sl]
        covs[s + 1] = cond_cov[sl, sl]
        if s == 0:
            lag_one[0] = 0.0
        else:
            lag_one[s] = cond_cov[sl, slice((s - 1) * p, s * p)]
    return SmoothedMoments(means=means, covs=covs, lag_one=lag_one, loglik=loglik)
