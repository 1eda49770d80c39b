"""Shared test utilities: model generators and independent oracles.

The oracles here deliberately use different constructions than the package
(explicit unrolling instead of recursions, importance sampling instead of
exact conditioning) so agreement is evidence, not tautology.
"""
from __future__ import annotations

import numpy as np

from svarss.model import MixtureSpec, SvarModel
from svarss.sampling import Block


def bimodal_mixture() -> MixtureSpec:
    """The two-component shock used throughout the simulation configs."""
    return MixtureSpec(weights=[0.7, 0.3], means=[0.36, -0.84], variances=[0.04, 1.0])


def config1_model() -> SvarModel:
    """Slow dynamics, no instantaneous mixing."""
    mix = bimodal_mixture()
    return SvarModel(
        A=np.array([[0.98, 0.0], [0.2, 0.98]]),
        C=np.eye(2),
        shocks=(mix, mix),
    )


def config2_C() -> np.ndarray:
    return np.array([[1.0, 0.0], [-0.2, 1.0]])


def sweep_template_A() -> np.ndarray:
    """Dense interaction template; rescale to a target max eigenvalue."""
    return np.array([[0.4, -0.5], [0.7, 0.3]])


def scale_to_eigenvalue(A: np.ndarray, rho: float) -> np.ndarray:
    cur = np.max(np.abs(np.linalg.eigvals(A)))
    return A * (rho / cur)


def random_mixture(rng: np.random.Generator, m: int, asymmetric: bool = True) -> MixtureSpec:
    """Zero-mean mixture; asymmetric by construction unless disabled."""
    if m == 1:
        return MixtureSpec(weights=[1.0], means=[0.0], variances=[float(rng.uniform(0.5, 2.0))])
    w = rng.dirichlet(np.full(m, 4.0))
    mu = rng.normal(0.0, 1.0, size=m)
    if asymmetric:
        mu[0] = abs(mu[0]) + 0.5  # push the first component off center
    mu -= w @ mu
    var = rng.uniform(0.05, 1.5, size=m)
    return MixtureSpec(weights=w, means=mu, variances=var)


def random_model(
    rng: np.random.Generator,
    p: int,
    m: int = 2,
    rho: float = 0.8,
    identity_C: bool = False,
) -> SvarModel:
    A = rng.standard_normal((p, p))
    A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
    if identity_C:
        # keep the shocks in the sigma^2_{j1} = 1 gauge so C = I survives
        # the round trip through the estimation parameterization
        C = np.eye(p)
        shocks = []
        for _ in range(p):
            s = random_mixture(rng, m)
            sc = np.sqrt(s.variances[0])
            shocks.append(
                MixtureSpec(
                    weights=s.weights, means=s.means / sc, variances=s.variances / sc**2
                )
            )
        return SvarModel(A=A, C=C, shocks=tuple(shocks))
    else:
        C = np.eye(p) + 0.3 * rng.standard_normal((p, p))
        while abs(np.linalg.det(C)) < 0.1:
            C = np.eye(p) + 0.3 * rng.standard_normal((p, p))
    shocks = tuple(random_mixture(rng, m) for _ in range(p))
    return SvarModel(A=A, C=C, shocks=shocks)


def random_signed_permutation(rng: np.random.Generator, p: int):
    from svarss.evaluate import SignedPermutation

    return SignedPermutation(
        perm=tuple(rng.permutation(p).tolist()),
        signs=tuple(int(s) for s in rng.choice([-1, 1], size=p)),
    )


def relabel_model(model: SvarModel, sp) -> SvarModel:
    """The observationally identical model with shock columns relabeled."""
    C2 = model.C[:, list(sp.perm)] * np.array(sp.signs, dtype=float)
    shocks2 = tuple(
        MixtureSpec(
            weights=model.shocks[src].weights,
            means=model.shocks[src].means * s,
            variances=model.shocks[src].variances,
        )
        for src, s in zip(sp.perm, sp.signs)
    )
    return SvarModel(A=model.A, C=C2, shocks=shocks2)


def random_block(
    rng: np.random.Generator, p: int, n_steps: int, t0: int = 1
) -> Block:
    """Block with random interior masks (anchors full, interior anything)."""
    observed = [np.arange(p)]
    values = [rng.standard_normal(p)]
    for s in range(1, n_steps + 1):
        if s == n_steps:
            obs = np.arange(p)
        else:
            mask = rng.random(p) < 0.4
            obs = np.flatnonzero(mask)
        observed.append(obs)
        values.append(rng.standard_normal(len(obs)))
    return Block(t0=t0, t1=t0 + n_steps, observed=observed, values=values)


# ---------------------------------------------------------------------------
# independent joint-normal oracle (explicit unrolling, no recursions)


def unrolled_condition(ssm, block):
    """Condition the stacked state vector on the observations by brute force.

    Builds the joint mean/covariance of (x_1, ..., x_n) given x_0 from the
    closed-form unrolling x_s = A^s x0 + sum_u A^(s-u) (b_u + w_u), then
    conditions on the observed coordinates with one dense solve.  Returns
    (means, covs, lag_one, loglik) in the same layout as SmoothedMoments.
    """
    A = ssm.A
    p = A.shape[0]
    n = ssm.b.shape[0]
    powers = [np.eye(p)]
    for _ in range(n):
        powers.append(A @ powers[-1])

    mean = np.zeros(n * p)
    for s in range(1, n + 1):
        acc = powers[s] @ ssm.x0
        for u in range(1, s + 1):
            acc = acc + powers[s - u] @ ssm.b[u - 1]
        mean[(s - 1) * p : s * p] = acc
    cov = np.zeros((n * p, n * p))
    for s in range(1, n + 1):
        for t in range(1, n + 1):
            acc = np.zeros((p, p))
            for u in range(1, min(s, t) + 1):
                acc += powers[s - u] @ ssm.Q[u - 1] @ powers[t - u].T
            cov[(s - 1) * p : s * p, (t - 1) * p : t * p] = acc

    obs_lin = []
    obs_val = []
    for s in range(1, n + 1):
        for j in block.observed[s]:
            obs_lin.append((s - 1) * p + j)
    for s in range(1, n + 1):
        obs_val.extend(block.values[s])
    obs_lin = np.array(obs_lin, dtype=int)
    y = np.array(obs_val, dtype=float)

    Soo = cov[np.ix_(obs_lin, obs_lin)]
    Sxo = cov[:, obs_lin]
    resid = y - mean[obs_lin]
    gain = Sxo @ np.linalg.inv(Soo)
    cmean = mean + gain @ resid
    ccov = cov - gain @ Sxo.T

    sign, logdet = np.linalg.slogdet(Soo)
    assert sign > 0
    loglik = -0.5 * (
        len(y) * np.log(2.0 * np.pi) + logdet + resid @ np.linalg.solve(Soo, resid)
    )

    means = np.empty((n + 1, p))
    covs = np.empty((n + 1, p, p))
    lag_one = np.empty((n, p, p))
    means[0] = ssm.x0
    covs[0] = 0.0
    for s in range(1, n + 1):
        sl = slice((s - 1) * p, s * p)
        means[s] = cmean[sl]
        covs[s] = ccov[sl, sl]
    lag_one[0] = 0.0
    for s in range(1, n):
        lag_one[s] = ccov[s * p : (s + 1) * p, (s - 1) * p : s * p]
    return means, covs, lag_one, float(loglik)


# ---------------------------------------------------------------------------
# Monte-Carlo conditional sampler (sequential importance sampling)


def mc_conditional_stats(model: SvarModel, block: Block, n_draws: int, seed: int, n_batches: int = 200):
    """Estimate the six expected statistics for one block by simulation.

    Proposal: components and hidden coordinates are drawn forward in time,
    with each step's hidden part drawn from its exact Gaussian conditional
    given that step's observed coordinates; the importance weight collects
    the observed-coordinate densities.  Returns (stats, se) where both are
    dicts with keys N, sx, sxm, sxx, smm, sxy of the same shapes e_step
    produces, and se holds batch-mean standard errors.
    """
    rng = np.random.default_rng(seed)
    p = model.p
    A, C = model.A, model.C
    n = block.n_steps
    m_sizes = [s.m for s in model.shocks]
    m_max = max(m_sizes)

    D = n_draws
    x = np.broadcast_to(block.x0, (D, p)).copy()
    logw = np.zeros(D)
    zs = np.zeros((D, n, p), dtype=np.int64)
    xs = np.zeros((D, n + 1, p))
    xs[:, 0] = x

    for s in range(1, n + 1):
        z_step = np.empty((D, p), dtype=np.int64)
        mu_step = np.empty((D, p))
        var_step = np.empty((D, p))
        for j, spec in enumerate(model.shocks):
            cw = np.cumsum(spec.weights)
            z = np.searchsorted(cw, rng.random(D))
            z = np.minimum(z, spec.m - 1)
            z_step[:, j] = z
            mu_step[:, j] = spec.means[z]
            var_step[:, j] = spec.variances[z]
        zs[:, s - 1] = z_step
        mean = x @ A.T + mu_step @ C.T
        Q = np.einsum("ik,dk,jk->dij", C, var_step, C)

        o = np.asarray(block.observed[s], dtype=int)
        h = np.setdiff1d(np.arange(p), o)
        y = np.asarray(block.values[s], dtype=float)
        x_new = np.empty((D, p))
        if len(o) > 0:
            Qoo = Q[:, o][:, :, o]
            resid = y[np.newaxis, :] - mean[:, o]
            sign, logdet = np.linalg.slogdet(Qoo)
            sol = np.linalg.solve(Qoo, resid[:, :, np.newaxis])[:, :, 0]
            logw += -0.5 * (len(o) * np.log(2 * np.pi) + logdet + np.einsum("di,di->d", resid, sol))
            x_new[:, o] = y[np.newaxis, :]
            if len(h) > 0:
                Qho = Q[:, h][:, :, o]
                Qhh = Q[:, h][:, :, h]
                cond_mean = mean[:, h] + np.einsum("dij,dj->di", Qho, sol)
                cond_cov = Qhh - Qho @ np.linalg.solve(Qoo, Qho.transpose(0, 2, 1))
                chol = np.linalg.cholesky(0.5 * (cond_cov + cond_cov.transpose(0, 2, 1)))
                eps = rng.standard_normal((D, len(h)))
                x_new[:, h] = cond_mean + np.einsum("dij,dj->di", chol, eps)
        else:
            chol = np.linalg.cholesky(Q)
            eps = rng.standard_normal((D, p))
            x_new = mean + np.einsum("dij,dj->di", chol, eps)
        x = x_new
        xs[:, s] = x

    logw -= logw.max()
    w = np.exp(logw)

    def ratio_stats(sel):
        """Weighted stats over a subset of draws."""
        ws = w[sel]
        denom = ws.sum()
        N = np.zeros((p, m_max))
        sx = np.zeros((p, m_max, p))
        sxm = np.zeros((p, m_max, p))
        sxx = np.zeros((p, m_max, p, p))
        smm = np.zeros((p, m_max, p, p))
        sxy = np.zeros((p, m_max, p, p))
        for s in range(1, n + 1):
            x1 = xs[sel, s]
            x0 = xs[sel, s - 1]
            for j in range(p):
                zj = zs[sel, s - 1, j]
                for i in range(m_sizes[j]):
                    wi = ws * (zj == i)
                    N[j, i] += wi.sum()
                    sx[j, i] += wi @ x1
                    sxm[j, i] += wi @ x0
                    sxx[j, i] += np.einsum("d,di,dj->ij", wi, x1, x1)
                    smm[j, i] += np.einsum("d,di,dj->ij", wi, x0, x0)
                    sxy[j, i] += np.einsum("d,di,dj->ij", wi, x1, x0)
        return {
            "N": N / denom, "sx": sx / denom, "sxm": sxm / denom,
            "sxx": sxx / denom, "smm": smm / denom, "sxy": sxy / denom,
        }

    full = ratio_stats(np.arange(D))
    batch_size = D // n_batches
    batches = []
    for b in range(n_batches):
        sel = np.arange(b * batch_size, (b + 1) * batch_size)
        batches.append(ratio_stats(sel))
    se = {}
    for key in full:
        stack = np.stack([b[key] for b in batches])
        se[key] = stack.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return full, se
