"""Exact EM for the SVAR with Gaussian-mixture shocks under subsampling.

E-step: enumerate mixture assignments per block, run the conditional
smoother for each, weight by posterior assignment probabilities.  M-step:
closed forms for A and the mixture parameters, damped Newton for W = C^{-1},
cycled until inner convergence.  The outer loop uses adaptive over-relaxed
extrapolation with plain-EM fallback, so accepted iterates never decrease
the observed log-likelihood.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _backend, kalman
from .errors import (
    CapacityError,
    DegenerateComponentError,
    DimensionError,
    NumericalError,
    SvarError,
)
from .model import MixtureSpec, SvarModel
from .sampling import Block, ObservationSet

__all__ = [
    "Theta",
    "ExpectedStats",
    "EmConfig",
    "FitResult",
    "RestartSummary",
    "enumerate_assignments",
    "e_step",
    "m_step_A",
    "m_step_mixture",
    "expected_complete_loglik",
    "w_gradient",
    "w_hessian",
    "m_step_W",
    "m_step",
    "em_fit",
    "multi_start_fit",
    "draw_init",
    "w_support",
]

DEGENERATE_MASS = 1e-8


@dataclass
class Theta:
    """EM parameter point: A, W = C^{-1}, and scale-fixed shock mixtures.

    The convention sigma^2_{j,1} = 1 pins the scale split between C and the
    shocks (the model is invariant under rescaling shock j by s and column j
    of C by s).
    """

    A: np.ndarray
    W: np.ndarray
    shocks: tuple[MixtureSpec, ...]

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        self.shocks = tuple(self.shocks)
        p = self.A.shape[0]
        if self.A.shape != (p, p) or self.W.shape != (p, p):
            raise DimensionError("A and W must be square matrices of equal size")
        if len(self.shocks) != p:
            raise DimensionError(f"need {p} shock mixtures, got {len(self.shocks)}")
        for j, s in enumerate(self.shocks):
            if abs(s.variances[0] - 1.0) > 1e-8:
                raise ValueError(
                    f"shock {j}: first component variance must be 1 (scale convention), "
                    f"got {s.variances[0]!r}"
                )

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def C(self) -> np.ndarray:
        return np.linalg.inv(self.W)

    def m_sizes(self) -> tuple[int, ...]:
        return tuple(s.m for s in self.shocks)

    def packed_mixtures(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mu, sig2, logpi) as (p, m_max) arrays, padded past each series' m."""
        p = self.p
        m_max = max(self.m_sizes())
        mu = np.zeros((p, m_max))
        sig2 = np.ones((p, m_max))
        logpi = np.full((p, m_max), -np.inf)
        for j, s in enumerate(self.shocks):
            mu[j, : s.m] = s.means
            sig2[j, : s.m] = s.variances
            logpi[j, : s.m] = np.log(s.weights)
        return mu, sig2, logpi

    def to_model(self) -> SvarModel:
        return SvarModel(A=self.A.copy(), C=self.C, shocks=self.shocks)

    @classmethod
    def from_model(cls, model: SvarModel) -> "Theta":
        """Convert a model to the EM gauge (rescales so sigma^2_{j1} = 1)."""
        scale = np.array([np.sqrt(s.variances[0]) for s in model.shocks])
        shocks = tuple(
            MixtureSpec(
                weights=s.weights.copy(),
                means=s.means / sc,
                variances=_pin_first(s.variances / sc**2),
            )
            for s, sc in zip(model.shocks, scale)
        )
        W = np.linalg.inv(model.C * scale[np.newaxis, :])
        return cls(A=model.A.copy(), W=W, shocks=shocks)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "W": self.W.tolist(),
            "C": self.C.tolist(),
            "shocks": [s.to_dict() for s in self.shocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Theta":
        return cls(
            A=np.asarray(d["A"], dtype=float),
            W=np.asarray(d["W"], dtype=float),
            shocks=tuple(MixtureSpec.from_dict(s) for s in d["shocks"]),
        )


def _pin_first(variances: np.ndarray) -> np.ndarray:
    """Snap the first variance to exactly 1 after a rescale."""
    v = np.asarray(variances, dtype=float).copy()
    v[0] = 1.0
    return v


@dataclass
class ExpectedStats:
    """Expected sufficient statistics, summed over all transitions.

    Indexed [series j, component i]; x is the state at the shock's time and
    xm the state one step earlier:
      N   = sum_t E(z_tji)            sx  = sum_t E(z_tji x_t)
      sxm = sum_t E(z_tji x_{t-1})    sxx = sum_t E(z_tji x_t x_t')
      smm = sum_t E(z_tji x_{t-1} x_{t-1}')
      sxy = sum_t E(z_tji x_t x_{t-1}')
    """

    N: np.ndarray
    sx: np.ndarray
    sxm: np.ndarray
    sxx: np.ndarray
    smm: np.ndarray
    sxy: np.ndarray
    n_transitions: int


@dataclass
class EmConfig:
    """Knobs for the EM driver and the M-step inner solvers."""

    max_iter: int = 500
    tol: float = 1e-6
    restarts: int = 1
    seed: int = 0
    m: int = 2
    structure: object = "free"  # 'free' | 'identity' | boolean zero-pattern mask on C
    eta0: float = 1.0
    eta_growth: float = 1.1
    inner_cycles: int = 5
    inner_tol: float = 1e-8
    w_tol: float = 1e-8
    w_max_steps: int = 40
    assignment_budget: int = 2**20
    monotone_slack: float = 1e-9
    backend: str | None = None
    threads: int = 1

    def __post_init__(self):
        for name in ("tol", "inner_tol", "w_tol", "monotone_slack"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def w_support(structure, p: int) -> np.ndarray | None:
    """Free-entry mask of W for a structural constraint; None means W = I fixed.

    A zero-pattern mask on C is usable only when its support (which must
    include the diagonal) is transitively closed, because then C and W share
    the pattern and the constraint can be imposed on W directly.
    """
    if isinstance(structure, str):
        if structure == "free":
            return np.ones((p, p), dtype=bool)
        if structure == "identity":
            return None
        raise ValueError(f"unknown structure {structure!r}")
    mask = np.asarray(structure, dtype=bool)
    if mask.shape != (p, p):
        raise DimensionError(f"zero-pattern mask must be {p}x{p}, got {mask.shape}")
    if not np.all(np.diag(mask)):
        raise ValueError("zero-pattern mask must have a nonzero diagonal")
    closure = (mask.astype(int) @ mask.astype(int)) > 0
    if np.any(closure & ~mask):
        raise ValueError(
            "zero-pattern mask must be transitively closed (then C and its "
            "inverse share the pattern); got a pattern whose inverse would fill in"
        )
    return mask


def enumerate_assignments(block: Block, m, p: int, budget: int = 2**20) -> np.ndarray:
    """All component assignments for the block's shock slots.

    Slots are the (time, series) pairs at times t0+1..t1.  Returns an
    (count, n_steps, p) int array in lexicographic order with the last slot
    (latest time, highest series index) varying fastest.  ``m`` may be a
    scalar or a per-series sequence.
    """
    n = block.n_steps
    bases = np.broadcast_to(np.asarray(m, dtype=np.int64), (p,))
    count = 1
    for s in range(n):
        for j in range(p):
            count *= int(bases[j])
            if count > budget:
                raise CapacityError(
                    f"assignment enumeration needs {np.prod(bases.astype(object)) ** n} "
                    f"combinations, over the budget of {budget}",
                    required=int(np.prod(bases.astype(object)) ** n),
                )
    codes = np.arange(count, dtype=np.int64)
    Z = np.empty((count, n, p), dtype=np.int64)
    for s in range(n - 1, -1, -1):
        for j in range(p - 1, -1, -1):
            base = int(bases[j])
            Z[:, s, j] = codes % base
            codes //= base
    return Z


# ---------------------------------------------------------------------------
# E-step


def _block_pattern_key(block: Block):
    return block.pattern()


def e_step(
    theta: Theta,
    obs: ObservationSet,
    config: EmConfig | None = None,
    backend: str | None = None,
) -> tuple[ExpectedStats, float]:
    """Expected sufficient statistics and observed log-likelihood.

    Blocks are grouped by interior observation pattern; each group is handed
    to the selected kernel in one call.  ``backend`` may be 'python',
    'compiled', or 'reference' (per-block loop through kalman.filter_smooth,
    used by tests).
    """
    if config is None:
        config = EmConfig()
    backend = backend or config.backend or _backend.default_backend()
    p = theta.p
    if obs.p != p:
        raise DimensionError(f"theta has p={p}, observations have p={obs.p}")
    if backend == "reference":
        return _e_step_reference(theta, obs, config)

    kernel = _backend.estep_group_fn(backend)
    mu, sig2, logpi = theta.packed_mixtures()
    m_max = mu.shape[1]
    C = theta.C
    bases = np.array(theta.m_sizes(), dtype=np.int64)

    groups: dict = {}
    for b in obs.blocks:
        groups.setdefault(_block_pattern_key(b), []).append(b)

    N = np.zeros((p, m_max))
    sx = np.zeros((p, m_max, p))
    sxm = np.zeros((p, m_max, p))
    sxx = np.zeros((p, m_max, p, p))
    smm = np.zeros((p, m_max, p, p))
    sxy = np.zeros((p, m_max, p, p))
    total_ll = 0.0
    for key in sorted(groups.keys()):
        blocks = groups[key]
        n = len(key)
        Z = enumerate_assignments(blocks[0], bases, p, config.assignment_budget)
        obs_pad = np.zeros((n, p), dtype=np.int64)
        q_arr = np.zeros(n, dtype=np.int64)
        for s, o in enumerate(key):
            q_arr[s] = len(o)
            obs_pad[s, : len(o)] = o
        Bn = len(blocks)
        x0s = np.empty((Bn, p))
        ys = np.zeros((Bn, n, p))
        for bi, blk in enumerate(blocks):
            x0s[bi] = blk.x0
            for s in range(n):
                ys[bi, s, blk.observed[s + 1]] = blk.values[s + 1]
        try:
            blk_ll, gN, gsx, gsxm, gsxx, gsmm, gsxy = kernel(
                theta.A, C, mu, sig2, logpi, x0s, ys, obs_pad, q_arr, Z
            )
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"E-step linear algebra failure: {exc}") from None
        total_ll += float(blk_ll.sum())
        N += gN
        sx += gsx
        sxm += gsxm
        sxx += gsxx
        smm += gsmm
        sxy += gsxy
    stats = ExpectedStats(
        N=N, sx=sx, sxm=sxm, sxx=sxx, smm=smm, sxy=sxy, n_transitions=obs.n_transitions
    )
    return stats, total_ll


def _e_step_reference(theta: Theta, obs: ObservationSet, config: EmConfig):
    """Plain per-block, per-assignment loop.  Slow; the ground-truth path."""
    p = theta.p
    m_max = max(theta.m_sizes())
    model = theta.to_model()
    logpi_full = theta.packed_mixtures()[2]
    bases = np.array(theta.m_sizes(), dtype=np.int64)

    N = np.zeros((p, m_max))
    sx = np.zeros((p, m_max, p))
    sxm = np.zeros((p, m_max, p))
    sxx = np.zeros((p, m_max, p, p))
    smm = np.zeros((p, m_max, p, p))
    sxy = np.zeros((p, m_max, p, p))
    total_ll = 0.0
    for blk in obs.blocks:
        Z = enumerate_assignments(blk, bases, p, config.assignment_budget)
        nz = Z.shape[0]
        logw = np.empty(nz)
        moments = []
        for zi in range(nz):
            ssm = kalman.build_ssm(model, blk, Z[zi])
            mom = kalman.filter_smooth(ssm, blk)
            moments.append(mom)
            logw[zi] = mom.loglik + float(
                logpi_full[np.arange(p)[np.newaxis, :], Z[zi]].sum()
            )
        mx = logw.max()
        if not np.isfinite(mx):
            raise NumericalError(
                f"all assignment likelihoods are -inf for block at t={blk.t0}"
            )
        blk_ll = mx + np.log(np.exp(logw - mx).sum())
        w = np.exp(logw - blk_ll)
        total_ll += float(blk_ll)
        for zi in range(nz):
            mom = moments[zi]
            for s in range(1, blk.n_steps + 1):
                m1, m0 = mom.means[s], mom.means[s - 1]
                V1, V0 = mom.covs[s], mom.covs[s - 1]
                X11 = V1 + np.outer(m1, m1)
                X00 = V0 + np.outer(m0, m0)
                X10 = mom.lag_one[s - 1] + np.outer(m1, m0)
                for j in range(p):
                    i = Z[zi, s - 1, j]
                    wi = w[zi]
                    N[j, i] += wi
                    sx[j, i] += wi * m1
                    sxm[j, i] += wi * m0
                    sxx[j, i] += wi * X11
                    smm[j, i] += wi * X00
                    sxy[j, i] += wi * X10
    stats = ExpectedStats(
        N=N, sx=sx, sxm=sxm, sxx=sxx, smm=smm, sxy=sxy, n_transitions=obs.n_transitions
    )
    return stats, total_ll


# ---------------------------------------------------------------------------
# M-step pieces


def m_step_A(stats: ExpectedStats, theta: Theta) -> np.ndarray:
    """Closed-form update of A given W and the mixture parameters.

    The per-row normal equations solve for the rows of G = W A (the row
    residual decouples in W_j x_t, not in x_t itself); A is recovered as
    C G = W^{-1} G.
    """
    p = theta.p
    G = np.empty((p, p))
    for j, spec in enumerate(theta.shocks):
        wj = theta.W[j]
        gram = np.zeros((p, p))
        rhs = np.zeros(p)
        for i in range(spec.m):
            inv_var = 1.0 / spec.variances[i]
            gram += stats.smm[j, i] * inv_var
            rhs += (stats.sxy[j, i].T @ wj - spec.means[i] * stats.sxm[j, i]) * inv_var
        try:
            G[j] = scipy.linalg.solve(gram, rhs, assume_a="sym")
        except (scipy.linalg.LinAlgError, ValueError):
            raise NumericalError(f"singular weighted Gram matrix in A update (row {j})") from None
    return theta.C @ G


def m_step_mixture(
    stats: ExpectedStats, theta: Theta, rescale: bool = True
) -> tuple[tuple[MixtureSpec, ...], np.ndarray]:
    """Joint update of (mu, sigma^2, pi) given responsibilities.

    Returns the new specs and the per-series scale factors s_j that restore
    sigma^2_{j1} = 1; the caller must divide row j of W by s_j to keep the
    likelihood unchanged.  With ``rescale=False`` (the C = I constraint,
    where no scale can be moved into C) sigma^2_{j1} is instead held at 1 and
    the remaining parameters are maximized subject to that, still a valid
    ascent step.  Single-component series keep mu = 0 fixed.
    """
    p = theta.p
    T = stats.n_transitions
    new_shocks = []
    scales = np.ones(p)
    for j, spec in enumerate(theta.shocks):
        wj = theta.W[j]
        wA = wj @ theta.A
        m = spec.m
        mu_new = np.empty(m)
        var_new = np.empty(m)
        pi_new = np.empty(m)
        for i in range(m):
            Nji = stats.N[j, i]
            if Nji < DEGENERATE_MASS:
                raise DegenerateComponentError(
                    f"component {i} of series {j} has responsibility mass {Nji:.3g}",
                    series=j,
                    component=i,
                )
            e_sum = wj @ stats.sx[j, i] - wA @ stats.sxm[j, i]
            mu_hat = e_sum / Nji
            quad = (
                wj @ stats.sxx[j, i] @ wj
                - 2.0 * (wj @ stats.sxy[j, i] @ wA)
                + wA @ stats.smm[j, i] @ wA
            )
            var_hat = quad / Nji - mu_hat**2
            mu_new[i] = mu_hat
            var_new[i] = var_hat
            pi_new[i] = Nji / T
        if m == 1:
            mu_new[0] = 0.0
            var_new[0] = quad / Nji  # recompute without the mean term
            pi_new[0] = 1.0
        if np.any(var_new <= 1e-12):
            i_bad = int(np.argmin(var_new))
            raise DegenerateComponentError(
                f"component {i_bad} of series {j} collapsed (variance {var_new[i_bad]:.3g})",
                series=j,
                component=i_bad,
            )
        pi_new = pi_new / pi_new.sum()
        if rescale:
            s = np.sqrt(var_new[0])
            scales[j] = s
            mu_new = mu_new / s
            var_new = _pin_first(var_new / s**2)
        else:
            var_new[0] = 1.0
        new_shocks.append(MixtureSpec(weights=pi_new, means=mu_new, variances=var_new))
    return tuple(new_shocks), scales


def _w_quadratic_terms(theta: Theta, stats: ExpectedStats):
    """Per-series Sbar_j = sum_i Sbar_ji / sig2_ji and u_j = sum_i mu_ji v_ji / sig2_ji.

    Sbar_ji = sxx - sxy A' - A sxy' + A smm A' and v_ji = sx - A sxm are the
    expected outer products of the residual x_t - A x_{t-1} within component i.
    """
    p = theta.p
    A = theta.A
    Sbar = np.zeros((p, p, p))
    u = np.zeros((p, p))
    for j, spec in enumerate(theta.shocks):
        for i in range(spec.m):
            inv_var = 1.0 / spec.variances[i]
            S = (
                stats.sxx[j, i]
                - stats.sxy[j, i] @ A.T
                - A @ stats.sxy[j, i].T
                + A @ stats.smm[j, i] @ A.T
            )
            Sbar[j] += 0.5 * (S + S.T) * inv_var
            u[j] += spec.means[i] * (stats.sx[j, i] - A @ stats.sxm[j, i]) * inv_var
    return Sbar, u


def expected_complete_loglik(theta: Theta, stats: ExpectedStats) -> float:
    """E[log p(X, z | theta)] under the responsibilities baked into stats."""
    T = stats.n_transitions
    sign, logdet = np.linalg.slogdet(theta.W)
    if sign == 0:
        return -np.inf
    total = T * logdet
    Sbar, u = _w_quadratic_terms(theta, stats)
    for j, spec in enumerate(theta.shocks):
        wj = theta.W[j]
        total += -0.5 * float(wj @ Sbar[j] @ wj) + float(wj @ u[j])
        for i in range(spec.m):
            Nji = stats.N[j, i]
            total += Nji * (
                np.log(spec.weights[i])
                - 0.5 * np.log(2.0 * np.pi * spec.variances[i])
                - 0.5 * spec.means[i] ** 2 / spec.variances[i]
            )
    return float(total)


def w_gradient(theta: Theta, stats: ExpectedStats) -> np.ndarray:
    """Gradient of the expected complete log-likelihood in W."""
    T = stats.n_transitions
    try:
        Winv = np.linalg.inv(theta.W)
    except np.linalg.LinAlgError:
        raise NumericalError("W is singular in gradient evaluation") from None
    Sbar, u = _w_quadratic_terms(theta, stats)
    g = np.empty_like(theta.W)
    for j in range(theta.p):
        g[j] = T * Winv[:, j] - Sbar[j] @ theta.W[j] + u[j]
    return g


def w_hessian(theta: Theta, stats: ExpectedStats) -> np.ndarray:
    """Hessian w.r.t. W flattened in row-major order (matches W.ravel())."""
    p = theta.p
    T = stats.n_transitions
    try:
        Winv = np.linalg.inv(theta.W)
    except np.linalg.LinAlgError:
        raise NumericalError("W is singular in Hessian evaluation") from None
    Sbar, _ = _w_quadratic_terms(theta, stats)
    # d^2 T log|det W| / dW_{jl} dW_{j'l'} = -T Winv[l, j'] Winv[l', j]
    H = -T * np.einsum("lJ,Lj->jlJL", Winv, Winv).reshape(p * p, p * p)
    for j in range(p):
        sl = slice(j * p, (j + 1) * p)
        H[sl, sl] -= Sbar[j]
    return H


@dataclass
class WStep:
    W: np.ndarray
    stalled: bool
    steps: int
    grad_norm: float


def m_step_W(theta: Theta, stats: ExpectedStats, config: EmConfig) -> WStep:
    """Damped Newton ascent in W over the free entries of the structure.

    Never returns a W with a lower expected objective than the entry point;
    falls back to gradient ascent when the Hessian solve fails, and reports
    ``stalled`` when no uphill step of either kind can be found.
    """
    free_mask = w_support(config.structure, theta.p)
    if free_mask is None:
        return WStep(W=np.eye(theta.p), stalled=False, steps=0, grad_norm=0.0)
    free = np.flatnonzero(free_mask.ravel())

    cur = theta
    obj = expected_complete_loglik(cur, stats)
    steps = 0
    stalled = False
    grad_norm = np.inf
    for _ in range(config.w_max_steps):
        g = w_gradient(cur, stats).ravel()[free]
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= config.w_tol:
            break
        direction = None
        H = w_hessian(cur, stats)[np.ix_(free, free)]
        try:
            # ill-conditioned H only yields a poor direction, which the line
            # search below rejects anyway; no need for scipy's warning
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                delta = scipy.linalg.solve(H, g, assume_a="sym")
            direction = -delta  # Newton step for a maximum
        except (scipy.linalg.LinAlgError, ValueError):
            direction = None
        improved = False
        for d in ([direction] if direction is not None else []) + [g / (1.0 + grad_norm)]:
            step = 1.0
            for _ in range(40):
                w_new = cur.W.ravel().copy()
                w_new[free] += step * d
                cand = replace(cur, W=w_new.reshape(theta.p, theta.p))
                cand_obj = expected_complete_loglik(cand, stats)
                if cand_obj > obj or (cand_obj == obj and step == 1.0):
                    cur = cand
                    obj = cand_obj
                    improved = True
                    break
                step *= 0.5
            if improved:
                break
        steps += 1
        if not improved:
            # no representable uphill step; a genuine stall only if the
            # gradient is still large relative to the objective's resolution
            stalled = grad_norm > config.w_tol * max(1.0, abs(obj))
            break
    return WStep(W=cur.W, stalled=stalled, steps=steps, grad_norm=grad_norm)


def m_step(theta: Theta, stats: ExpectedStats, config: EmConfig) -> Theta:
    """Full M-step: cycle A, W, mixture updates until inner convergence."""
    identity = isinstance(config.structure, str) and config.structure == "identity"
    cur = theta
    prev_q = expected_complete_loglik(cur, stats)
    for _ in range(config.inner_cycles):
        cur = replace(cur, A=m_step_A(stats, cur))
        if not identity:
            cur = replace(cur, W=m_step_W(cur, stats, config).W)
        shocks, scales = m_step_mixture(stats, cur, rescale=not identity)
        cur = Theta(A=cur.A, W=cur.W / scales[:, np.newaxis], shocks=shocks)
        q = expected_complete_loglik(cur, stats)
        if abs(q - prev_q) <= config.inner_tol * (abs(prev_q) + 1.0):
            break
        prev_q = q
    return cur


# ---------------------------------------------------------------------------
# EM driver


@dataclass
class RestartSummary:
    restart_index: int
    loglik: float
    n_iter: int
    converged: bool
    failed: bool
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "restart_index": self.restart_index,
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "failed": self.failed,
            "message": self.message,
        }


@dataclass
class FitResult:
    """Outcome of one EM run (or the best of several restarts)."""

    theta: Theta | None
    loglik: float
    trace: list[float]
    converged: bool
    n_iter: int
    failed: bool = False
    message: str = ""
    restart_index: int = 0
    restarts: tuple[RestartSummary, ...] | None = None
    wall_time: float | None = None

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {
            "theta": self.theta.to_dict() if self.theta is not None else None,
            "model": self.theta.to_model().to_dict() if self.theta is not None else None,
            "loglik": self.loglik,
            "trace": list(self.trace),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "failed": self.failed,
            "message": self.message,
            "restart_index": self.restart_index,
        }
        if self.restarts is not None:
            d["restarts"] = [r.to_dict() for r in self.restarts]
        if include_timings:
            d["wall_time_seconds"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            theta=Theta.from_dict(d["theta"]) if d.get("theta") else None,
            loglik=d["loglik"],
            trace=list(d["trace"]),
            converged=d["converged"],
            n_iter=d["n_iter"],
            failed=d.get("failed", False),
            message=d.get("message", ""),
            restart_index=d.get("restart_index", 0),
            restarts=tuple(
                RestartSummary(**r) for r in d["restarts"]
            )
            if d.get("restarts")
            else None,
        )


def _extrapolate(theta_from: Theta, theta_to: Theta, eta: float) -> Theta:
    """Over-relaxed step: linear in A, W, mu; log-space in sigma^2 and pi.

    Weights are renormalized after the log-space move; first-component
    variances stay exactly 1 because both endpoints have log-variance 0.
    """
    A = theta_from.A + eta * (theta_to.A - theta_from.A)
    W = theta_from.W + eta * (theta_to.W - theta_from.W)
    shocks = []
    for s0, s1 in zip(theta_from.shocks, theta_to.shocks):
        logw = np.log(s0.weights) + eta * (np.log(s1.weights) - np.log(s0.weights))
        w = np.exp(logw - logw.max())
        w /= w.sum()
        mu = s0.means + eta * (s1.means - s0.means)
        logv = np.log(s0.variances) + eta * (np.log(s1.variances) - np.log(s0.variances))
        var = _pin_first(np.exp(logv))
        shocks.append(MixtureSpec(weights=w, means=mu, variances=var))
    return Theta(A=A, W=W, shocks=tuple(shocks))


def _reseed_component(theta: Theta, series: int, component: int, rng: np.random.Generator) -> Theta:
    """Give a starved component fresh mass and a perturbed location."""
    spec = theta.shocks[series]
    w = spec.weights.copy()
    mu = spec.means.copy()
    var = spec.variances.copy()
    w[component] = 1.0 / spec.m
    w /= w.sum()
    mu[component] = float(rng.normal(0.0, 1.0))
    if component != 0:
        var[component] = float(np.exp(rng.uniform(np.log(0.04), 0.0)))
    shocks = list(theta.shocks)
    shocks[series] = MixtureSpec(weights=w, means=mu, variances=var)
    return replace(theta, shocks=tuple(shocks))


def em_fit(
    init: Theta,
    obs: ObservationSet,
    config: EmConfig,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Over-relaxed EM from one starting point.

    The trace records accepted iterates only, and acceptance requires the
    observed log-likelihood not to drop (within slack), so the trace is
    non-decreasing.  Extrapolated proposals that would decrease it are
    replaced by the plain EM step (which cannot).  Degenerate mixture
    components are reseeded; iterates after a reseed rejoin the trace only
    once the log-likelihood catches back up.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    t_start = time.perf_counter()
    theta = init
    try:
        stats, ll = e_step(theta, obs, config)
    except SvarError as exc:
        return FitResult(
            theta=None,
            loglik=-np.inf,
            trace=[],
            converged=False,
            n_iter=0,
            failed=True,
            message=f"initial E-step failed: {exc}",
            wall_time=time.perf_counter() - t_start,
        )

    trace = [ll]
    theta_best, ll_best = theta, ll
    eta = config.eta0
    detached = False  # True while recovering from a reseed
    converged = False
    message = ""
    n_iter = 0
    reseeds_left = 5 * theta.p

    for it in range(config.max_iter):
        n_iter = it + 1
        try:
            theta_em = m_step(theta, stats, config)
        except DegenerateComponentError as exc:
            if reseeds_left > 0:
                reseeds_left -= 1
                theta = _reseed_component(theta, exc.series, exc.component, rng)
                try:
                    stats, ll = e_step(theta, obs, config)
                except SvarError as exc2:
                    message = f"E-step failed after reseed: {exc2}"
                    break
                detached = True
                continue
            message = str(exc)
            break
        except SvarError as exc:
            message = f"M-step failed: {exc}"
            break

        slack = config.monotone_slack * max(1.0, abs(ll))
        proposal = _extrapolate(theta, theta_em, eta) if eta > 1.0 else theta_em
        estep_error = None
        try:
            stats_new, ll_new = e_step(proposal, obs, config)
            ok = ll_new >= ll - slack
        except SvarError as exc:
            ok = False
            estep_error = exc
        if ok:
            theta, stats, ll = proposal, stats_new, ll_new
            eta *= config.eta_growth
        else:
            # plain EM step cannot decrease the likelihood
            eta = 1.0
            if proposal is theta_em:
                message = (
                    f"E-step failed on EM step: {estep_error}"
                    if estep_error is not None
                    else "plain EM step decreased the log-likelihood (numerical trouble)"
                )
                break
            try:
                stats_new, ll_new = e_step(theta_em, obs, config)
            except SvarError as exc:
                message = f"E-step failed on EM step: {exc}"
                break
            if ll_new < ll - slack:
                message = "plain EM step decreased the log-likelihood (numerical trouble)"
                break
            theta, stats, ll = theta_em, stats_new, ll_new
            eta = config.eta_growth

        prev_accepted = trace[-1]
        if not detached or ll >= prev_accepted - config.monotone_slack * max(
            1.0, abs(prev_accepted)
        ):
            detached = False
            trace.append(ll)
            theta_best, ll_best = theta, ll
            rel = abs(trace[-1] - prev_accepted) / max(1.0, abs(prev_accepted))
            if rel < config.tol:
                converged = True
                break

    return FitResult(
        theta=theta_best,
        loglik=ll_best,
        trace=trace,
        converged=converged,
        n_iter=n_iter,
        failed=False,
        message=message,
        wall_time=time.perf_counter() - t_start,
    )


def _anchor_pairs(obs: ObservationSet) -> tuple[np.ndarray, np.ndarray, int]:
    """Consecutive anchor values at the most common spacing, for the OLS init."""
    anchors = [b.t0 for b in obs.blocks] + [obs.blocks[-1].t1]
    values = [b.x0 for b in obs.blocks] + [obs.blocks[-1].values[-1]]
    anchors = np.array(anchors)
    spacings = np.diff(anchors)
    d_star = int(np.bincount(spacings).argmax())
    x_prev, x_next = [], []
    for i, d in enumerate(spacings):
        if d == d_star:
            x_prev.append(values[i])
            x_next.append(values[i + 1])
    return np.array(x_prev), np.array(x_next), d_star


def draw_init(obs: ObservationSet, config: EmConfig, rng: np.random.Generator) -> Theta:
    """One random restart point.

    A starts from the OLS anchor-to-anchor estimate of A^{d} (d = anchor
    spacing), brought back to lag one by a real matrix root, then jittered
    and projected to spectral radius <= 0.98.  W = I + noise (respecting the
    structure), mixture means ~ N(0, 0.5^2) centered per series, uniform
    weights, variances: component 1 pinned at 1, the rest log-uniform in
    [0.04, 1].
    """
    p = obs.p
    x_prev, x_next, d_star = _anchor_pairs(obs)
    A0 = np.zeros((p, p))
    if x_prev.shape[0] >= p:
        M, *_ = np.linalg.lstsq(x_prev, x_next, rcond=None)
        M = M.T
        if d_star > 1:
            try:
                root = scipy.linalg.fractional_matrix_power(M, 1.0 / d_star)
                if np.all(np.isfinite(root)):
                    A0 = np.real(root)
            except (ValueError, scipy.linalg.LinAlgError):
                A0 = np.zeros((p, p))
        else:
            A0 = M
    A = A0 + 0.2 * rng.standard_normal((p, p))
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho > 0.98:
        A *= 0.98 / rho

    free_mask = w_support(config.structure, p)
    if free_mask is None:
        W = np.eye(p)
    else:
        W = np.eye(p) + 0.1 * rng.standard_normal((p, p))
        W[~free_mask] = 0.0

    shocks = []
    for _ in range(p):
        m = config.m
        if m == 1:
            shocks.append(MixtureSpec(weights=[1.0], means=[0.0], variances=[1.0]))
            continue
        means = 0.5 * rng.standard_normal(m)
        means -= means.mean()
        variances = np.ones(m)
        variances[1:] = np.exp(rng.uniform(np.log(0.04), 0.0, size=m - 1))
        shocks.append(
            MixtureSpec(weights=np.full(m, 1.0 / m), means=means, variances=variances)
        )
    return Theta(A=A, W=W, shocks=tuple(shocks))


def _run_restart(args) -> tuple[int, FitResult]:
    obs, config, r = args
    rng = np.random.default_rng([config.seed, r])
    init = draw_init(obs, config, rng)
    try:
        res = em_fit(init, obs, config, rng=rng)
    except SvarError as exc:
        res = FitResult(
            theta=None,
            loglik=-np.inf,
            trace=[],
            converged=False,
            n_iter=0,
            failed=True,
            message=str(exc),
        )
    return r, res


def multi_start_fit(
    obs: ObservationSet,
    config: EmConfig,
    extra_inits: list[Theta] | None = None,
) -> FitResult:
    """Best-of-restarts EM.  Restart r uses the RNG stream (seed, r).

    ``extra_inits`` (e.g. warm starts from a nested model's solution) are run
    after the random restarts, with indices continuing past restarts-1.
    Deterministic for a fixed config regardless of thread count.
    """
    t_start = time.perf_counter()
    jobs = [(obs, config, r) for r in range(config.restarts)]
    results: list[tuple[int, FitResult]] = []
    if config.threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(j) for j in jobs]

    if extra_inits:
        base = config.restarts
        for k, init in enumerate(extra_inits):
            rng = np.random.default_rng([config.seed, base + k])
            try:
                res = em_fit(init, obs, config, rng=rng)
            except SvarError as exc:
                res = FitResult(
                    theta=None,
                    loglik=-np.inf,
                    trace=[],
                    converged=False,
                    n_iter=0,
                    failed=True,
                    message=str(exc),
                )
            results.append((base + k, res))

    summaries = tuple(
        RestartSummary(
            restart_index=r,
            loglik=res.loglik,
            n_iter=res.n_iter,
            converged=res.converged,
            failed=res.failed,
            message=res.message,
        )
        for r, res in results
    )
    best_r, best = None, None
    for r, res in results:
        if res.failed or res.theta is None:
            continue
        if best is None or res.loglik > best.loglik:
            best_r, best = r, res
    if best is None:
        raise NumericalError("all restarts failed")
    return FitResult(
        theta=best.theta,
        loglik=best.loglik,
        trace=best.trace,
        converged=best.converged,
        n_iter=best.n_iter,
        failed=False,
        message=best.message,
        restart_index=best_r,
        restarts=summaries,
        wall_time=time.perf_counter() - t_start,
    )
