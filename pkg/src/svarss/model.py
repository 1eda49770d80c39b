"""Core model types: SVAR(1) with independent Gaussian-mixture shocks.

The process is x_t = A x_{t-1} + C e_t where each shock series e_tj follows
its own univariate Gaussian mixture.  Time indices are 1-based in interfaces
that talk about observation times; arrays are 0-based as usual.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError

if TYPE_CHECKING:
    from .sampling import SamplingScheme

__all__ = [
    "MixtureSpec",
    "SvarModel",
    "Trajectory",
    "StackedRepresentation",
    "ValidationReport",
    "validate_model",
    "simulate",
    "matrix_power",
    "build_subsampled_repr",
    "build_mixed_freq_repr",
    "subsampled_error_covariance",
    "load_model",
    "save_model",
]

# Spectral radii within this distance of 1 are reported as "boundary" rather
# than being classified on numerical noise.
RHO_BOUNDARY_TOL = 1e-10


@dataclass
class MixtureSpec:
    """Univariate Gaussian mixture: weights, component means and variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if not (self.weights.shape == self.means.shape == self.variances.shape):
            raise DimensionError("weights, means and variances must have equal length")
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise DimensionError("mixture parameters must be non-empty 1-d arrays")
        if np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError(f"mixture weights must sum to 1, got {self.weights.sum()!r}")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def variance(self) -> float:
        mu = self.mean
        return float(self.weights @ (self.variances + (self.means - mu) ** 2))

    @property
    def third_central_moment(self) -> float:
        # Gaussian components are symmetric about their own mean, so only the
        # mean offsets contribute.
        d = self.means - self.mean
        return float(self.weights @ (d**3 + 3.0 * d * self.variances))

    def is_asymmetric(self, tol: float = 1e-8) -> bool:
        scale = max(self.variance, 1e-300) ** 1.5
        return abs(self.third_central_moment) > tol * scale

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(d["weights"], d["means"], d["variances"])


@dataclass
class SvarModel:
    """SVAR(1) parameters: transition A, mixing C, and one MixtureSpec per series."""

    A: np.ndarray
    C: np.ndarray
    shocks: tuple[MixtureSpec, ...]

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.shocks = tuple(self.shocks)
        p = self.A.shape[0]
        if self.A.shape != (p, p) or self.A.ndim != 2:
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.C.shape != (p, p):
            raise DimensionError(f"C must match A ({p}x{p}), got {self.C.shape}")
        if len(self.shocks) != p:
            raise DimensionError(f"need {p} shock mixtures, got {len(self.shocks)}")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def shock_variances(self) -> np.ndarray:
        """Actual per-series shock variances (the diagonal of Lambda)."""
        return np.array([s.variance for s in self.shocks])

    def shock_means(self) -> np.ndarray:
        return np.array([s.mean for s in self.shocks])

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "shocks": [s.to_dict() for s in self.shocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvarModel":
        model = cls(
            np.asarray(d["A"], dtype=float),
            np.asarray(d["C"], dtype=float),
            tuple(MixtureSpec.from_dict(s) for s in d["shocks"]),
        )
        if "p" in d and int(d["p"]) != model.p:
            raise DimensionError(f"declared p={d['p']} but matrices are {model.p}x{model.p}")
        return model


@dataclass
class Trajectory:
    """A simulated path: states X, shocks E and mixture assignments Z.

    All arrays are T x p.  Z holds 0-based component indices.  The recursion
    X[t] = A X[t-1] + C E[t] holds for every t >= 1 (row 0 has no predecessor
    inside the arrays, so E[0] and Z[0] are recorded but unused).
    """

    X: np.ndarray
    E: np.ndarray
    Z: np.ndarray

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class StackedRepresentation:
    """Anchor-to-anchor form x_t = F xtilde_{t-1} + L etilde_t.

    F and L are p x (k_star * p).  Block q (0-based) of F multiplies the
    masked state I(q+1) x_{t-q-1}; block q of L multiplies the shock e_{t-q}.
    """

    F: np.ndarray
    L: np.ndarray
    k_star: int

    def f_block(self, q: int) -> np.ndarray:
        p = self.F.shape[0]
        return self.F[:, q * p : (q + 1) * p]

    def l_block(self, q: int) -> np.ndarray:
        p = self.L.shape[0]
        return self.L[:, q * p : (q + 1) * p]


@dataclass
class ValidationReport:
    spectral_radius: float
    stationary: bool
    boundary: bool
    c_invertible: bool
    c_condition: float
    mixture_means: np.ndarray
    mixture_variances: np.ndarray
    asymmetric: np.ndarray
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems


def validate_model(model: SvarModel) -> ValidationReport:
    """Check stationarity, invertibility of C and shock moment structure."""
    rho = float(np.max(np.abs(np.linalg.eigvals(model.A))))
    boundary = abs(rho - 1.0) <= RHO_BOUNDARY_TOL
    stationary = rho < 1.0 - RHO_BOUNDARY_TOL
    problems: list[str] = []
    if not stationary and not boundary:
        problems.append(f"A is not stationary (spectral radius {rho:.6g})")

    cond = float(np.linalg.cond(model.C))
    c_invertible = np.isfinite(cond) and cond < 1e12
    if not c_invertible:
        problems.append("C is singular or badly conditioned")

    means = model.shock_means()
    variances = model.shock_variances()
    asym = np.array([s.is_asymmetric() for s in model.shocks])
    return ValidationReport(
        spectral_radius=rho,
        stationary=stationary,
        boundary=boundary,
        c_invertible=c_invertible,
        c_condition=cond,
        mixture_means=means,
        mixture_variances=variances,
        asymmetric=asym,
        problems=problems,
    )


def simulate(
    model: SvarModel,
    T: int,
    x0: np.ndarray | None = None,
    seed: int | np.random.Generator = 0,
    burn_in: int = 200,
) -> Trajectory:
    """Draw a length-T trajectory.

    With ``x0`` the path starts exactly there (X[0] = x0, no burn-in).
    Without it the model must be stationary; a ``burn_in``-step prefix
    started from the origin is simulated and discarded.

    Draw order is fixed for reproducibility: for each series in order, first
    all component indices, then all Gaussian innovations.
    """
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = model.p
    if x0 is None:
        report = validate_model(model)
        if not (report.stationary or report.boundary):
            raise ValueError(
                "model is not stationary; pass x0 to simulate an explosive path"
            )
        burn = burn_in
        prev = np.zeros(p)
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (p,):
            raise DimensionError(f"x0 must have shape ({p},), got {x0.shape}")
        burn = 0
        prev = x0

    total = T + burn
    Z = np.empty((total, p), dtype=np.int64)
    E = np.empty((total, p))
    for j, spec in enumerate(model.shocks):
        Z[:, j] = rng.choice(spec.m, size=total, p=spec.weights)
        eps = rng.standard_normal(total)
        E[:, j] = spec.means[Z[:, j]] + np.sqrt(spec.variances[Z[:, j]]) * eps

    X = np.empty((total, p))
    CE = E @ model.C.T
    if x0 is not None:
        X[0] = x0
        start = 1
    else:
        start = 0
    for t in range(start, total):
        prev = model.A @ prev + CE[t]
        X[t] = prev
    return Trajectory(X=X[burn:], E=E[burn:], Z=Z[burn:])


def matrix_power(A: np.ndarray, k: int) -> np.ndarray:
    """A^k by repeated left-to-right multiplication (k >= 0)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got {A.shape}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    out = np.eye(A.shape[0])
    for _ in range(k):
        out = out @ A
    return out


def build_subsampled_repr(model: SvarModel, k: int) -> StackedRepresentation:
    """Stacked representation for uniform subsampling at rate k.

    F has a single nonzero block A^k (rightmost, multiplying x_{t-k});
    L = (C, AC, ..., A^{k-1} C).
    """
    if k <= 0:
        raise ValueError(f"k must be a positive integer, got {k}")
    p = model.p
    F = np.zeros((p, k * p))
    F[:, (k - 1) * p :] = matrix_power(model.A, k)
    L = np.empty((p, k * p))
    L[:, :p] = model.C
    M = model.A.copy()
    for q in range(1, k):
        L[:, q * p : (q + 1) * p] = M @ model.C
        M = M @ model.A
    return StackedRepresentation(F=F, L=L, k_star=k)


def build_mixed_freq_repr(
    model: SvarModel, scheme: "SamplingScheme", t_anchor: int | None = None
) -> StackedRepresentation:
    """Stacked representation between anchors of a mixed-frequency scheme.

    Unrolls the recursion over one anchor-to-anchor span of length
    k_star = lcm(rates), masking out the series observed at intermediate
    times: with I(q) selecting the series observed at t_anchor - q,

        F block q-1 = M_q I(q),     M_1 = A,  M_{q+1} = M_q (I - I(q)) A
        L block 0   = C,            L block q = M_q (I - I(q)) C

    so that x_t = F xtilde_{t-1} + L etilde_t holds exactly, with xtilde
    stacking (I(1) x_{t-1}, ..., I(k_star) x_{t-k_star}) and etilde stacking
    (e_t, e_{t-1}, ..., e_{t-k_star+1}).
    """
    p = model.p
    k_star = scheme.k_star()
    if t_anchor is None:
        t_anchor = k_star + 1
    if t_anchor - k_star < 1:
        raise ValueError(f"t_anchor must be at least k_star + 1 = {k_star + 1}")
    obs_anchor = scheme.observed_at(t_anchor)
    if not np.all(obs_anchor):
        raise ValueError(f"t={t_anchor} is not a fully observed anchor")

    F = np.zeros((p, k_star * p))
    L = np.zeros((p, k_star * p))
    L[:, :p] = model.C
    M = model.A.copy()
    for q in range(1, k_star + 1):
        obs = scheme.observed_at(t_anchor - q).astype(float)
        F[:, (q - 1) * p : q * p] = M * obs[np.newaxis, :]
        if q < k_star:
            hidden = 1.0 - obs
            L[:, q * p : (q + 1) * p] = M @ (model.C * hidden[:, np.newaxis])
            M = M @ (model.A * hidden[:, np.newaxis])
    return StackedRepresentation(F=F, L=L, k_star=k_star)


def subsampled_error_covariance(model: SvarModel, k: int) -> np.ndarray:
    """Covariance of the stacked error L etilde: sum_q A^q C Lambda C' (A^q)'.

    Lambda holds the actual per-series mixture variances.
    """
    rep = build_subsampled_repr(model, k)
    lam = model.shock_variances()
    out = np.zeros((model.p, model.p))
    for q in range(k):
        B = rep.l_block(q)
        out += (B * lam[np.newaxis, :]) @ B.T
    return out


def load_model(path: str) -> SvarModel:
    with open(path, "r", encoding="utf-8") as fh:
        return SvarModel.from_dict(json.load(fh))


def save_model(model: SvarModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
