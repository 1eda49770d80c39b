"""BIC model selection over instantaneous-structure / mixture-size variants.

Each candidate fixes a structure for C (free, identity, or a zero pattern),
a mixture size m, and a subsampling factor k under which the data record is
interpreted.  Candidates are fitted by multi-start EM, warm-started from the
solutions of any nested candidates already fitted, and ranked by BIC.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .em import EmConfig, FitResult, MixtureSpec, Theta, multi_start_fit, w_support
from .errors import DimensionError, NumericalError
from .sampling import ObservationSet, observation_set_from_record

__all__ = [
    "ModelVariant",
    "ScoredModel",
    "count_params",
    "bic",
    "select",
    "format_table",
]


@dataclass(frozen=True)
class ModelVariant:
    """One selection candidate: C structure, mixture size, sampling factor."""

    name: str
    structure: object = "free"  # 'free' | 'identity' | boolean mask (nested tuples)
    m: int = 2
    k: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not isinstance(self.structure, str):
            # freeze the mask so the variant stays hashable
            mask = np.asarray(self.structure, dtype=bool)
            object.__setattr__(
                self, "structure", tuple(tuple(bool(v) for v in row) for row in mask)
            )

    def structure_mask(self, p: int) -> np.ndarray | None:
        """Free-entry mask of C (and W), or None for the identity constraint."""
        if self.structure == "free":
            return np.ones((p, p), dtype=bool)
        if self.structure == "identity":
            return None
        mask = np.asarray(self.structure, dtype=bool)
        if mask.shape != (p, p):
            raise DimensionError(f"variant {self.name}: mask must be {p}x{p}")
        return mask

    def to_dict(self) -> dict:
        s = self.structure
        if not isinstance(s, str):
            s = [[bool(v) for v in row] for row in s]
        return {"name": self.name, "structure": s, "m": self.m, "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelVariant":
        return cls(
            name=d["name"],
            structure=d.get("structure", "free"),
            m=int(d.get("m", 2)),
            k=int(d.get("k", 1)),
        )


@dataclass
class ScoredModel:
    variant: ModelVariant
    fit: FitResult
    loglik: float
    n_params: int
    n_obs: int
    bic: float

    def to_dict(self, include_timings: bool = False) -> dict:
        return {
            "variant": self.variant.to_dict(),
            "loglik": self.loglik,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "bic": self.bic,
            "fit": self.fit.to_dict(include_timings=include_timings),
        }


def count_params(variant: ModelVariant, p: int) -> int:
    """Free parameters: p^2 for A, the free entries of C, and per-series
    mixture parameters (m-1 weights, m means, m-1 variances; none for m=1)."""
    mask = variant.structure_mask(p)
    c_free = 0 if mask is None else int(mask.sum())
    mix = 0 if variant.m == 1 else (variant.m - 1) + variant.m + (variant.m - 1)
    return p * p + c_free + p * mix


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    return -2.0 * loglik + n_params * np.log(n_obs)


def _is_nested(inner: ModelVariant, outer: ModelVariant, p: int) -> bool:
    """inner's parameter set is a subset of outer's (same k only)."""
    if inner.k != outer.k or inner.m > outer.m:
        return False
    mi = inner.structure_mask(p)
    mo = outer.structure_mask(p)
    if mo is None:
        return mi is None
    if mi is None:
        return True  # identity sits inside any structure with a full diagonal
    return bool(np.all(mo | ~mi))


def _expand_theta(theta: Theta, variant: ModelVariant, p: int) -> Theta:
    """Lift a nested solution into the outer variant's parameter space.

    W carries over unchanged (its support fits inside the wider mask).  Extra
    mixture components enter with small weight, deterministic offset means,
    and mid-range variances so EM can move them where the data wants.
    """
    shocks = []
    for spec in theta.shocks:
        if spec.m >= variant.m:
            shocks.append(spec)
            continue
        extra = variant.m - spec.m
        w = np.concatenate([spec.weights, np.full(extra, 0.1)])
        w /= w.sum()
        add_means = np.array([0.5 * (-1.0) ** i for i in range(extra)])
        mu = np.concatenate([spec.means, add_means])
        var = np.concatenate([spec.variances, np.full(extra, 0.25)])
        shocks.append(MixtureSpec(weights=w, means=mu, variances=var))
    return Theta(A=theta.A, W=theta.W, shocks=tuple(shocks))


def select(
    obs: ObservationSet,
    variants: list[ModelVariant],
    config: EmConfig,
) -> list[ScoredModel]:
    """Fit every variant and rank by BIC (ascending).

    Ties break toward fewer parameters, then earlier position in ``variants``.
    Variants with k > 1 reinterpret the record as subsampled from a finer
    process; the observed scalar count n is the same for every k, so BIC
    values are comparable across the whole list.
    """
    if not variants:
        raise ValueError("no variants to select among")
    p = obs.p
    record = obs.record
    scored: list[ScoredModel] = []
    solutions: list[tuple[ModelVariant, Theta]] = []
    for idx, variant in enumerate(variants):
        obs_v = obs if variant.k == 1 else observation_set_from_record(record, k=variant.k)
        structure = variant.structure
        if not isinstance(structure, str):
            structure = np.asarray(structure, dtype=bool)
        w_support(structure, p)  # validate early, before any fitting
        cfg = replace(config, structure=structure, m=variant.m)
        warm = [
            _expand_theta(th, variant, p)
            for prior, th in solutions
            if _is_nested(prior, variant, p)
        ]
        fit = multi_start_fit(obs_v, cfg, extra_inits=warm)
        n_obs = obs_v.n_loglik_scalars
        d = count_params(variant, p)
        scored.append(
            ScoredModel(
                variant=variant,
                fit=fit,
                loglik=fit.loglik,
                n_params=d,
                n_obs=n_obs,
                bic=bic(fit.loglik, d, n_obs),
            )
        )
        if fit.theta is not None:
            solutions.append((variant, fit.theta))
    order = {id(v): i for i, v in enumerate(variants)}
    scored.sort(key=lambda s: (s.bic, s.n_params, order[id(s.variant)]))
    return scored


def format_table(scored: list[ScoredModel]) -> str:
    """Plain-text ranking table, best candidate first."""
    header = f"{'rank':>4}  {'variant':<20} {'k':>2} {'m':>2} {'params':>6} {'loglik':>14} {'BIC':>14}"
    lines = [header, "-" * len(header)]
    for rank, s in enumerate(scored, start=1):
        lines.append(
            f"{rank:>4}  {s.variant.name:<20} {s.variant.k:>2} {s.variant.m:>2} "
            f"{s.n_params:>6} {s.loglik:>14.4f} {s.bic:>14.4f}"
        )
    return "\n".join(lines)
