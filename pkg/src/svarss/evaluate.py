"""Estimate-versus-truth comparison modulo the identifiability class.

C is recoverable only up to signed column permutations (the shock labels
and signs carry no information), so estimates are aligned to the truth by
exhaustive search over that group before errors are computed.  Both sides
are first rescaled so every shock has unit total variance; the scale split
between C and the mixture is a gauge choice, and errors are only meaningful
once both models use the same one.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DimensionError
from .model import SvarModel

__all__ = [
    "SignedPermutation",
    "RunEntry",
    "RunSummary",
    "align",
    "sign_align_A",
    "unit_variance_gauge",
    "param_errors",
    "summarize",
    "write_csv",
]

ALIGN_MAX_P = 8
HIST_BINS = 30


@dataclass(frozen=True)
class SignedPermutation:
    """Column relabeling: output column j is signs[j] times input column perm[j]."""

    perm: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        p = len(self.perm)
        if sorted(self.perm) != list(range(p)):
            raise ValueError(f"perm must be a bijection of 0..{p - 1}")
        if len(self.signs) != p or any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +1 or -1, one per column")

    @property
    def p(self) -> int:
        return len(self.perm)

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        return M[:, list(self.perm)] * np.array(self.signs, dtype=float)

    def matrix(self) -> np.ndarray:
        """P with apply(M) == M @ P."""
        P = np.zeros((self.p, self.p))
        for j, (src, s) in enumerate(zip(self.perm, self.signs)):
            P[src, j] = s
        return P

    @classmethod
    def identity(cls, p: int) -> "SignedPermutation":
        return cls(perm=tuple(range(p)), signs=(1,) * p)


def align(C_hat: np.ndarray, C_true: np.ndarray) -> tuple[SignedPermutation, np.ndarray]:
    """Best signed column permutation of C_hat against C_true (Frobenius).

    Exhaustive over all p! 2^p candidates.  Ties in the error are broken by
    the lexicographically smallest aligned matrix, which makes the returned
    alignment a function of the matrix *content* only; relabeling the input
    columns can therefore never change the output.
    """
    C_hat = np.asarray(C_hat, dtype=float)
    C_true = np.asarray(C_true, dtype=float)
    if C_hat.shape != C_true.shape or C_hat.ndim != 2 or C_hat.shape[0] != C_hat.shape[1]:
        raise DimensionError("align needs two square matrices of equal size")
    p = C_hat.shape[0]
    if p > ALIGN_MAX_P:
        raise CapacityError(
            f"exhaustive alignment over {math.factorial(p) * 2**p} candidates "
            f"is only supported for p <= {ALIGN_MAX_P}",
            required=math.factorial(p) * 2**p,
        )
    best_err = np.inf
    best_key: tuple | None = None
    best: tuple[SignedPermutation, np.ndarray] | None = None
    for perm in itertools.permutations(range(p)):
        base = C_hat[:, perm]
        for signs in itertools.product((1, -1), repeat=p):
            cand = base * np.array(signs, dtype=float)
            err = float(((cand - C_true) ** 2).sum())
            key = tuple(cand.ravel())
            if err < best_err or (err == best_err and key < best_key):
                best_err = err
                best_key = key
                best = (SignedPermutation(perm=perm, signs=signs), cand)
    assert best is not None
    return best


def sign_align_A(A_hat: np.ndarray, A_true: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best column sign matrix for A (symmetric-shock ambiguity only).

    Searches the 2^p sign vectors; returns (signs, A_hat with signed columns).
    Same content-based tie-break as align.
    """
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    p = A_hat.shape[0]
    if p > ALIGN_MAX_P:
        raise CapacityError(f"sign search supported for p <= {ALIGN_MAX_P}", required=2**p)
    best_err = np.inf
    best_key: tuple | None = None
    best: tuple[np.ndarray, np.ndarray] | None = None
    for signs in itertools.product((1, -1), repeat=p):
        cand = A_hat * np.array(signs, dtype=float)
        err = float(((cand - A_true) ** 2).sum())
        key = tuple(cand.ravel())
        if err < best_err or (err == best_err and key < best_key):
            best_err = err
            best_key = key
            best = (np.array(signs), cand)
    assert best is not None
    return best


def unit_variance_gauge(model: SvarModel) -> tuple[np.ndarray, np.ndarray]:
    """(A, C) with the shock scale moved entirely into C.

    Column j of C is multiplied by shock j's total mixture standard
    deviation, after which every shock has unit variance.  A is unaffected.
    """
    stds = np.sqrt(np.array([s.variance for s in model.shocks]))
    return model.A.copy(), model.C * stds[np.newaxis, :]


@dataclass
class RunEntry:
    """One fit compared against the truth (both in the unit-variance gauge)."""

    A_raw: np.ndarray
    C_raw: np.ndarray
    A_aligned: np.ndarray
    C_aligned: np.ndarray
    A_error: np.ndarray
    C_error: np.ndarray
    alignment: SignedPermutation

    @property
    def median_abs_error(self) -> float:
        return float(np.median(np.concatenate([self.A_error.ravel(), self.C_error.ravel()])))


def param_errors(fit, truth: SvarModel, symmetric: bool = False) -> RunEntry:
    """Per-entry absolute errors of one fitted model against the truth.

    ``fit`` may be a FitResult, a Theta, or an SvarModel.  C is aligned over
    signed column permutations; A is compared directly (it is unique when
    the shocks are asymmetric) unless ``symmetric`` is set, in which case
    its columns get the best sign flip.
    """
    model = _coerce_model(fit)
    if model.p != truth.p:
        raise DimensionError(f"fit has p={model.p}, truth has p={truth.p}")
    A_hat, C_hat = unit_variance_gauge(model)
    A_true, C_true = unit_variance_gauge(truth)
    sp, C_aligned = align(C_hat, C_true)
    if symmetric:
        _, A_aligned = sign_align_A(A_hat, A_true)
    else:
        A_aligned = A_hat
    return RunEntry(
        A_raw=A_hat,
        C_raw=C_hat,
        A_aligned=A_aligned,
        C_aligned=C_aligned,
        A_error=np.abs(A_aligned - A_true),
        C_error=np.abs(C_aligned - C_true),
        alignment=sp,
    )


def _coerce_model(fit) -> SvarModel:
    if isinstance(fit, SvarModel):
        return fit
    theta = getattr(fit, "theta", fit)
    to_model = getattr(theta, "to_model", None)
    if to_model is None:
        raise TypeError(f"cannot interpret {type(fit).__name__} as a fitted model")
    return to_model()


@dataclass
class RunSummary:
    """Aggregate of aligned estimates across runs, plus experiment metadata."""

    A_true: np.ndarray
    C_true: np.ndarray
    entries: tuple[RunEntry, ...]
    mean_abs_error_A: np.ndarray
    mean_abs_error_C: np.ndarray
    se_A: np.ndarray
    se_C: np.ndarray
    mean_abs_error: float
    median_abs_error: float
    hist_A: np.ndarray  # (p, p, bins)
    hist_C: np.ndarray
    hist_edges_A: np.ndarray  # (p, p, bins + 1)
    hist_edges_C: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "A_true": self.A_true.tolist(),
            "C_true": self.C_true.tolist(),
            "mean_abs_error_A": self.mean_abs_error_A.tolist(),
            "mean_abs_error_C": self.mean_abs_error_C.tolist(),
            "se_A": self.se_A.tolist(),
            "se_C": self.se_C.tolist(),
            "mean_abs_error": self.mean_abs_error,
            "median_abs_error": self.median_abs_error,
            "metadata": dict(self.metadata),
        }


def summarize(
    entries: list[RunEntry],
    truth: SvarModel,
    metadata: dict | None = None,
    bins: int = HIST_BINS,
) -> RunSummary:
    """Mean/SE error maps and per-entry histograms over a batch of runs.

    Histograms cover [truth - 1, truth + 1] per entry with ``bins`` equal
    bins, over the aligned estimates.  The SE of a single run is 0.
    """
    if not entries:
        raise ValueError("need at least one run")
    A_true, C_true = unit_variance_gauge(truth)
    p = A_true.shape[0]
    R = len(entries)
    A_err = np.stack([e.A_error for e in entries])
    C_err = np.stack([e.C_error for e in entries])
    A_est = np.stack([e.A_aligned for e in entries])
    C_est = np.stack([e.C_aligned for e in entries])
    se_A = A_err.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros((p, p))
    se_C = C_err.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros((p, p))
    hist_A = np.zeros((p, p, bins))
    hist_C = np.zeros((p, p, bins))
    edges_A = np.zeros((p, p, bins + 1))
    edges_C = np.zeros((p, p, bins + 1))
    for r in range(p):
        for c in range(p):
            hist_A[r, c], edges_A[r, c] = np.histogram(
                A_est[:, r, c], bins=bins, range=(A_true[r, c] - 1.0, A_true[r, c] + 1.0)
            )
            hist_C[r, c], edges_C[r, c] = np.histogram(
                C_est[:, r, c], bins=bins, range=(C_true[r, c] - 1.0, C_true[r, c] + 1.0)
            )
    return RunSummary(
        A_true=A_true,
        C_true=C_true,
        entries=tuple(entries),
        mean_abs_error_A=A_err.mean(axis=0),
        mean_abs_error_C=C_err.mean(axis=0),
        se_A=se_A,
        se_C=se_C,
        mean_abs_error=float(np.concatenate([A_err.ravel(), C_err.ravel()]).mean()),
        median_abs_error=float(np.median(np.concatenate([A_err.ravel(), C_err.ravel()]))),
        hist_A=hist_A,
        hist_C=hist_C,
        hist_edges_A=edges_A,
        hist_edges_C=edges_C,
        metadata=dict(metadata or {}),
    )


def write_csv(summary: RunSummary, path) -> None:
    """Plot-ready long format: one row per (run, matrix, entry)."""
    lines = ["run,matrix,row,col,truth,raw,aligned,abs_error"]
    for run, e in enumerate(summary.entries):
        for name, truth, raw, aligned, err in (
            ("A", summary.A_true, e.A_raw, e.A_aligned, e.A_error),
            ("C", summary.C_true, e.C_raw, e.C_aligned, e.C_error),
        ):
            p = truth.shape[0]
            for r in range(p):
                for c in range(p):
                    lines.append(
                        f"{run},{name},{r + 1},{c + 1},{float(truth[r, c])!r},"
                        f"{float(raw[r, c])!r},{float(aligned[r, c])!r},{float(err[r, c])!r}"
                    )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
