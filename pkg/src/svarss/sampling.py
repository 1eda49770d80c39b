"""Observation schemes: subsampling, mixed frequency, explicit masks.

A scheme says which series are seen at which 1-based times.  Rate-based
schemes observe series j at t = 1, 1+k_j, 1+2k_j, ...; an explicit mask
scheme carries a boolean T x p array.  Times where every series is observed
are anchors; the data between consecutive anchors forms a Block, the unit
the estimation code works on.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SchemeError
from .model import Trajectory

__all__ = [
    "SamplingScheme",
    "Block",
    "ObservationSet",
    "uniform_scheme",
    "mixed_scheme",
    "scheme_from_mask",
    "apply_scheme",
    "observation_set_from_record",
    "reinterpret",
    "write_csv",
    "load_csv",
]


@dataclass
class SamplingScheme:
    """Which series are observed when.  Exactly one of rates/mask is set."""

    p: int
    rates: tuple[int, ...] | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if (self.rates is None) == (self.mask is None):
            raise SchemeError("provide exactly one of rates or mask")
        if self.rates is not None:
            self.rates = tuple(int(k) for k in self.rates)
            if len(self.rates) != self.p:
                raise DimensionError(f"need {self.p} rates, got {len(self.rates)}")
            if any(k < 1 for k in self.rates):
                raise SchemeError(f"rates must be >= 1, got {self.rates}")
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.ndim != 2 or self.mask.shape[1] != self.p:
                raise DimensionError(f"mask must be T x {self.p}, got {self.mask.shape}")

    @property
    def kind(self) -> str:
        """Coarse taxonomy: full, A (uniform), B (one series at full rate),
        C (commensurate rates with a common factor), D (other), mask."""
        if self.rates is None:
            return "mask"
        ks = self.rates
        if all(k == 1 for k in ks):
            return "full"
        if len(set(ks)) == 1:
            return "A"
        if min(ks) == 1:
            return "B"
        if math.gcd(*ks) > 1:
            return "C"
        return "D"

    def observed_at(self, t: int) -> np.ndarray:
        """Boolean vector of series observed at 1-based time t."""
        if t < 1:
            raise ValueError(f"times are 1-based, got t={t}")
        if self.rates is not None:
            return np.array([(t - 1) % k == 0 for k in self.rates])
        if t > self.mask.shape[0]:
            raise SchemeError(f"t={t} is outside the mask span {self.mask.shape[0]}")
        return self.mask[t - 1].copy()

    def observation_mask(self, T: int) -> np.ndarray:
        """T x p boolean matrix for times 1..T."""
        if self.rates is not None:
            t = np.arange(T)[:, np.newaxis]
            return (t % np.asarray(self.rates)[np.newaxis, :]) == 0
        if T > self.mask.shape[0]:
            raise SchemeError(f"mask covers {self.mask.shape[0]} times, need {T}")
        return self.mask[:T].copy()

    def observed_times(self, j: int, T: int) -> np.ndarray:
        """1-based times at which series j is observed within 1..T."""
        if not 0 <= j < self.p:
            raise ValueError(f"series index {j} out of range for p={self.p}")
        return np.flatnonzero(self.observation_mask(T)[:, j]) + 1

    def anchors(self, T: int) -> np.ndarray:
        """1-based fully observed times within 1..T."""
        return np.flatnonzero(self.observation_mask(T).all(axis=1)) + 1

    def k_star(self) -> int:
        """Anchor spacing lcm(rates); undefined for mask schemes."""
        if self.rates is None:
            raise SchemeError("k_star is only defined for rate-based schemes")
        return math.lcm(*self.rates)


def uniform_scheme(p: int, k: int) -> SamplingScheme:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return SamplingScheme(p=p, rates=(k,) * p)


def mixed_scheme(rates) -> SamplingScheme:
    rates = tuple(int(k) for k in rates)
    return SamplingScheme(p=len(rates), rates=rates)


def scheme_from_mask(mask) -> SamplingScheme:
    mask = np.asarray(mask, dtype=bool)
    return SamplingScheme(p=mask.shape[1], mask=mask)


@dataclass
class Block:
    """One anchor-to-anchor span of observations.

    ``t0`` and ``t1`` are 1-based fully observed times; ``observed[s]`` and
    ``values[s]`` give the observed series indices and their values at time
    t0 + s, for s = 0..t1-t0.
    """

    t0: int
    t1: int
    observed: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]

    @property
    def n_steps(self) -> int:
        return self.t1 - self.t0

    @property
    def x0(self) -> np.ndarray:
        return self.values[0]

    def n_observed(self, include_anchor: bool = False) -> int:
        start = 0 if include_anchor else 1
        return sum(len(o) for o in self.observed[start:])

    def pattern(self) -> tuple[tuple[int, ...], ...]:
        """Hashable signature of the interior observation pattern."""
        return tuple(tuple(int(i) for i in o) for o in self.observed[1:])


@dataclass
class ObservationSet:
    """Blocks plus the latent-scale record they came from.

    ``record`` is a T x p array with NaN at unobserved cells, aligned so row
    t-1 is time t.
    """

    blocks: tuple[Block, ...]
    p: int
    T: int
    scheme: SamplingScheme
    record: np.ndarray

    @property
    def n_transitions(self) -> int:
        """Latent transitions covered by blocks (the t count in likelihoods)."""
        return sum(b.n_steps for b in self.blocks)

    @property
    def n_loglik_scalars(self) -> int:
        """Observed scalars entering the conditional likelihood.

        Everything observed inside blocks except the first anchor, which is
        conditioned on.  Interior anchors are shared block boundaries and are
        counted once.
        """
        return sum(b.n_observed(include_anchor=False) for b in self.blocks)


def _blocks_from_record(record: np.ndarray) -> tuple[Block, ...]:
    obs_mask = ~np.isnan(record)
    anchor_rows = np.flatnonzero(obs_mask.all(axis=1))
    if anchor_rows.size == 0:
        raise SchemeError("no fully observed anchor in the record")
    if anchor_rows.size == 1:
        raise SchemeError("need at least two fully observed anchors to form a block")
    T = record.shape[0]
    dropped_head = int(obs_mask[: anchor_rows[0]].sum())
    dropped_tail = int(obs_mask[anchor_rows[-1] + 1 :].sum())
    if dropped_head:
        warnings.warn(
            f"{dropped_head} observed value(s) before the first anchor are unused",
            stacklevel=3,
        )
    if dropped_tail:
        warnings.warn(
            f"{dropped_tail} observed value(s) after the last anchor are unused",
            stacklevel=3,
        )
    blocks = []
    for a, b in zip(anchor_rows[:-1], anchor_rows[1:]):
        observed = []
        values = []
        for r in range(a, b + 1):
            idx = np.flatnonzero(obs_mask[r])
            observed.append(idx)
            values.append(record[r, idx])
        blocks.append(
            Block(t0=int(a) + 1, t1=int(b) + 1, observed=tuple(observed), values=tuple(values))
        )
    return tuple(blocks)


def apply_scheme(scheme: SamplingScheme, traj: Trajectory) -> ObservationSet:
    """Observe a trajectory through a scheme and decompose into blocks."""
    if scheme.p != traj.p:
        raise DimensionError(f"scheme has p={scheme.p}, trajectory has p={traj.p}")
    mask = scheme.observation_mask(traj.T)
    record = np.where(mask, traj.X, np.nan)
    return ObservationSet(
        blocks=_blocks_from_record(record),
        p=traj.p,
        T=traj.T,
        scheme=scheme,
        record=record,
    )


def observation_set_from_record(
    record: np.ndarray, k: int = 1, rates=None
) -> ObservationSet:
    """Build an ObservationSet from a (possibly holey) record.

    With ``k`` > 1 the record must be dense; its rows are then placed k
    latent steps apart (row r at latent time 1 + r*k), which is how one and
    the same observed record is re-read under different candidate rates.
    With ``rates`` the record is kept at its own scale and the mask must
    match the rate pattern.
    """
    record = np.asarray(record, dtype=float)
    if record.ndim != 2:
        raise DimensionError(f"record must be 2-d, got shape {record.shape}")
    p = record.shape[1]
    if rates is not None:
        scheme = mixed_scheme(rates)
        if len(scheme.rates) != p:
            raise DimensionError(f"need {p} rates, got {len(scheme.rates)}")
        expected = scheme.observation_mask(record.shape[0])
        actual = ~np.isnan(record)
        if not np.array_equal(expected, actual):
            raise SchemeError("record's missingness pattern does not match the rates")
        return ObservationSet(
            blocks=_blocks_from_record(record),
            p=p,
            T=record.shape[0],
            scheme=scheme,
            record=record,
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        has_nan = np.isnan(record).any()
        scheme = (
            scheme_from_mask(~np.isnan(record)) if has_nan else uniform_scheme(p, 1)
        )
        return ObservationSet(
            blocks=_blocks_from_record(record),
            p=p,
            T=record.shape[0],
            scheme=scheme,
            record=record,
        )
    if np.isnan(record).any():
        raise SchemeError("re-reading at k > 1 requires a dense record")
    T_lat = 1 + (record.shape[0] - 1) * k
    latent = np.full((T_lat, p), np.nan)
    latent[::k] = record
    return ObservationSet(
        blocks=_blocks_from_record(latent),
        p=p,
        T=T_lat,
        scheme=uniform_scheme(p, k),
        record=latent,
    )


def reinterpret(obs: ObservationSet, k: int) -> ObservationSet:
    """Re-read the observed values of ``obs`` with k latent steps per row."""
    dense = obs.record[~np.isnan(obs.record).any(axis=1)]
    if dense.shape[0] * obs.p != int((~np.isnan(obs.record)).sum()):
        raise SchemeError("re-reading at a new rate requires a dense record")
    return observation_set_from_record(dense, k=k)


def write_csv(record: np.ndarray, path: str) -> None:
    """Write a latent-scale record as CSV: header t,x1..xp, blanks for NaN."""
    record = np.asarray(record, dtype=float)
    p = record.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t," + ",".join(f"x{j + 1}" for j in range(p)) + "\n")
        for r in range(record.shape[0]):
            cells = [
                "" if np.isnan(v) else repr(float(v)) for v in record[r]
            ]
            fh.write(f"{r + 1}," + ",".join(cells) + "\n")


def load_csv(path: str) -> np.ndarray:
    """Read a record written by write_csv (or any t,x1..xp CSV).

    Rows may skip times; skipped times become fully missing rows so the
    returned array always starts at t=1.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "t":
            raise SchemeError(f"{path}: expected header 't,x1,...,xp'")
        p = len(header) - 1
        for j, name in enumerate(header[1:]):
            if name.strip() != f"x{j + 1}":
                raise SchemeError(f"{path}: column {j + 2} should be 'x{j + 1}', got {name!r}")
        rows: list[tuple[int, list[float]]] = []
        last_t = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 1:
                raise SchemeError(f"{path}:{line_no}: expected {p + 1} cells, got {len(row)}")
            t = int(row[0])
            if t <= last_t:
                raise SchemeError(f"{path}:{line_no}: t must be strictly increasing")
            vals = [float(c) if c.strip() else np.nan for c in row[1:]]
            rows.append((t, vals))
            last_t = t
    if not rows:
        raise SchemeError(f"{path}: no data rows")
    record = np.full((rows[-1][0], p), np.nan)
    for t, vals in rows:
        record[t - 1] = vals
    return record
