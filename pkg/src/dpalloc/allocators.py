"""Allocation rules that turn statistics into benefits, funds, or seats.

Each rule is a deterministic function of its input statistics. Run on true
counts it gives the lawful ground truth; run on a noisy release it gives
one trial's outcome. The rules never see privacy parameters.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    LengthMismatch,
    LengthZero,
    NonFiniteInput,
    ZeroTotalPopulation,
)
from .model import OutcomeVector, StatMatrix


class CoverageLabel(enum.Enum):
    COVERED = "Covered"
    NOT_COVERED = "NotCovered"

    @property
    def covered(self) -> bool:
        return self is CoverageLabel.COVERED


@dataclass(frozen=True)
class VraThresholds:
    """Cutoffs for the minority-language voting benefit determination.

    pct: limited-English-proficient share of voting-age citizens
    abs: absolute count of limited-English-proficient citizens
    illit: illiteracy rate among the limited-English-proficient
    """

    pct: float = 0.05
    abs: float = 10000.0
    illit: float = 0.0131


def _ratio_exceeds(num: float, den: float, threshold: float) -> bool:
    # A zero denominator makes the ratio condition false, never an error.
    return den > 0 and num / den > threshold


def vra_classify(vac: float, lep: float, lit: float, t: VraThresholds = VraThresholds()) -> CoverageLabel:
    """Coverage determination for one jurisdiction.

    Covered iff (lep/vac > t.pct or lep > t.abs) and lit/lep > t.illit.
    All comparisons are strict; callers clip noisy counts to zero first.
    """
    for name, v in (("vac", vac), ("lep", lep), ("lit", lit)):
        if not np.isfinite(v):
            raise NonFiniteInput(f"{name} is not finite: {v}")
    size_test = _ratio_exceeds(lep, vac, t.pct) or lep > t.abs
    illiteracy_test = _ratio_exceeds(lit, lep, t.illit)
    return CoverageLabel.COVERED if (size_test and illiteracy_test) else CoverageLabel.NOT_COVERED


def vra_classify_many(vac, lep, lit, t: VraThresholds = VraThresholds()) -> np.ndarray:
    """Vectorized coverage determination; returns a boolean array."""
    vac = np.asarray(vac, dtype=np.float64)
    lep = np.asarray(lep, dtype=np.float64)
    lit = np.asarray(lit, dtype=np.float64)
    if not (np.all(np.isfinite(vac)) and np.all(np.isfinite(lep)) and np.all(np.isfinite(lit))):
        raise NonFiniteInput("coverage inputs must be finite")
    # an overflowing ratio is +inf, which compares correctly against the cutoff
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pct_ok = np.where(vac > 0, lep / np.where(vac > 0, vac, 1.0) > t.pct, False)
        illit_ok = np.where(lep > 0, lit / np.where(lep > 0, lep, 1.0) > t.illit, False)
    return (pct_ok | (lep > t.abs)) & illit_ok


def vra_classify_matrix(m: StatMatrix, t: VraThresholds = VraThresholds()) -> OutcomeVector:
    labels = vra_classify_many(m.column("vac"), m.column("lep"), m.column("lit"), t)
    return OutcomeVector(m.assignees, labels, "label")


def title1_allocate(eli: np.ndarray, exp: np.ndarray, assignees=None) -> OutcomeVector:
    """Proportional funding shares weighted by per-pupil expenditure.

    fraction_a = exp_a * eli_a / sum_b exp_b * eli_b. The expenditure vector
    is public and is never noised; only eli carries noise. If every weighted
    count is zero the shares degenerate to a uniform split and the outcome
    is flagged.
    """
    eli = np.asarray(eli, dtype=np.float64)
    exp = np.asarray(exp, dtype=np.float64)
    if eli.shape != exp.shape or eli.ndim != 1:
        raise LengthMismatch(f"eli {eli.shape} and exp {exp.shape} must be equal-length vectors")
    if eli.size == 0:
        raise LengthZero("no assignees to allocate to")
    if not (np.all(np.isfinite(eli)) and np.all(np.isfinite(exp))):
        raise NonFiniteInput("allocation inputs must be finite")
    if assignees is None:
        assignees = tuple(str(i) for i in range(eli.size))
    weighted = exp * eli
    denom = weighted.sum()
    if denom == 0.0:
        return OutcomeVector(assignees, np.full(eli.size, 1.0 / eli.size), "fraction", degenerate=True)
    return OutcomeVector(assignees, weighted / denom, "fraction")


@dataclass(frozen=True)
class QuotaVector:
    """Exact fractional seat entitlements before rounding."""

    values: np.ndarray
    seat_total: int

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def quotas(tot: np.ndarray, seats: int = 543) -> QuotaVector:
    """q_a = tot_a / sum(tot) * seats; the quotas sum to the seat total."""
    tot = np.asarray(tot, dtype=np.float64)
    if tot.ndim != 1 or tot.size == 0:
        raise LengthZero(f"need a non-empty population vector, got shape {tot.shape}")
    if not np.all(np.isfinite(tot)):
        raise NonFiniteInput("population vector must be finite")
    total = tot.sum()
    if total <= 0:
        raise ZeroTotalPopulation(f"population total must be positive, got {total}")
    return QuotaVector(tot / total * seats, seats)


def apportion(tot: np.ndarray, seats: int = 543, assignees=None) -> OutcomeVector:
    """Round each quota half away from zero, then give every state at least
    one seat. The seat column therefore need not sum to the seat total."""
    q = quotas(tot, seats).values
    rounded = np.floor(q + 0.5)  # q >= 0, so this is round-half-away-from-zero
    awarded = np.maximum(rounded, 1.0)
    if assignees is None:
        assignees = tuple(str(i) for i in range(q.size))
    return OutcomeVector(assignees, awarded, "seats")
