"""Disparity metrics over trial ensembles.

Every metric compares repeated noisy outcomes against the ground truth
computed from the same true statistics, per assignee, so that unequal
impact across assignees is visible rather than averaged away. Expectations
are estimated by the ensemble mean over trials; trial order never matters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocators import QuotaVector, VraThresholds
from .errors import (
    LengthMismatch,
    NonFiniteInput,
    ShapeMismatch,
    ZeroQuota,
)
from .model import OutcomeVector, TrialEnsemble

MISALLOCATION_UNIT = 1e6  # gamma is reported per million units of allocation


def _check_alignment(ens: TrialEnsemble, truth: OutcomeVector) -> None:
    if ens.assignees != truth.assignees:
        raise ShapeMismatch("ensemble and truth disagree on assignee ordering")


@dataclass(frozen=True)
class ClassificationRateReport:
    assignees: tuple[str, ...]
    rates: np.ndarray
    truth: np.ndarray
    min_covered: float | None
    min_not_covered: float | None


def classification_rates(ens: TrialEnsemble, truth: OutcomeVector) -> ClassificationRateReport:
    """Per-assignee fraction of trials whose label matches the truth.

    The report also carries the worst rate among truly covered assignees
    and among truly not-covered ones, the two groups whose error costs
    differ in kind (lost benefits vs wasted outreach).
    """
    _check_alignment(ens, truth)
    if truth.kind != "label":
        raise ShapeMismatch(f"truth must be labels, got {truth.kind!r}")
    labels = ens.as_matrix()
    truth_arr = truth.outcomes
    rates = (labels == truth_arr[None, :]).mean(axis=0)
    covered = rates[truth_arr]
    uncovered = rates[~truth_arr]
    return ClassificationRateReport(
        assignees=ens.assignees,
        rates=rates,
        truth=truth_arr,
        min_covered=float(covered.min()) if covered.size else None,
        min_not_covered=float(uncovered.min()) if uncovered.size else None,
    )


def multiplicative_error(ens: TrialEnsemble, truth: OutcomeVector) -> np.ndarray:
    """mean(noisy outcome) / true outcome per assignee.

    Values above 1 mean the assignee is overpaid in expectation, below 1
    underpaid. Assignees with a zero true outcome have no meaningful ratio;
    they get NaN and aggregates must exclude them.
    """
    _check_alignment(ens, truth)
    expected = ens.as_matrix().mean(axis=0)
    out = np.full(expected.shape, np.nan)
    nz = truth.outcomes != 0
    out[nz] = expected[nz] / truth.outcomes[nz]
    return out


@dataclass(frozen=True)
class MisallocationReport:
    assignees: tuple[str, ...]
    gamma: np.ndarray
    total_abs: float
    gamma_min: float
    gamma_max: float


def misallocation(ens: TrialEnsemble, truth: OutcomeVector) -> MisallocationReport:
    """Expected over- or under-allocation per assignee, scaled per million.

    gamma(a) = (mean(noisy_a) - true_a) * 1e6. Because shares sum to one on
    both sides, gains and losses cancel in the signed sum; the headline
    number is therefore the total absolute misallocation.
    """
    _check_alignment(ens, truth)
    gamma = (ens.as_matrix().mean(axis=0) - truth.outcomes) * MISALLOCATION_UNIT
    return MisallocationReport(
        assignees=ens.assignees,
        gamma=gamma,
        total_abs=float(np.abs(gamma).sum()),
        gamma_min=float(gamma.min()),
        gamma_max=float(gamma.max()),
    )


def max_multiplicative(ens: TrialEnsemble, q: QuotaVector) -> float:
    """Mean over trials of the widest spread in seats-to-quota ratios.

    Per trial: max_a outcome_a / q_a - min_b outcome_b / q_b. Always
    non-negative; zero only if every ratio is equal within a trial.
    """
    if np.any(q.values <= 0):
        raise ZeroQuota("every quota must be strictly positive")
    ratios = ens.as_matrix() / q.values[None, :]
    return float((ratios.max(axis=1) - ratios.min(axis=1)).mean())


def avg_expected_deviation(ens: TrialEnsemble, q: QuotaVector) -> float:
    """Mean over assignees of |expected outcome - quota|."""
    if np.any(q.values <= 0):
        raise ZeroQuota("every quota must be strictly positive")
    expected = ens.as_matrix().mean(axis=0)
    return float(np.abs(expected - q.values).mean())


def count_inversions(expected: np.ndarray, entitlement: np.ndarray) -> int:
    """Number of assignees caught in at least one pairwise order inversion.

    A pair (a, b) is inverted when b has the strictly larger entitlement
    but the strictly smaller expected outcome. Both members of an inverted
    pair count, whichever side of it they sit on. Runs in O(n log n): after
    grouping ties, an assignee is inverted iff some strictly higher
    entitlement group contains a smaller expected value, or some strictly
    lower group contains a larger one.
    """
    expected = np.asarray(expected, dtype=np.float64)
    entitlement = np.asarray(entitlement, dtype=np.float64)
    if expected.shape != entitlement.shape or expected.ndim != 1:
        raise LengthMismatch(
            f"expected {expected.shape} and entitlement {entitlement.shape} must match"
        )
    if not (np.all(np.isfinite(expected)) and np.all(np.isfinite(entitlement))):
        raise NonFiniteInput("inversion inputs must be finite")
    n = expected.size
    if n < 2:
        return 0
    groups, inverse = np.unique(entitlement, return_inverse=True)
    g = groups.size
    gmin = np.full(g, np.inf)
    gmax = np.full(g, -np.inf)
    np.minimum.at(gmin, inverse, expected)
    np.maximum.at(gmax, inverse, expected)
    # smallest expected value in any strictly higher entitlement group
    above_min = np.full(g, np.inf)
    if g > 1:
        above_min[:-1] = np.minimum.accumulate(gmin[::-1])[::-1][1:]
    # largest expected value in any strictly lower entitlement group
    below_max = np.full(g, -np.inf)
    if g > 1:
        below_max[1:] = np.maximum.accumulate(gmax)[:-1]
    inverted = (above_min[inverse] < expected) | (below_max[inverse] > expected)
    return int(inverted.sum())


def _plane_distance(p: np.ndarray, normal: np.ndarray, offset: float) -> float:
    return abs(float(normal @ p) - offset) / float(np.linalg.norm(normal))


def _project_affine(p: np.ndarray, a: np.ndarray, c: np.ndarray) -> np.ndarray:
    # Least-distance point of {x : a @ x = c}; a has full row rank here.
    lam = np.linalg.solve(a @ a.T, a @ p - c)
    return p - a.T @ lam


def _dist_to_wedge(p: np.ndarray, planes: list[tuple[np.ndarray, float]]) -> float:
    """Distance to the closure of the intersection of two half-spaces
    {normal @ x >= offset}, by active-set enumeration."""
    best = np.inf
    (n1, b1), (n2, b2) = planes
    for active, other in (((n1, b1), (n2, b2)), ((n2, b2), (n1, b1))):
        q = _project_affine(p, active[0][None, :], np.array([active[1]]))
        if other[0] @ q >= other[1] - 1e-9:
            best = min(best, float(np.linalg.norm(p - q)))
    a = np.stack([n1, n2])
    q = _project_affine(p, a, np.array([b1, b2]))
    best = min(best, float(np.linalg.norm(p - q)))
    return best


def distance_to_threshold(
    vac: float,
    lep: float,
    lit: float,
    t: VraThresholds = VraThresholds(),
    coord_scale: tuple[float, float, float] | None = None,
) -> float:
    """Euclidean distance in count space from a jurisdiction to the nearest
    decision boundary that would actually change its coverage label.

    The boundary has three faces: the share cutoff lep = pct * vac, the
    absolute cutoff lep = abs, and the illiteracy cutoff lit = illit * lep.
    Only faces whose crossing flips the label from this point's side count;
    a covered jurisdiction past both size cutoffs is not measured against
    either of them alone, since crossing one leaves it covered. When no
    single face flips the label (not covered, all three conditions false),
    the distance is to the nearest corner region where a flip needs two
    coordinated crossings, computed by exact projection. coord_scale
    optionally divides (vac, lep, lit) by per-coordinate scales first, for
    noise-relative rather than raw distances.
    """
    for name, v in (("vac", vac), ("lep", lep), ("lit", lit)):
        if not np.isfinite(v):
            raise NonFiniteInput(f"{name} is not finite: {v}")
    s = np.array(coord_scale if coord_scale is not None else (1.0, 1.0, 1.0), dtype=np.float64)
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise NonFiniteInput(f"coord_scale must be positive and finite, got {coord_scale}")

    p = np.array([vac, lep, lit], dtype=np.float64) / s
    # Plane k is {normal @ x = offset} in the scaled coordinate system.
    planes = [
        (np.array([-t.pct * s[0], s[1], 0.0]), 0.0),
        (np.array([0.0, s[1], 0.0]), t.abs),
        (np.array([0.0, -t.illit * s[1], s[2]]), 0.0),
    ]
    c1 = vac > 0 and lep / vac > t.pct
    c2 = lep > t.abs
    c3 = lep > 0 and lit / lep > t.illit
    conds = [c1, c2, c3]
    label = (c1 or c2) and c3

    flipping = []
    for k in range(3):
        toggled = list(conds)
        toggled[k] = not toggled[k]
        if ((toggled[0] or toggled[1]) and toggled[2]) != label:
            flipping.append(k)
    if flipping:
        return min(_plane_distance(p, *planes[k]) for k in flipping)

    # Remaining case: all three conditions false. Becoming covered needs the
    # illiteracy condition plus one size condition, so measure to the nearer
    # of the two feasible corners.
    d1 = _dist_to_wedge(p, [planes[0], planes[2]])
    d2 = _dist_to_wedge(p, [planes[1], planes[2]])
    return min(d1, d2)
