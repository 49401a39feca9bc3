"""Repair mechanisms that trade accuracy or budget for fairer outcomes.

Two repairs are implemented, matching the two failure modes the metrics
expose. For coverage decisions, a posterior test replaces the brittle
plug-in rule: sample plausible true counts given the noisy release and
cover whenever the covered probability clears a policy threshold. For
proportional funding, an inflationary rule pads every district's noisy
count and shaves the total so that, with high probability, no district
receives less than its true share; the price is an allocation that sums
to more than one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .allocators import CoverageLabel, VraThresholds, vra_classify_many
from .errors import (
    DomainError,
    LengthMismatch,
    NonFiniteInput,
    NonPositiveDenominator,
    NonPositiveEpsilon,
    SamplingExhausted,
)
from .model import OutcomeVector

REJECTION_CAP_FACTOR = 1000


@dataclass(frozen=True)
class RepairParams:
    """Posterior repair policy: cover when P(covered | release) >= p."""

    p: float
    n_samples: int = 100

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        if self.n_samples < 1:
            raise DomainError(f"n_samples must be >= 1, got {self.n_samples}")


def _truncated_laplace(center: float, scale: float, n: int, rng) -> np.ndarray:
    """n draws from Laplace(center, scale) conditioned on being >= 0.

    Rejection with redraw; under a flat prior on the valid region this is
    exactly the posterior of a true component given its noisy value. Raises
    SamplingExhausted once the draw budget (1000x the sample count) is
    spent, which happens only when the noisy value is many scales negative.
    """
    out = np.empty(n)
    pending = np.arange(n)
    spent = 0
    cap = REJECTION_CAP_FACTOR * n
    while pending.size:
        if spent >= cap:
            raise SamplingExhausted(
                f"rejection cap {cap} hit at center {center:.6g}, scale {scale:.6g}"
            )
        take = min(pending.size, cap - spent)
        u = rng.uniforms(take)
        d = u - 0.5
        draws = center - scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))
        spent += take
        accepted = draws >= 0.0
        out[pending[:take][accepted]] = draws[accepted]
        pending = np.concatenate([pending[:take][~accepted], pending[take:]])
    return out


def posterior_covered(
    noisy: tuple[float, float, float],
    eps: float,
    n_samples: int,
    rng,
    t: VraThresholds = VraThresholds(),
) -> float:
    """Estimated probability that the true jurisdiction is covered.

    noisy is the (vac, lep, lit) triple reconstructed from a decomposed
    Laplace release at this eps, unclipped. The release determines the
    noisy disjoint components exactly (lit, lep - lit, vac - lep), each of
    which is the true component plus independent Laplace(1/eps) noise, so
    plausible true components are sampled per component from
    Laplace(center = noisy component, scale = 1/eps) truncated to >= 0,
    reassembled by partial sums, and classified. Returns the covered
    fraction of n_samples such candidates.
    """
    if not (eps > 0 and np.isfinite(eps)):
        raise NonPositiveEpsilon(f"epsilon must be positive and finite, got {eps}")
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    vac, lep, lit = (float(v) for v in noisy)
    if not all(np.isfinite(v) for v in (vac, lep, lit)):
        raise NonFiniteInput(f"noisy triple must be finite, got {noisy}")
    scale = 1.0 / eps
    centers = (lit, lep - lit, vac - lep)
    q1 = _truncated_laplace(centers[0], scale, n_samples, rng)
    q2 = _truncated_laplace(centers[1], scale, n_samples, rng)
    q3 = _truncated_laplace(centers[2], scale, n_samples, rng)
    cand_lit = q1
    cand_lep = q1 + q2
    cand_vac = cand_lep + q3
    covered = vra_classify_many(cand_vac, cand_lep, cand_lit, t)
    return float(covered.mean())


def repair_classify(
    noisy: tuple[float, float, float],
    eps: float,
    params: RepairParams,
    rng,
    t: VraThresholds = VraThresholds(),
) -> CoverageLabel:
    """Cover iff the posterior covered probability reaches params.p.

    The comparison is inclusive, so p = 0 covers unconditionally and p = 1
    demands that every sampled candidate be covered. Lowering p trades
    wasted coverage for fewer missed jurisdictions.
    """
    prob = posterior_covered(noisy, eps, params.n_samples, rng, t)
    return CoverageLabel.COVERED if prob >= params.p else CoverageLabel.NOT_COVERED


@dataclass(frozen=True)
class InflationParams:
    """Resolved slack configuration and its realized cost."""

    k: int
    epsilon: float
    delta: float
    slack_each: float
    slack_total: float
    budget_factor: float
    variant: str = "appendix"


def inflation_slacks(
    k: int, eps: float, delta: float, variant: str = "appendix"
) -> tuple[float, float]:
    """Per-district and total-count slacks for the no-penalty guarantee.

    slack_each bounds each district's noise, slack_total the noise on the
    summed count, each with failure probability delta/(2k):

        slack_each  = 2 * ln(2k / delta) / eps
        slack_total = k * ln(2k^2 / delta) / eps

    variant="body" drops the factor 2 on slack_each, giving the tighter
    constant quoted alongside the allocation display; the proven guarantee
    uses the default. Both are non-increasing in eps and in delta.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if not (eps > 0 and math.isfinite(eps)):
        raise NonPositiveEpsilon(f"epsilon must be positive and finite, got {eps}")
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if variant not in ("appendix", "body"):
        raise DomainError(f"unknown slack variant {variant!r}")
    factor = 2.0 if variant == "appendix" else 1.0
    slack_each = factor * math.log(2.0 * k / delta) / eps
    slack_total = k * math.log(2.0 * k * k / delta) / eps
    return slack_each, slack_total


def inflationary_allocate(
    noisy_eli: np.ndarray,
    exp: np.ndarray,
    eps: float,
    delta: float,
    assignees=None,
    variant: str = "appendix",
) -> tuple[OutcomeVector, InflationParams]:
    """No-penalty funding shares from an unclipped Laplace release.

    Each weighted noisy count is padded by slack_each and the weighted
    total is reduced by slack_total:

        share_a = (exp_a * noisy_eli_a + slack_each) / (sum_b exp_b * noisy_eli_b - slack_total)

    With probability at least 1 - delta every share is at least the true
    share, at the cost of shares summing to more than one; that sum is the
    budget_factor. The guarantee is calibrated to Laplace(1/eps) noise on
    eli, so callers must pass the raw release, not a clipped one. When the
    deflated denominator is not positive the configuration cannot produce
    an allocation at all and NonPositiveDenominator is raised.
    """
    noisy_eli = np.asarray(noisy_eli, dtype=np.float64)
    exp = np.asarray(exp, dtype=np.float64)
    if noisy_eli.shape != exp.shape or noisy_eli.ndim != 1 or noisy_eli.size == 0:
        raise LengthMismatch(
            f"noisy_eli {noisy_eli.shape} and exp {exp.shape} must be equal-length vectors"
        )
    if not (np.all(np.isfinite(noisy_eli)) and np.all(np.isfinite(exp))):
        raise NonFiniteInput("allocation inputs must be finite")
    k = noisy_eli.size
    slack_each, slack_total = inflation_slacks(k, eps, delta, variant)
    weighted = exp * noisy_eli
    denom = weighted.sum() - slack_total
    if denom <= 0:
        raise NonPositiveDenominator(
            f"deflated denominator {denom:.6g} <= 0 at eps={eps}, delta={delta}, k={k}"
        )
    shares = (weighted + slack_each) / denom
    if assignees is None:
        assignees = tuple(str(i) for i in range(k))
    outcome = OutcomeVector(assignees, shares, "fraction")
    params = InflationParams(
        k=k,
        epsilon=eps,
        delta=delta,
        slack_each=slack_each,
        slack_total=slack_total,
        budget_factor=float(shares.sum()),
        variant=variant,
    )
    return outcome, params
