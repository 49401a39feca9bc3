"""Differentially private release mechanisms and their random source.

All noise is generated by inverse-CDF transformation of uniform draws from
a counter-based generator (Philox-4x64-10), so any sample is a pure
function of (key, stream index, position). That makes trials reproducible
bit-for-bit regardless of scheduling and lets parallel workers share
nothing. The Laplace inverse CDF used throughout is

    x = -b * sgn(u - 1/2) * ln(1 - 2*|u - 1/2|),   u in (0, 1)

which maps u = 1/2 to exactly 0 and u = 3/4 to b*ln(2).
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    EmptyInput,
    MissingQuery,
    NonFiniteValue,
    NonPositiveEpsilon,
    NonPositiveScale,
    OrderingViolation,
)
from .model import NoisyRelease, StatMatrix

_MASK64 = (1 << 64) - 1
_MASK128 = (1 << 128) - 1


class RngStream:
    """Counter-based uniform stream with explicit key material.

    A stream is identified by a 128-bit key plus a 64-bit stream index;
    identical (key, stream, position) always reproduces the same draw on
    every platform. Uniforms are mapped onto the open interval (0, 1) as
    ((raw64 >> 11) + 0.5) * 2**-53 so that inverse-CDF transforms never see
    an endpoint.
    """

    def __init__(self, key: int, stream: int = 0):
        self.key = int(key) & _MASK128
        self.stream = int(stream) & _MASK64
        self._bitgen = np.random.Philox(key=self.key, counter=self.stream << 192)
        self._drawn = 0

    def uniforms(self, shape) -> np.ndarray:
        """Draw uniforms in (0, 1) with the given shape (int or tuple)."""
        if isinstance(shape, int):
            shape = (shape,)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self._bitgen.random_raw(n)
        self._drawn += n
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def fork(self, index: int) -> "RngStream":
        """Derive an independent child stream; same (parent, index) gives
        the same child regardless of how much the parent has drawn."""
        material = (
            b"dpalloc.fork"
            + self.key.to_bytes(16, "little")
            + self.stream.to_bytes(8, "little")
            + struct.pack("<q", index)
        )
        child_key = int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "little")
        return RngStream(child_key)

    @property
    def fingerprint(self) -> int:
        """64-bit identity of (key, stream), recorded on releases."""
        material = self.key.to_bytes(16, "little") + self.stream.to_bytes(8, "little")
        return int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "little")

    @property
    def draws(self) -> int:
        return self._drawn

    def __repr__(self):
        return f"RngStream(key={self.key:#x}, stream={self.stream}, draws={self._drawn})"


class ZeroNoiseStream:
    """Drop-in stream whose every uniform is 1/2, so Laplace draws are 0.

    Exists for deterministic pipeline checks: running any mechanism with
    this stream reproduces the could-have-been noiseless computation.
    """

    key = 0
    stream = 0
    fingerprint = 0

    def uniforms(self, shape) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        return np.full(shape, 0.5)

    def uniform(self) -> float:
        return 0.5

    def fork(self, index: int) -> "ZeroNoiseStream":
        return ZeroNoiseStream()


def _laplace_from_uniforms(u: np.ndarray, scale: float) -> np.ndarray:
    d = u - 0.5
    return -scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))


def sample_laplace(scale: float, rng) -> float:
    """One Laplace(0, scale) draw from a single uniform via the inverse CDF."""
    if not (scale > 0 and np.isfinite(scale)):
        raise NonPositiveScale(f"scale must be positive and finite, got {scale}")
    return float(_laplace_from_uniforms(rng.uniforms(1), scale)[0])


def _laplace_array(scale: float, shape, rng) -> np.ndarray:
    if not (scale > 0 and np.isfinite(scale)):
        raise NonPositiveScale(f"scale must be positive and finite, got {scale}")
    return _laplace_from_uniforms(rng.uniforms(shape), scale)


def _check_epsilon(eps: float) -> None:
    if not (eps > 0 and np.isfinite(eps)):
        raise NonPositiveEpsilon(f"epsilon must be positive and finite, got {eps}")


def vector_laplace(m: StatMatrix, sensitivity: float, eps: float, rng) -> NoisyRelease:
    """Add iid Laplace(sensitivity/eps) noise to every cell of m.

    Unbiased before any clipping; each cell's density ratio between
    neighboring inputs is bounded by exp(eps) when the declared sensitivity
    bounds the per-input change across all cells jointly.
    """
    _check_epsilon(eps)
    if not (sensitivity > 0 and np.isfinite(sensitivity)):
        raise NonPositiveScale(f"sensitivity must be positive, got {sensitivity}")
    if not np.all(np.isfinite(m.values)):
        raise NonFiniteValue("input matrix contains non-finite values")
    noise = _laplace_array(sensitivity / eps, m.values.shape, rng)
    noisy = StatMatrix(m.assignees, m.queries, m.values + noise)
    return NoisyRelease(noisy, eps, "laplace", getattr(rng, "fingerprint", 0))


def d_laplace(m: StatMatrix, eps: float, rng) -> NoisyRelease:
    """Release (vac, lep, lit) via the sensitivity-1 decomposition.

    The three counts are nested (lit <= lep <= vac), so one person changes
    each of the disjoint components

        q1 = lit,   q2 = lep - lit,   q3 = vac - lep

    by at most 1 in total. Each component gets Laplace(1/eps) noise and the
    noisy counts are rebuilt by partial sums:

        lit~ = q1~,  lep~ = q1~ + q2~,  vac~ = q1~ + q2~ + q3~

    so the reconstruction identities hold exactly in every trial.
    """
    _check_epsilon(eps)
    for q in ("vac", "lep", "lit"):
        if q not in m.queries:
            raise MissingQuery(f"d_laplace needs query {q!r}, matrix has {m.queries}")
    vac, lep, lit = m.column("vac"), m.column("lep"), m.column("lit")
    if not np.all(np.isfinite(m.values)):
        raise NonFiniteValue("input matrix contains non-finite values")
    ok = (lit >= 0) & (lep >= lit) & (vac >= lep)
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise OrderingViolation(
            f"assignee {m.assignees[bad]!r} violates 0 <= lit <= lep <= vac: "
            f"({vac[bad]}, {lep[bad]}, {lit[bad]})"
        )
    components = np.stack([lit, lep - lit, vac - lep], axis=1)
    noisy_comp = components + _laplace_array(1.0 / eps, components.shape, rng)
    partial = np.cumsum(noisy_comp, axis=1)  # columns: lit~, lep~, vac~
    cols = {"vac": partial[:, 2], "lep": partial[:, 1], "lit": partial[:, 0]}
    values = np.stack([cols[q] for q in m.queries], axis=1)
    noisy = StatMatrix(m.assignees, m.queries, values)
    return NoisyRelease(noisy, eps, "dlaplace", getattr(rng, "fingerprint", 0))


@dataclass(frozen=True)
class GroupSmoothParams:
    """Tuning for the two-stage smoothing mechanism.

    rho is the fraction of the privacy budget spent choosing the partition;
    max_bucket optionally caps bucket width.
    """

    rho: float = 0.25
    max_bucket: int | None = None

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise DomainError(f"rho must lie strictly between 0 and 1, got {self.rho}")
        if self.max_bucket is not None and self.max_bucket < 1:
            raise DomainError(f"max_bucket must be >= 1, got {self.max_bucket}")


@dataclass(frozen=True)
class Partition:
    """Contiguous bucketing of positions [0, n) as half-open cut points.

    bounds = (0, b1, ..., n); bucket k covers [bounds[k], bounds[k+1]).
    """

    bounds: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(int(b) for b in self.bounds))
        if len(self.bounds) < 2 or self.bounds[0] != 0:
            raise DomainError(f"bounds must start at 0, got {self.bounds}")
        if any(a >= b for a, b in zip(self.bounds, self.bounds[1:])):
            raise DomainError(f"bounds must be strictly increasing, got {self.bounds}")

    @property
    def n_buckets(self) -> int:
        return len(self.bounds) - 1

    def buckets(self) -> list[tuple[int, int]]:
        return list(zip(self.bounds[:-1], self.bounds[1:]))


def interval_deviations(x: np.ndarray) -> np.ndarray:
    """Upper-triangular matrix D with D[i, j] = sum_t |x_t - mean(x[i..j])|.

    This is the data-dependent part of every interval's cost; it does not
    depend on the privacy budget, so callers running many trials over the
    same vector compute it once and pass it to group_smooth. Quadratic in
    memory and cubic in time over the vector length, which is fine for the
    district-scale inputs this library targets.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    prefix = np.concatenate(([0.0], np.cumsum(x)))
    dev = np.zeros((n, n))
    for i in range(n):
        m = n - i
        seg = x[i:]
        means = (prefix[i + 1 :] - prefix[i]) / np.arange(1, m + 1)
        cums = np.cumsum(np.abs(seg[:, None] - means[None, :]), axis=0)
        idx = np.arange(m)
        dev[i, i:] = cums[idx, idx]
    return dev


def group_smooth(
    x,
    eps: float,
    params: GroupSmoothParams,
    rng,
    deviations: np.ndarray | None = None,
) -> tuple[np.ndarray, Partition]:
    """Two-stage release: privately pick a contiguous partition, then
    answer each bucket's total with Laplace noise and spread it evenly.

    Stage 1 (budget eps1 = rho * eps) scores every interval [i, j] with

        c(i, j) = sum_t |x_t - mean(x[i..j])| + 1/eps2 + Laplace(2/eps1)

    and a quadratic dynamic program picks the partition minimizing total
    perturbed cost. Stage 2 (budget eps2 = (1 - rho) * eps) adds
    Laplace(1/eps2) to each bucket total and assigns total/size to every
    member. Interval noise is drawn row-major over i <= j before any
    stage-2 draw, so the draw order is a fixed function of the input size.
    """
    _check_epsilon(eps)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise EmptyInput(f"need a non-empty 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("input vector contains non-finite values")
    n = x.size
    eps1 = params.rho * eps
    eps2 = (1.0 - params.rho) * eps

    if deviations is None:
        deviations = interval_deviations(x)
    elif deviations.shape != (n, n):
        raise DomainError(f"deviations shape {deviations.shape} does not match n={n}")

    # One draw per interval i <= j, laid out row-major into the upper triangle.
    iu = np.triu_indices(n)
    noise1 = np.zeros((n, n))
    noise1[iu] = _laplace_array(2.0 / eps1, iu[0].size, rng)
    cost = deviations + (1.0 / eps2) + noise1

    maxb = params.max_bucket or n
    best = np.empty(n + 1)
    best[0] = 0.0
    prev = np.zeros(n, dtype=np.int64)
    for j in range(n):
        lo = max(0, j + 1 - maxb)
        cand = best[lo : j + 1] + cost[lo : j + 1, j]
        k = int(np.argmin(cand))
        best[j + 1] = cand[k]
        prev[j] = lo + k

    bounds = [n]
    cur = n
    while cur > 0:
        cur = int(prev[cur - 1])
        bounds.append(cur)
    partition = Partition(tuple(reversed(bounds)))

    out = np.empty(n)
    starts = partition.bounds[:-1]
    ends = partition.bounds[1:]
    noise2 = _laplace_array(1.0 / eps2, len(starts), rng)
    for k, (s, e) in enumerate(zip(starts, ends)):
        out[s:e] = (x[s:e].sum() + noise2[k]) / (e - s)
    return out, partition


def clip_nonnegative(release: NoisyRelease) -> NoisyRelease:
    """Post-process a release by clamping every cell to max(cell, 0).

    Pure post-processing: costs no privacy budget, is idempotent, and is
    monotone cell-wise. It introduces upward bias on cells near zero, which
    is exactly the effect the downstream disparity metrics measure.
    """
    clipped = StatMatrix(
        release.stats.assignees,
        release.stats.queries,
        np.maximum(release.stats.values, 0.0),
    )
    return NoisyRelease(clipped, release.epsilon, release.mechanism, release.trial_seed)


def indist_threshold(eps: float, delta: float) -> float:
    """Largest count change that noise hides with probability >= 1 - delta.

    tau(eps, delta) = ln(1/delta) / eps. Two inputs whose counts differ by
    less than tau produce outputs no test can tell apart with confidence
    above 1 - delta.
    """
    if not (eps > 0 and np.isfinite(eps)):
        raise DomainError(f"epsilon must be positive and finite, got {eps}")
    if not (0.0 < delta <= 1.0):
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    return np.log(1.0 / delta) / eps
