"""Trial orchestration: run many noisy releases and summarize disparities.

Every trial owns an independent random stream derived from
(base_seed, epsilon index, trial index), so trials are embarrassingly
parallel and results are identical whatever the worker count or
scheduling order. Pipelines apply mechanism, then non-negativity clipping,
then the allocation rule, in that order; repair pipelines replace the
clip-and-allocate tail because they model the raw noise law directly.
"""
from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .allocators import (
    VraThresholds,
    apportion,
    quotas,
    title1_allocate,
    vra_classify_matrix,
)
from .errors import DomainError
from .mechanisms import (
    GroupSmoothParams,
    RngStream,
    clip_nonnegative,
    d_laplace,
    group_smooth,
    interval_deviations,
    vector_laplace,
)
from .metrics import (
    avg_expected_deviation,
    classification_rates,
    count_inversions,
    distance_to_threshold,
    max_multiplicative,
    misallocation,
    multiplicative_error,
)
from .model import (
    FairnessReport,
    NoisyRelease,
    OutcomeVector,
    SCHEMAS,
    StatMatrix,
    TrialEnsemble,
    validate_stat_matrix,
)
from .repair import RepairParams, inflationary_allocate, repair_classify

PROBLEMS = ("vra", "title1", "apportionment")
MECHANISMS = ("laplace", "dlaplace", "groupsmooth")

# Joint sensitivity of each problem's query set for the plain Laplace
# mechanism. One person moves all three nested language-minority counts,
# but only one eligibility count or one population total.
LAPLACE_SENSITIVITY = {"vra": 3.0, "title1": 1.0, "apportionment": 1.0}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    mechanism: str
    epsilons: tuple[float, ...]
    n_trials: int = 1000
    base_seed: int = 0
    thresholds: VraThresholds = VraThresholds()
    seat_total: int = 543
    smooth: GroupSmoothParams = GroupSmoothParams()
    vra_repair: RepairParams | None = None
    title1_repair_delta: float | None = None
    slack_variant: str = "appendix"
    inversion_key: str = "weighted"
    data_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.problem not in PROBLEMS:
            raise DomainError(f"unknown problem {self.problem!r}")
        if self.mechanism not in MECHANISMS:
            raise DomainError(f"unknown mechanism {self.mechanism!r}")
        if not self.epsilons or any(not (e > 0 and np.isfinite(e)) for e in self.epsilons):
            raise DomainError(f"epsilons must be positive and finite, got {self.epsilons}")
        if self.n_trials < 1:
            raise DomainError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.mechanism == "dlaplace" and self.problem != "vra":
            raise DomainError("the decomposed Laplace mechanism only releases vra statistics")
        if self.vra_repair is not None:
            if self.problem != "vra" or self.mechanism != "dlaplace":
                raise DomainError("posterior repair needs problem=vra, mechanism=dlaplace")
        if self.title1_repair_delta is not None:
            if self.problem != "title1" or self.mechanism != "laplace":
                raise DomainError("inflationary repair needs problem=title1, mechanism=laplace")
            if not (0.0 < self.title1_repair_delta < 1.0):
                raise DomainError(f"delta must lie in (0, 1), got {self.title1_repair_delta}")
        if self.vra_repair is not None and self.title1_repair_delta is not None:
            raise DomainError("at most one repair may be configured")
        if self.inversion_key not in ("weighted", "eli"):
            raise DomainError(f"inversion_key must be 'weighted' or 'eli', got {self.inversion_key}")

    @property
    def repair_mode(self) -> bool:
        return self.vra_repair is not None or self.title1_repair_delta is not None

    def without_repair(self) -> "ExperimentConfig":
        return replace(self, vra_repair=None, title1_repair_delta=None)


def derive_trial_stream(base_seed: int, epsilon_index: int, trial_index: int) -> RngStream:
    """Fresh key material per (seed, epsilon, trial); injective by hashing,
    so no trial's draws depend on any other trial having run."""
    material = b"dpalloc.trial" + struct.pack(
        "<QQQ",
        base_seed & (2**64 - 1),
        epsilon_index & (2**64 - 1),
        trial_index & (2**64 - 1),
    )
    key = int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "little")
    return RngStream(key)


def _vra_components(m: StatMatrix) -> np.ndarray:
    lit = m.column("lit")
    lep = m.column("lep")
    vac = m.column("vac")
    return np.stack([lit, lep - lit, vac - lep], axis=1)


def _release_from_components(m: StatMatrix, noisy_comp: np.ndarray, eps, mech, seed) -> NoisyRelease:
    partial = np.cumsum(noisy_comp, axis=1)
    cols = {"lit": partial[:, 0], "lep": partial[:, 1], "vac": partial[:, 2]}
    values = np.stack([cols[q] for q in m.queries], axis=1)
    return NoisyRelease(StatMatrix(m.assignees, m.queries, values), eps, mech, seed)


def _make_trial_fn(cfg: ExperimentConfig, data: StatMatrix):
    """Build run_trial(eps, stream) -> OutcomeVector for this configuration.

    Anything reusable across trials (column views, interval deviation
    tables for the smoothing mechanism) is computed here once.
    """
    assignees = data.assignees

    if cfg.problem == "vra":
        dev = None
        if cfg.mechanism == "groupsmooth":
            comp = _vra_components(data)
            if np.any(comp < 0):
                raise DomainError("vra counts must satisfy 0 <= lit <= lep <= vac")
            flat = comp.reshape(-1)
            dev = interval_deviations(flat)

        if cfg.vra_repair is not None:
            params = cfg.vra_repair

            def run_trial(eps, stream):
                release = d_laplace(data, eps, stream)  # repair consumes raw noise
                vac = release.stats.column("vac")
                lep = release.stats.column("lep")
                lit = release.stats.column("lit")
                labels = np.empty(len(assignees), dtype=bool)
                for j in range(len(assignees)):
                    label = repair_classify(
                        (vac[j], lep[j], lit[j]), eps, params, stream.fork(j), cfg.thresholds
                    )
                    labels[j] = label.covered
                return OutcomeVector(assignees, labels, "label")

            return run_trial

        def run_trial(eps, stream):
            if cfg.mechanism == "laplace":
                release = vector_laplace(data, LAPLACE_SENSITIVITY["vra"], eps, stream)
            elif cfg.mechanism == "dlaplace":
                release = d_laplace(data, eps, stream)
            else:
                comp = _vra_components(data)
                noisy_flat, _ = group_smooth(comp.reshape(-1), eps, cfg.smooth, stream, dev)
                release = _release_from_components(
                    data, noisy_flat.reshape(comp.shape), eps, "groupsmooth", stream.fingerprint
                )
            release = clip_nonnegative(release)
            return vra_classify_matrix(release.stats, cfg.thresholds)

        return run_trial

    if cfg.problem == "title1":
        eli = data.column("eli")
        exp = data.column("exp")
        eli_matrix = StatMatrix(assignees, ("eli",), eli[:, None])
        dev = interval_deviations(eli) if cfg.mechanism == "groupsmooth" else None

        if cfg.title1_repair_delta is not None:
            delta = cfg.title1_repair_delta

            def run_trial(eps, stream):
                release = vector_laplace(eli_matrix, 1.0, eps, stream)  # unclipped
                outcome, _ = inflationary_allocate(
                    release.stats.column("eli"), exp, eps, delta, assignees, cfg.slack_variant
                )
                return outcome

            return run_trial

        def run_trial(eps, stream):
            if cfg.mechanism == "laplace":
                release = vector_laplace(eli_matrix, 1.0, eps, stream)
            else:
                noisy, _ = group_smooth(eli, eps, cfg.smooth, stream, dev)
                release = NoisyRelease(
                    StatMatrix(assignees, ("eli",), noisy[:, None]),
                    eps,
                    "groupsmooth",
                    stream.fingerprint,
                )
            release = clip_nonnegative(release)
            return title1_allocate(release.stats.column("eli"), exp, assignees)

        return run_trial

    tot = data.column("tot")
    tot_matrix = StatMatrix(assignees, ("tot",), tot[:, None])
    dev = interval_deviations(tot) if cfg.mechanism == "groupsmooth" else None

    def run_trial(eps, stream):
        if cfg.mechanism == "laplace":
            release = vector_laplace(tot_matrix, 1.0, eps, stream)
        else:
            noisy, _ = group_smooth(tot, eps, cfg.smooth, stream, dev)
            release = NoisyRelease(
                StatMatrix(assignees, ("tot",), noisy[:, None]),
                eps,
                "groupsmooth",
                stream.fingerprint,
            )
        release = clip_nonnegative(release)
        return apportion(release.stats.column("tot"), cfg.seat_total, assignees)

    return run_trial


def run_ensemble(cfg: ExperimentConfig, data: StatMatrix, n_workers: int = 1) -> dict[float, TrialEnsemble]:
    """Run cfg.n_trials noisy trials per epsilon; returns ensembles keyed by
    epsilon. Output is identical for any n_workers."""
    validate_stat_matrix(data, SCHEMAS[cfg.problem], true_data=True)
    run_trial = _make_trial_fn(cfg, data)
    out: dict[float, TrialEnsemble] = {}
    for ei, eps in enumerate(cfg.epsilons):
        def one(ti: int, _eps=eps, _ei=ei) -> OutcomeVector:
            return run_trial(_eps, derive_trial_stream(cfg.base_seed, _ei, ti))

        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                trials = tuple(pool.map(one, range(cfg.n_trials)))
        else:
            trials = tuple(one(ti) for ti in range(cfg.n_trials))
        out[eps] = TrialEnsemble(trials, cfg.base_seed, cfg.n_trials)
    return out


def _eps_key(eps: float) -> str:
    return format(eps, ".17g")


def _per_assignee(assignees, values) -> dict:
    return {a: (None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v))
            for a, v in zip(assignees, values)}


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = {
        "problem": cfg.problem,
        "mechanism": cfg.mechanism,
        "epsilons": [float(e) for e in cfg.epsilons],
        "n_trials": cfg.n_trials,
        "base_seed": cfg.base_seed,
        "data_path": cfg.data_path,
        "pipeline": "mechanism->clip->allocate",
    }
    if cfg.problem == "vra":
        echo["thresholds"] = {
            "pct": cfg.thresholds.pct,
            "abs": cfg.thresholds.abs,
            "illit": cfg.thresholds.illit,
        }
    if cfg.problem == "apportionment":
        echo["seat_total"] = cfg.seat_total
    if cfg.mechanism == "groupsmooth":
        echo["rho"] = cfg.smooth.rho
        echo["max_bucket"] = cfg.smooth.max_bucket
    if cfg.vra_repair is not None:
        echo["pipeline"] = "mechanism->posterior-repair"
        echo["repair"] = {"p": cfg.vra_repair.p, "n_samples": cfg.vra_repair.n_samples}
    if cfg.title1_repair_delta is not None:
        echo["pipeline"] = "mechanism->inflationary-allocate"
        echo["repair"] = {"delta": cfg.title1_repair_delta, "slack_variant": cfg.slack_variant}
    if cfg.inversion_key != "weighted":
        echo["inversion_key"] = cfg.inversion_key
    return echo


def aggregate(
    ensembles: dict[float, TrialEnsemble],
    data: StatMatrix,
    cfg: ExperimentConfig,
    baseline: dict[float, TrialEnsemble] | None = None,
) -> FairnessReport:
    """Compute the problem's metric suite against truth derived from data.

    baseline, when given, holds the standard pipeline's ensembles on the
    same seeds; repair reports quote its headline numbers next to their own
    so repaired and unrepaired outcomes can be read side by side.
    """
    assignees = data.assignees
    per_assignee: dict = {}
    aggregates: dict = {}

    def put(metric, eps_key, mapping):
        per_assignee.setdefault(metric, {})[eps_key] = mapping

    def agg(name, eps_key, value):
        aggregates.setdefault(name, {})[eps_key] = None if value is None else float(value)

    if cfg.problem == "vra":
        truth = vra_classify_matrix(data, cfg.thresholds)
        dist = [
            distance_to_threshold(v, l, i, cfg.thresholds)
            for v, l, i in zip(data.column("vac"), data.column("lep"), data.column("lit"))
        ]
        for eps in cfg.epsilons:
            key = _eps_key(eps)
            ens = ensembles[eps]
            rep = classification_rates(ens, truth)
            put("class_rate", key, _per_assignee(assignees, rep.rates))
            put("dist_thresh", key, _per_assignee(assignees, dist))
            agg("class_rate_min_covered", key, rep.min_covered)
            agg("class_rate_min_not_covered", key, rep.min_not_covered)
            agg("misclassified_expected", key, float((1.0 - rep.rates).sum()))
            agg("degenerate_trials", key, ens.degenerate_count)
            if baseline is not None:
                base = classification_rates(baseline[eps], truth)
                agg("misclassified_expected_standard", key, float((1.0 - base.rates).sum()))

    elif cfg.problem == "title1":
        eli = data.column("eli")
        exp = data.column("exp")
        truth = title1_allocate(eli, exp, assignees)
        entitlement = exp * eli if cfg.inversion_key == "weighted" else eli
        for eps in cfg.epsilons:
            key = _eps_key(eps)
            ens = ensembles[eps]
            expected = ens.as_matrix().mean(axis=0)
            mult = multiplicative_error(ens, truth)
            mis = misallocation(ens, truth)
            put("mult_err", key, _per_assignee(assignees, mult))
            put("misalloc", key, _per_assignee(assignees, mis.gamma))
            agg("misalloc_total_abs", key, mis.total_abs)
            agg("misalloc_min", key, mis.gamma_min)
            agg("misalloc_max", key, mis.gamma_max)
            agg("mult_err_mean", key, float(np.nanmean(mult)) if np.any(~np.isnan(mult)) else None)
            agg("inversions", key, count_inversions(expected, entitlement))
            agg("degenerate_trials", key, ens.degenerate_count)
            if cfg.title1_repair_delta is not None:
                shares = ens.as_matrix()
                agg("budget_factor_mean", key, float(shares.sum(axis=1).mean()))
                below = (shares < truth.outcomes[None, :]).any(axis=1)
                agg("any_below_true_rate", key, float(below.mean()))
            if baseline is not None:
                bmis = misallocation(baseline[eps], truth)
                bexp = baseline[eps].as_matrix().mean(axis=0)
                agg("misalloc_total_abs_standard", key, bmis.total_abs)
                agg("inversions_standard", key, count_inversions(bexp, entitlement))

    else:
        q = quotas(data.column("tot"), cfg.seat_total)
        for eps in cfg.epsilons:
            key = _eps_key(eps)
            ens = ensembles[eps]
            expected = ens.as_matrix().mean(axis=0)
            put("avg_exp_dev", key, _per_assignee(assignees, np.abs(expected - q.values)))
            agg("max_mult", key, max_multiplicative(ens, q))
            agg("avg_exp_dev", key, avg_expected_deviation(ens, q))
            agg("degenerate_trials", key, ens.degenerate_count)

    return FairnessReport(
        config_echo=_config_echo(cfg),
        per_assignee=per_assignee,
        aggregates=aggregates,
    )
