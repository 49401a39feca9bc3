"""Core value types shared across the library.

A StatMatrix holds the true (or noisy) statistics for a set of assignees:
one row per assignee, one column per named query. Assignee order is
significant everywhere; it is the order rows were loaded or generated in,
and all downstream vectors, ensembles and reports preserve it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LengthMismatch,
    MissingQuery,
    NegativeTrueCount,
    NonFiniteValue,
    ShapeMismatch,
)

VRA_QUERIES = ("vac", "lep", "lit")
TITLE1_QUERIES = ("eli", "exp")
APPORTIONMENT_QUERIES = ("tot",)

SCHEMAS = {
    "vra": VRA_QUERIES,
    "title1": TITLE1_QUERIES,
    "apportionment": APPORTIONMENT_QUERIES,
}


def _frozen_array(values, shape_hint=None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if shape_hint is not None and arr.shape != shape_hint:
        raise ShapeMismatch(f"expected shape {shape_hint}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StatMatrix:
    """Per-assignee statistics: values[i, j] answers queries[j] for assignees[i]."""

    assignees: tuple[str, ...]
    queries: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "assignees", tuple(self.assignees))
        object.__setattr__(self, "queries", tuple(self.queries))
        arr = _frozen_array(self.values, (len(self.assignees), len(self.queries)))
        object.__setattr__(self, "values", arr)

    def column(self, query: str) -> np.ndarray:
        if query not in self.queries:
            raise MissingQuery(f"query {query!r} not in {self.queries}")
        return self.values[:, self.queries.index(query)]

    @property
    def n_assignees(self) -> int:
        return len(self.assignees)

    def __eq__(self, other):
        if not isinstance(other, StatMatrix):
            return NotImplemented
        return (
            self.assignees == other.assignees
            and self.queries == other.queries
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def validate_stat_matrix(m: StatMatrix, schema: tuple[str, ...], true_data: bool = True) -> None:
    """Check that m carries every query in schema with finite values.

    true_data additionally requires every value to be non-negative; noisy
    matrices (post-mechanism, pre-clip) are validated with true_data=False.
    """
    for q in schema:
        if q not in m.queries:
            raise MissingQuery(f"query {q!r} missing from matrix with {m.queries}")
    if not np.all(np.isfinite(m.values)):
        raise NonFiniteValue("matrix contains non-finite values")
    if true_data and np.any(m.values < 0):
        bad = int(np.argmax(np.any(m.values < 0, axis=1)))
        raise NegativeTrueCount(f"negative count for assignee {m.assignees[bad]!r}")


@dataclass(frozen=True)
class NoisyRelease:
    """A privatized StatMatrix plus the provenance needed to reproduce it."""

    stats: StatMatrix
    epsilon: float
    mechanism: str
    trial_seed: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise NonFiniteValue(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class OutcomeVector:
    """One allocation outcome per assignee.

    kind is "fraction" (Title I shares), "seats" (apportionment) or
    "label" (coverage decisions, stored as booleans: True means covered).
    degenerate marks outcomes produced by a fallback path, e.g. a uniform
    split when every weighted count was zero.
    """

    assignees: tuple[str, ...]
    outcomes: np.ndarray
    kind: str
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "assignees", tuple(self.assignees))
        if self.kind not in ("fraction", "seats", "label"):
            raise ShapeMismatch(f"unknown outcome kind {self.kind!r}")
        dtype = np.bool_ if self.kind == "label" else np.float64
        arr = np.array(self.outcomes, dtype=dtype, copy=True)
        if arr.shape != (len(self.assignees),):
            raise ShapeMismatch(
                f"expected {len(self.assignees)} outcomes, got shape {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "outcomes", arr)

    def __eq__(self, other):
        if not isinstance(other, OutcomeVector):
            return NotImplemented
        return (
            self.assignees == other.assignees
            and self.kind == other.kind
            and self.degenerate == other.degenerate
            and np.array_equal(self.outcomes, other.outcomes)
        )

    __hash__ = None


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise NonFiniteValue(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0 <= self.delta < 1):
            raise NonFiniteValue(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class TrialEnsemble:
    """Outcomes of repeated noisy trials for one (problem, mechanism, epsilon)."""

    trials: tuple[OutcomeVector, ...]
    base_seed: int
    n_trials: int

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        if len(self.trials) != self.n_trials:
            raise LengthMismatch(
                f"declared {self.n_trials} trials, holding {len(self.trials)}"
            )
        if self.trials:
            first = self.trials[0].assignees
            for t in self.trials[1:]:
                if t.assignees != first:
                    raise ShapeMismatch("trials disagree on assignee ordering")

    @property
    def assignees(self) -> tuple[str, ...]:
        return self.trials[0].assignees

    def as_matrix(self) -> np.ndarray:
        """Stack outcomes into an (n_trials, n_assignees) array."""
        return np.stack([t.outcomes for t in self.trials])

    @property
    def degenerate_count(self) -> int:
        return sum(1 for t in self.trials if t.degenerate)


@dataclass(frozen=True)
class FairnessReport:
    """Everything a run produces, keyed for stable serialization.

    per_assignee: metric name -> epsilon string -> assignee -> value
    aggregates:   aggregate name -> epsilon string -> value
    config_echo:  the resolved run configuration (worker count excluded,
                  because it must not affect output bytes)
    """

    config_echo: dict = field(default_factory=dict)
    per_assignee: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)
