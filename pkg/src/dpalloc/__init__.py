"""dpalloc: simulate allocation decisions made on privacy-protected statistics.

The library answers one question three ways: when noisy counts replace true
counts in a rigid allocation formula, who wins and who loses? It provides
release mechanisms, the allocation rules they feed, disparity metrics over
repeated trials, and two repair strategies, all reproducible bit-for-bit
from a seed.
"""

from .allocators import (
    CoverageLabel,
    QuotaVector,
    VraThresholds,
    apportion,
    quotas,
    title1_allocate,
    vra_classify,
    vra_classify_many,
    vra_classify_matrix,
)
from .errors import DpAllocError
from .harness import (
    ExperimentConfig,
    aggregate,
    derive_trial_stream,
    run_ensemble,
)
from .io import (
    emit_report,
    load_csv,
    parse_report,
    save_csv,
    synth_generate,
)
from .mechanisms import (
    GroupSmoothParams,
    Partition,
    RngStream,
    ZeroNoiseStream,
    clip_nonnegative,
    d_laplace,
    group_smooth,
    indist_threshold,
    interval_deviations,
    sample_laplace,
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
    PrivacyParams,
    StatMatrix,
    TrialEnsemble,
    validate_stat_matrix,
)
from .repair import (
    InflationParams,
    RepairParams,
    inflation_slacks,
    inflationary_allocate,
    posterior_covered,
    repair_classify,
)

__version__ = "0.1.0"
