"""Occurrence intensity of extreme geomagnetic storms under a proportional-hazard Poisson model."""

__version__ = "0.1.0"

from .decluster import DeclusterConfig, Storm, decluster, gradient_series, max_multiplicity_stats
from .hazard import (
    CycleCounts,
    HazardFit,
    P400Estimate,
    WarpedStorm,
    count_by_cycle,
    estimate_p400,
    fit_beta,
    sufficiency_check,
    warp,
)
from .ingest import (
    LEGAL_AP_VALUES,
    ApSeries,
    CycleRecord,
    Dataset,
    IngestError,
    center_covariates,
    load_dataset,
    parse_ap_series,
    parse_cycles,
)
from .kernel import IntensityCurve, KernelConfig, cv_bandwidth, estimate_lambda0, ongoing_correction, to_per_year
from .risk import (
    CyclePrediction,
    RiskCurve,
    chi_square_independence,
    extrapolate,
    frequency_table,
    predict_cycle,
    relative_risk,
)
from .simulate import SimSpec, simulate_events, simulate_series
