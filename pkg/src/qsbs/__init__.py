"""Quantile-parameterized scale-mixture Birnbaum-Saunders (QSBS) regression."""

from .distribution import (
    QsbsDistribution,
    qsbs_cdf,
    qsbs_logpdf,
    qsbs_moments,
    qsbs_pdf,
    qsbs_quantile,
    qsbs_sample,
    qsbs_sf,
    raw_moment,
)
from .em import EmSettings, FitResult, em_fit, initial_values, profile_nu
from .errors import (
    ConvergenceError,
    DataError,
    EvaluationError,
    MomentError,
    ParameterError,
    QsbsError,
    RankDeficiencyError,
    SingularInformationError,
)
from .inference import (
    HypothesisSpec,
    TestReport,
    criteria,
    gcs_residuals,
    residuals,
    rq_residuals,
    run_tests,
    simulated_envelope,
)
from .model import Dataset, ModelSpec, Theta, observed_loglik
from .smn import FamilyKind, MixtureFamily, smn_cdf, smn_pdf, smn_quantile

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DataError",
    "Dataset",
    "EmSettings",
    "EvaluationError",
    "FamilyKind",
    "FitResult",
    "HypothesisSpec",
    "MixtureFamily",
    "ModelSpec",
    "MomentError",
    "ParameterError",
    "QsbsDistribution",
    "QsbsError",
    "RankDeficiencyError",
    "SingularInformationError",
    "TestReport",
    "Theta",
    "criteria",
    "em_fit",
    "gcs_residuals",
    "initial_values",
    "observed_loglik",
    "profile_nu",
    "qsbs_cdf",
    "qsbs_logpdf",
    "qsbs_moments",
    "qsbs_pdf",
    "qsbs_quantile",
    "qsbs_sample",
    "qsbs_sf",
    "raw_moment",
    "residuals",
    "rq_residuals",
    "run_tests",
    "simulated_envelope",
    "smn_cdf",
    "smn_pdf",
    "smn_quantile",
]
