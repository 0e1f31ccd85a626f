from .between import (
    BetweenTableReport,
    between_table_report,
    cardinality_shape_similarity,
    generalization_score,
    icc_similarity,
    khop_mi_similarity,
    khop_pair_score,
    referential_integrity,
    reliability_similarity,
)
from .efficacy import EfficacyReport, EfficacyScore, efficacy_report, ml_efficacy, parent_efficacy
from .scores import MetricScore, categorize, mean_score
from .within import (
    WithinTableReport,
    contingency_similarity,
    correlation_similarity,
    eta_squared,
    eta_squared_similarity,
    ks_distance,
    ksc,
    mi_similarity,
    mutual_information,
    tv_distance,
    tvc,
    within_table_report,
)

__all__ = [
    "BetweenTableReport",
    "EfficacyReport",
    "EfficacyScore",
    "MetricScore",
    "WithinTableReport",
    "between_table_report",
    "cardinality_shape_similarity",
    "categorize",
    "contingency_similarity",
    "correlation_similarity",
    "efficacy_report",
    "eta_squared",
    "eta_squared_similarity",
    "generalization_score",
    "icc_similarity",
    "khop_mi_similarity",
    "khop_pair_score",
    "ks_distance",
    "ksc",
    "mean_score",
    "mi_similarity",
    "ml_efficacy",
    "mutual_information",
    "parent_efficacy",
    "referential_integrity",
    "reliability_similarity",
    "tv_distance",
    "tvc",
    "within_table_report",
]
