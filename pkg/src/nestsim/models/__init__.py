"""Statistical estimators shared by the efficacy and study modules."""

from __future__ import annotations

from dataclasses import dataclass

from scipy import stats

from ..errors import ModelFitError
from .lmm import MixedModel, REMLProblem
from .logit import MultinomialLogit
from .ols import ClusterFixedEffectsModel, LinearModel

__all__ = [
    "ClusterFixedEffectsModel",
    "LinearModel",
    "MixedModel",
    "MultinomialLogit",
    "REMLProblem",
    "WaldInterval",
    "wald_interval",
]


@dataclass(frozen=True)
class WaldInterval:
    coefficient: str
    estimate: float
    se: float
    level: float
    lower: float
    upper: float


def wald_interval(fit, coefficient: str, level: float = 0.95) -> WaldInterval:
    """Normal-quantile confidence interval for one fitted coefficient."""
    try:
        idx = fit.feature_names_.index(coefficient)
    except ValueError as exc:
        raise ModelFitError(f"no coefficient named {coefficient!r}") from exc
    est = float(fit.coef_[idx])
    se = float(fit.se_[idx])
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return WaldInterval(
        coefficient=coefficient,
        estimate=est,
        se=se,
        level=level,
        lower=est - z * se,
        upper=est + z * se,
    )
