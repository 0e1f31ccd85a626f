"""Variance-component estimation for clustered variables.

One-way ANOVA method-of-moments on (possibly unbalanced) cluster data:

    sigma2_hat = MSW
    tau2_hat   = max(0, (MSB - MSW) / n_tilde)
    n_tilde    = (N - sum(n_j^2)/N) / (J - 1)

ICC = tau2/(tau2+sigma2), cluster-mean reliability uses the average
cluster size: n_bar*tau2/(n_bar*tau2+sigma2).  Binary variables keep the
ANOVA tau2 but fix sigma2 at pi^2/3 (standard-logistic variance); a
multicategory variable is scored through its per-category dummies, whose
ICCs are averaged with equal weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dataset import MultilevelDataset
from .errors import MetricError
from .schema import CATEGORICAL, NUMERIC

LOGISTIC_VARIANCE = math.pi**2 / 3.0


@dataclass(frozen=True)
class VarianceComponents:
    tau2: float
    sigma2: float
    icc: float
    reliability: float
    n_bar: float
    method: str

    def __post_init__(self):
        if self.tau2 < 0:
            raise MetricError("tau2 must be nonnegative")


def _anova_components(values: np.ndarray, clusters: np.ndarray) -> tuple[float, float, float]:
    """Return (tau2, sigma2, n_bar) from one-way ANOVA moments."""
    values = np.asarray(values, dtype=float)
    labels, inverse = np.unique(clusters, return_inverse=True)
    j = labels.size
    n = values.size
    if j < 2:
        raise MetricError("variance components need at least 2 clusters")
    sizes = np.bincount(inverse)
    if n == j:
        raise MetricError("all clusters have size 1; within-cluster variance undefined")
    sums = np.bincount(inverse, weights=values)
    means = sums / sizes
    grand = values.mean()
    ssb = float(np.sum(sizes * (means - grand) ** 2))
    ssw = float(np.sum((values - means[inverse]) ** 2))
    msb = ssb / (j - 1)
    msw = ssw / (n - j)
    n_tilde = (n - np.sum(sizes.astype(float) ** 2) / n) / (j - 1)
    tau2 = max(0.0, (msb - msw) / n_tilde)
    return tau2, msw, n / j


def _ratio(num: float, den: float) -> float:
    if den <= 0.0:
        return 0.0 if num == 0.0 else 1.0
    return num / den


def _components_from(tau2: float, sigma2: float, n_bar: float, method: str) -> VarianceComponents:
    icc = _ratio(tau2, tau2 + sigma2)
    rel = _ratio(n_bar * tau2, n_bar * tau2 + sigma2)
    if tau2 == 0.0:
        icc = 0.0
        rel = 0.0
    return VarianceComponents(tau2=tau2, sigma2=sigma2, icc=icc, reliability=rel,
                              n_bar=n_bar, method=method)


def estimate_variance_components(d: MultilevelDataset, column: str) -> VarianceComponents:
    """Estimate (tau2, sigma2, ICC, reliability) for one child column.

    Numeric columns use the plain ANOVA estimator.  Categorical columns
    with two categories are scored as a 0/1 dummy with sigma2 = pi^2/3;
    more categories are scored per-category and aggregated by unweighted
    mean of the category ICCs (tau2 is then back-solved from the
    aggregate so the ICC identity still holds).
    """
    spec = d.schema.child.column(column)
    clusters = d.cluster_ids
    if spec.kind == NUMERIC:
        values = d.child[column].to_numpy(dtype=float)
        tau2, sigma2, n_bar = _anova_components(values, clusters)
        return _components_from(tau2, sigma2, n_bar, "anova_numeric")

    values = d.child[column].to_numpy()
    categories = sorted(set(spec.categories or ()) | set(values.tolist()))
    if len(categories) < 2:
        raise MetricError(f"column {column!r} is constant; ICC undefined")
    if len(categories) == 2:
        dummy = (values == categories[1]).astype(float)
        tau2, _, n_bar = _anova_components(dummy, clusters)
        return _components_from(tau2, LOGISTIC_VARIANCE, n_bar, "anova_binary")

    iccs = []
    n_bar = d.n_children / d.n_clusters
    for cat in categories:
        dummy = (values == cat).astype(float)
        tau2_k, _, _ = _anova_components(dummy, clusters)
        iccs.append(_ratio(tau2_k, tau2_k + LOGISTIC_VARIANCE) if tau2_k > 0 else 0.0)
    icc = float(np.mean(iccs))
    # Implied tau2 at sigma2 = pi^2/3 keeps icc = tau2/(tau2+sigma2) valid.
    tau2 = LOGISTIC_VARIANCE * icc / (1.0 - icc) if icc < 1.0 else math.inf
    return _components_from(tau2, LOGISTIC_VARIANCE, n_bar, "anova_multicategorical")


def icc_columns(d: MultilevelDataset) -> list[str]:
    """Child columns eligible for ICC scoring (all attributes and outcomes)."""
    return [c.name for c in d.schema.child.columns]
