"""Replication engine for predictive-performance and parameter-recovery studies.

A study is a grid of cluster-count conditions, each run for a fixed
number of replications.  Every replication is a pure function of a seed
derived from (master seed, condition, replication, stream), so results
are identical no matter how replications are scheduled across workers;
the reduction step orders by (condition, replication).

Predictive studies hold out one random child per cluster (clusters of
size one stay in training), fit the cluster-fixed-effects rule and one
mixed model, and score predictive mean squared error for the ols_fe,
prior (fixed effects only), and multilevel (fixed effects + BLUPs)
rules.  Recovery studies regenerate the outcome from a known model each
replication, fit OLS/HLM with and without cluster means of the child
covariates plus the oracle model, and score relative coefficient bias,
relative SE bias, and 95% interval coverage for tracked coefficients.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .dataset import MultilevelDataset, join_as_one
from .errors import DesignError, ModelFitError
from .features import build_design
from .generators import (
    HierarchicalGaussianSpec,
    HuangDGPSpec,
    OutcomeModelSpec,
    cluster_bootstrap,
    generate_hierarchical,
    generate_huang,
    regenerate_outcome,
)
from .models import ClusterFixedEffectsModel, LinearModel, MixedModel, wald_interval
from .seeding import derive_seed

PREDICTIVE_METHODS = ("ols_fe", "prior", "multilevel")
RECOVERY_MODELS = ("ols", "ols_igm", "hlm", "hlm_igm", "oracle")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NESTSIM_WORKERS", "1")))
    except ValueError:
        return 1


# -- data sources -------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSource:
    """Fresh dataset per replication from a parametric generator."""

    kind: str  # "hierarchical" | "huang"
    spec: object

    def draw(self, j: int, seed: int) -> MultilevelDataset:
        if self.kind == "hierarchical":
            spec = self.spec
            if spec.n_clusters != j:
                spec = dataclasses.replace(spec, n_clusters=j)
            return generate_hierarchical(spec, seed)
        if self.kind == "huang":
            return generate_huang(self.spec, j, seed)
        raise DesignError(f"unknown generator kind {self.kind!r}")


@dataclass(frozen=True)
class PoolSource:
    """Draw clusters from a fixed external dataset (without replacement)."""

    pool: MultilevelDataset
    replace: bool = False

    def draw(self, j: int, seed: int) -> MultilevelDataset:
        return cluster_bootstrap(self.pool, j, seed, replace=self.replace)


# -- designs -------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveDesign:
    source: object
    outcome: str
    predictors: tuple[str, ...]
    conditions: tuple[int, ...] = (10, 25, 50, 100, 300)
    replications: int = 500
    master_seed: int = 0
    slope_column: Optional[str] = None
    interactions: tuple[tuple[str, str], ...] = ()
    methods: tuple[str, ...] = PREDICTIVE_METHODS

    def __post_init__(self):
        if self.replications < 2:
            raise DesignError("criteria need at least 2 replications")
        bad = set(self.methods) - set(PREDICTIVE_METHODS)
        if bad:
            raise DesignError(f"unknown methods {sorted(bad)}")


@dataclass(frozen=True)
class RecoveryDesign:
    source: object
    truth: OutcomeModelSpec
    omitted: tuple[str, ...] = ()
    tracked: tuple[str, ...] = ()
    conditions: tuple[int, ...] = (10, 30, 50, 100)
    replications: int = 500
    master_seed: int = 0
    models: tuple[str, ...] = RECOVERY_MODELS

    def __post_init__(self):
        if self.replications < 2:
            raise DesignError("criteria need at least 2 replications")
        bad = set(self.models) - set(RECOVERY_MODELS)
        if bad:
            raise DesignError(f"unknown models {sorted(bad)}")


@dataclass(frozen=True)
class StudyResult:
    kind: str
    master_seed: int
    conditions: tuple[int, ...]
    replications: int
    cells: dict  # (condition, method, criterion) -> summary dict
    log: pd.DataFrame = field(compare=False)

    def cell(self, condition: int, method: str, criterion: str) -> dict:
        return self.cells[(condition, method, criterion)]

    def to_dict(self) -> dict:
        records = [
            {"condition": c, "method": m, "criterion": k, **summary}
            for (c, m, k), summary in sorted(self.cells.items())
        ]
        return {
            "kind": self.kind,
            "master_seed": self.master_seed,
            "conditions": list(self.conditions),
            "replications": self.replications,
            "cells": records,
        }


# -- predictive study ----------------------------------------------------------


def _holdout_split(d: MultilevelDataset, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One random held-out child per cluster of size >= 2."""
    rng = np.random.default_rng(seed)
    fk = d.schema.child.foreign_key
    labels = d.child[fk].to_numpy()
    test_idx = []
    for _, idx in pd.Series(np.arange(len(labels))).groupby(labels, sort=True):
        if len(idx) >= 2:
            test_idx.append(idx.iloc[int(rng.integers(0, len(idx)))])
    if not test_idx:
        raise ModelFitError("no cluster has 2+ children; nothing to hold out")
    test = np.zeros(len(labels), dtype=bool)
    test[np.asarray(test_idx)] = True
    return ~test, test


def _predictive_replication(design: PredictiveDesign, ci: int, rep: int) -> list[dict]:
    j = design.conditions[ci]
    data_seed = derive_seed(design.master_seed, ci, rep, "data")
    d = design.source.draw(j, data_seed)
    flat = join_as_one(d)
    fk = d.schema.child.foreign_key

    cat_cols = {}
    num_cols = []
    for name in design.predictors:
        if name in d.schema.child.column_names:
            spec = d.schema.child.column(name)
        else:
            spec = d.schema.parent.column(name)
        if spec.kind == "numeric":
            num_cols.append(name)
        else:
            cat_cols[name] = list(spec.categories or sorted(set(flat[name])))

    x, names = build_design(flat, num_cols, cat_cols, intercept=True,
                            interactions=design.interactions)
    y = flat[design.outcome].to_numpy(dtype=float)
    clusters = flat[fk].to_numpy()
    train, test = _holdout_split(d, derive_seed(design.master_seed, ci, rep, "holdout"))

    slope_idx = names.index(design.slope_column) if design.slope_column else None
    rows = []

    lmm = None
    if {"prior", "multilevel"} & set(design.methods):
        try:
            lmm = MixedModel(slope_feature=slope_idx).fit(
                x[train], y[train], clusters[train], feature_names=names
            )
        except ModelFitError as exc:
            for method in ("prior", "multilevel"):
                if method in design.methods:
                    rows.append(_pred_row(j, rep, method, None, str(exc)))

    for method in design.methods:
        try:
            if method == "ols_fe":
                pred = _fit_predict_ols_fe(design, d, x, names, y, clusters, train, test)
            elif lmm is None:
                continue  # failure rows already recorded
            elif method == "prior":
                pred = lmm.predict(x[test], rule="prior")
            else:
                pred = lmm.predict(x[test], clusters=clusters[test], rule="multilevel")
            pmse = float(np.mean((y[test] - pred) ** 2))
            rows.append(_pred_row(j, rep, method, pmse, None))
        except ModelFitError as exc:
            rows.append(_pred_row(j, rep, method, None, str(exc)))
    return rows


def _fit_predict_ols_fe(design, d, x, names, y, clusters, train, test):
    # The cluster basis absorbs the intercept; keep the remaining columns.
    keep = [i for i, n in enumerate(names) if n != "(intercept)"]
    xc = x[:, keep]
    slope_values = None
    use_slope = False
    if design.slope_column is not None:
        slope_values = x[:, names.index(design.slope_column)]
        # Cluster slopes only when every training cluster shows variation.
        tr_clusters = clusters[train]
        tr_slope = slope_values[train]
        nunique = pd.Series(tr_slope).groupby(tr_clusters).nunique()
        use_slope = bool((nunique >= 2).all())
    model = ClusterFixedEffectsModel(slope=use_slope).fit(
        xc[train], y[train], clusters[train],
        slope_values=slope_values[train] if use_slope else None,
        feature_names=[names[i] for i in keep],
    )
    return model.predict(
        xc[test], clusters[test], slope_values=slope_values[test] if use_slope else None
    )


def _pred_row(condition, rep, method, pmse, error) -> dict:
    return {
        "condition": condition,
        "replication": rep,
        "method": method,
        "pmse": float("nan") if pmse is None else pmse,
        "error": error or "",
    }


def run_predictive_study(design: PredictiveDesign) -> StudyResult:
    rows = _run_replications(design, _predictive_replication)
    log = pd.DataFrame(rows).sort_values(["condition", "replication", "method"]).reset_index(drop=True)
    cells = {}
    for (cond, method), grp in log.groupby(["condition", "method"], sort=True):
        ok = grp.loc[grp["error"] == "", "pmse"].to_numpy()
        failures = int((grp["error"] != "").sum())
        cells[(int(cond), method, "pmse")] = _summary(ok, len(grp), failures)
    return StudyResult(
        kind="predictive",
        master_seed=design.master_seed,
        conditions=design.conditions,
        replications=design.replications,
        cells=cells,
        log=log,
    )


def _summary(values: np.ndarray, n_total: int, failures: int) -> dict:
    n = values.size
    if n == 0:
        return {"value": None, "mc_se": None, "n": 0, "failures": failures}
    mc_se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else None
    return {"value": float(np.mean(values)), "mc_se": mc_se, "n": n, "failures": failures}


# -- recovery study --------------------------------------------------------------


def _recovery_features(design: RecoveryDesign, d: MultilevelDataset, flat: pd.DataFrame,
                       model: str):
    fk = d.schema.child.foreign_key
    child_cov = [c for c in d.schema.child.numeric_columns() if c != design.truth.name]
    parent_cov = list(d.schema.parent.numeric_columns())
    if model != "oracle":
        child_cov = [c for c in child_cov if c not in design.omitted]
        parent_cov = [c for c in parent_cov if c not in design.omitted]
    igm = model.endswith("_igm")
    return build_design(
        flat, child_cov + parent_cov,
        cluster_means_of=child_cov if igm else (),
        cluster_col=fk if igm else None,
    )


def _recovery_replication(design: RecoveryDesign, ci: int, rep: int) -> list[dict]:
    j = design.conditions[ci]
    d = design.source.draw(j, derive_seed(design.master_seed, ci, rep, "covariates"))
    d = regenerate_outcome(d, design.truth, derive_seed(design.master_seed, ci, rep, "outcome"))
    flat = join_as_one(d)
    fk = d.schema.child.foreign_key
    y = flat[design.truth.name].to_numpy(dtype=float)
    clusters = flat[fk].to_numpy()

    rows = []
    for model_name in design.models:
        x, names = _recovery_features(design, d, flat, model_name)
        try:
            if model_name.startswith("ols"):
                fit = LinearModel().fit(x, y, feature_names=names)
            else:
                fit = MixedModel().fit(x, y, clusters, feature_names=names)
            for coef in design.tracked:
                if coef not in names:
                    continue
                ival = wald_interval(fit, coef, level=0.95)
                rows.append({
                    "condition": j, "replication": rep, "method": model_name,
                    "coefficient": coef, "estimate": ival.estimate, "se": ival.se,
                    "lower": ival.lower, "upper": ival.upper, "error": "",
                })
        except ModelFitError as exc:
            for coef in design.tracked:
                rows.append({
                    "condition": j, "replication": rep, "method": model_name,
                    "coefficient": coef, "estimate": float("nan"), "se": float("nan"),
                    "lower": float("nan"), "upper": float("nan"), "error": str(exc),
                })
    return rows


def _true_value(design: RecoveryDesign, coef: str) -> float:
    if coef in design.truth.child_coefs:
        return float(design.truth.child_coefs[coef])
    if coef in design.truth.parent_coefs:
        return float(design.truth.parent_coefs[coef])
    if coef == "(intercept)":
        return float(design.truth.intercept)
    raise DesignError(f"tracked coefficient {coef!r} not in the truth model")


def run_recovery_study(design: RecoveryDesign) -> StudyResult:
    if not design.tracked:
        raise DesignError("recovery study needs tracked coefficients")
    rows = _run_replications(design, _recovery_replication)
    log = pd.DataFrame(rows).sort_values(
        ["condition", "replication", "method", "coefficient"]
    ).reset_index(drop=True)
    cells = {}
    for (cond, method, coef), grp in log.groupby(["condition", "method", "coefficient"], sort=True):
        ok = grp.loc[grp["error"] == ""]
        failures = int((grp["error"] != "").sum())
        theta = _true_value(design, coef)
        est = ok["estimate"].to_numpy()
        se = ok["se"].to_numpy()
        n = est.size
        base = {"n": n, "failures": failures}
        if n < 2:
            for crit in ("rel_coef_bias_pct", "rel_se_bias_pct", "coverage_95"):
                cells[(int(cond), method, f"{crit}:{coef}")] = {
                    "value": None, "mc_se": None, **base
                }
            continue
        sd_est = float(np.std(est, ddof=1))
        if theta != 0.0:
            bias = 100.0 * (float(np.mean(est)) - theta) / theta
            bias_name = f"rel_coef_bias_pct:{coef}"
            bias_se = 100.0 * float(np.std(est, ddof=1) / np.sqrt(n)) / abs(theta)
        else:
            bias = float(np.mean(est)) - theta
            bias_name = f"abs_coef_bias:{coef}"
            bias_se = float(np.std(est, ddof=1) / np.sqrt(n))
        cells[(int(cond), method, bias_name)] = {"value": bias, "mc_se": bias_se, **base}
        if sd_est > 0:
            se_bias = 100.0 * (float(np.mean(se)) - sd_est) / sd_est
        else:
            se_bias = None
        cells[(int(cond), method, f"rel_se_bias_pct:{coef}")] = {
            "value": se_bias, "mc_se": None, **base
        }
        covered = ((ok["lower"] <= theta) & (theta <= ok["upper"])).to_numpy()
        cov = float(np.mean(covered))
        cells[(int(cond), method, f"coverage_95:{coef}")] = {
            "value": cov,
            "mc_se": float(np.sqrt(cov * (1 - cov) / n)),
            **base,
        }
    return StudyResult(
        kind="recovery",
        master_seed=design.master_seed,
        conditions=design.conditions,
        replications=design.replications,
        cells=cells,
        log=log,
    )


# -- replication engine -----------------------------------------------------------

_WORKER_DESIGN = None
_WORKER_FN = None


def _init_worker(design, fn):
    global _WORKER_DESIGN, _WORKER_FN
    _WORKER_DESIGN = design
    _WORKER_FN = fn


def _run_task(task: tuple[int, int]) -> list[dict]:
    ci, rep = task
    return _WORKER_FN(_WORKER_DESIGN, ci, rep)


def _run_replications(design, fn) -> list[dict]:
    tasks = [(ci, rep) for ci in range(len(design.conditions))
             for rep in range(design.replications)]
    workers = worker_count()
    if workers == 1:
        results = [fn(design, ci, rep) for ci, rep in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(design, fn)
        ) as pool:
            chunk = max(1, len(tasks) // (workers * 8))
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    rows = []
    for r in results:
        rows.extend(r)
    return rows
