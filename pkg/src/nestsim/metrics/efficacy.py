"""Machine-learning efficacy: train-on-synthetic vs train-on-real gap.

For each target column, the real child rows are split into folds by
whole clusters.  Per fold, the train-on-real model fits on the remaining
real folds and the train-on-synthetic model fits on the synthetic data
minus the matching synthetic fold (the synthetic clusters are folded by
the same seeded shuffle, so identical datasets get identical training
sets and an efficacy score of exactly 1).  Both evaluate on the held-out
real fold: R^2 with a random-intercept mixed regressor for numeric
targets, macro-F1 with a ridge multinomial logit over predictors plus
cluster means of numeric predictors for categorical targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import f1_score

from ..dataset import MultilevelDataset, join_as_one
from ..errors import MetricError, ModelFitError
from ..features import build_design, standardizer
from ..models import LinearModel, MixedModel, MultinomialLogit
from ..seeding import derive_seed
from ..schema import CATEGORICAL, NUMERIC
from .scores import MetricScore, mean_score

R2 = "r2"
MACRO_F1 = "macro_f1"


@dataclass(frozen=True)
class EfficacyScore:
    target: str
    level: str
    metric_kind: str
    m_tstr: float
    m_trtr: float
    value: float
    skipped: bool = False
    reason: Optional[str] = None

    @classmethod
    def skip(cls, target: str, level: str, reason: str) -> "EfficacyScore":
        return cls(target=target, level=level, metric_kind="", m_tstr=float("nan"),
                   m_trtr=float("nan"), value=float("nan"), skipped=True, reason=reason)

    def to_dict(self) -> dict:
        d = {
            "target": self.target,
            "level": self.level,
            "metric_kind": self.metric_kind,
            "m_tstr": None if self.skipped else self.m_tstr,
            "m_trtr": None if self.skipped else self.m_trtr,
            "value": None if self.skipped else self.value,
        }
        if self.skipped:
            d["skipped"] = True
            d["reason"] = self.reason
        return d


def _fold_assignment(cluster_ids: Sequence, folds: int, seed: int) -> dict:
    """Map cluster id -> fold index by a seeded shuffle of the sorted ids."""
    ids = sorted(map(str, cluster_ids))
    if len(ids) < folds:
        raise MetricError(f"need at least {folds} clusters for {folds}-fold evaluation")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    assignment = {}
    for fold, chunk in enumerate(np.array_split(order, folds)):
        for idx in chunk:
            assignment[ids[idx]] = fold
    return assignment


def _union_categories(real: MultilevelDataset, synth: MultilevelDataset, table: str) -> dict:
    spec_r = getattr(real.schema, table)
    spec_s = getattr(synth.schema, table)
    out = {}
    for c in spec_r.categorical_columns():
        cats_r = spec_r.column(c).categories or ()
        cats_s = spec_s.column(c).categories or ()
        out[c] = sorted(set(cats_r) | set(cats_s))
    return out


def _r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("constant target in evaluation fold")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def _child_frames(d: MultilevelDataset) -> pd.DataFrame:
    return join_as_one(d)


def _score_numeric_child(train, test, target, predictors, fk):
    x_tr, names = build_design(train, *predictors)
    x_te, _ = build_design(test, *predictors)
    model = MixedModel().fit(x_tr, train[target].to_numpy(dtype=float),
                             train[fk].to_numpy(), feature_names=names)
    pred = model.predict(x_te, clusters=test[fk].to_numpy(), rule="multilevel")
    return _r2(test[target].to_numpy(dtype=float), pred)


def _score_categorical_child(train, test, target, predictors, fk, labels):
    num_cols, cat_cols = predictors
    x_tr, _ = build_design(train, num_cols, cat_cols, intercept=False,
                           cluster_means_of=num_cols, cluster_col=fk)
    x_te, _ = build_design(test, num_cols, cat_cols, intercept=False,
                           cluster_means_of=num_cols, cluster_col=fk)
    mu, sd = standardizer(x_tr)
    x_tr = np.column_stack([np.ones(len(x_tr)), (x_tr - mu) / sd])
    x_te = np.column_stack([np.ones(len(x_te)), (x_te - mu) / sd])
    model = MultinomialLogit().fit(x_tr, train[target].to_numpy())
    pred = model.predict(x_te)
    return float(f1_score(test[target].to_numpy(), pred, labels=labels,
                          average="macro", zero_division=0))


def ml_efficacy(
    real: MultilevelDataset,
    synth: MultilevelDataset,
    target_column: str,
    folds: int = 5,
    seed: int = 0,
) -> EfficacyScore:
    """Efficacy of one child-level target: clamp(1 - |m_TSTR - m_TRTR|, 0, 1)."""
    spec = real.schema.child.column(target_column)
    fk = real.schema.child.foreign_key
    real_flat = _child_frames(real)
    synth_flat = _child_frames(synth)

    num_cols = [c for c in real.schema.child.numeric_columns() if c != target_column]
    num_cols += real.schema.parent.numeric_columns()
    cat_union = {**_union_categories(real, synth, "child"), **_union_categories(real, synth, "parent")}
    cat_cols = {c: cats for c, cats in cat_union.items() if c != target_column}

    real_folds = _fold_assignment(real.cluster_sizes.index, folds, seed)
    synth_folds = _fold_assignment(synth.cluster_sizes.index, folds, seed)
    real_fold_of = real_flat[fk].map(real_folds).to_numpy()
    synth_fold_of = synth_flat[fk].map(synth_folds).to_numpy()

    if spec.kind == NUMERIC:
        if float(np.std(real_flat[target_column].to_numpy(dtype=float))) == 0.0:
            raise MetricError(f"target {target_column!r} is constant")
        metric_kind = R2
    else:
        if real_flat[target_column].nunique() < 2 or synth_flat[target_column].nunique() < 2:
            raise MetricError(f"target {target_column!r} has fewer than 2 classes")
        metric_kind = MACRO_F1
        labels = sorted(set(cat_union.get(target_column, [])) | set(real_flat[target_column]))

    m_tstr_folds, m_trtr_folds = [], []
    predictors = (num_cols, cat_cols)
    for fold in range(folds):
        test = real_flat.loc[real_fold_of == fold]
        trtr_train = real_flat.loc[real_fold_of != fold]
        tstr_train = synth_flat.loc[synth_fold_of != fold]
        if metric_kind == R2:
            m_trtr_folds.append(_score_numeric_child(trtr_train, test, target_column, predictors, fk))
            m_tstr_folds.append(_score_numeric_child(tstr_train, test, target_column, predictors, fk))
        else:
            m_trtr_folds.append(
                _score_categorical_child(trtr_train, test, target_column, predictors, fk, labels)
            )
            m_tstr_folds.append(
                _score_categorical_child(tstr_train, test, target_column, predictors, fk, labels)
            )
    m_tstr = float(np.mean(m_tstr_folds))
    m_trtr = float(np.mean(m_trtr_folds))
    value = min(1.0, max(0.0, 1.0 - abs(m_tstr - m_trtr)))
    return EfficacyScore(target=target_column, level="child", metric_kind=metric_kind,
                         m_tstr=m_tstr, m_trtr=m_trtr, value=value)


def _parent_frame(d: MultilevelDataset) -> pd.DataFrame:
    """Parent rows with cluster means of numeric child columns appended."""
    ppk = d.schema.parent.primary_key
    fk = d.schema.child.foreign_key
    frame = d.parent.copy()
    child_num = d.schema.child.numeric_columns()
    if child_num:
        means = d.child.groupby(fk, sort=True)[child_num].mean()
        means.columns = [f"{c}__gmean" for c in child_num]
        frame = frame.merge(means, left_on=ppk, right_index=True, how="left")
        frame[means.columns.tolist()] = frame[means.columns.tolist()].fillna(0.0)
    return frame


def parent_efficacy(
    real: MultilevelDataset,
    synth: MultilevelDataset,
    target_column: str,
    folds: int = 5,
    seed: int = 0,
) -> EfficacyScore:
    """Efficacy of one parent-level target (one row per cluster)."""
    spec = real.schema.parent.column(target_column)
    ppk = real.schema.parent.primary_key
    real_frame = _parent_frame(real)
    synth_frame = _parent_frame(synth)

    num_cols = [c for c in real.schema.parent.numeric_columns() if c != target_column]
    num_cols += [f"{c}__gmean" for c in real.schema.child.numeric_columns()]
    cat_union = _union_categories(real, synth, "parent")
    cat_cols = {c: cats for c, cats in cat_union.items() if c != target_column}

    real_folds = _fold_assignment(real_frame[ppk], folds, seed)
    synth_folds = _fold_assignment(synth_frame[ppk], folds, seed)
    real_fold_of = real_frame[ppk].map(real_folds).to_numpy()
    synth_fold_of = synth_frame[ppk].map(synth_folds).to_numpy()

    if spec.kind == NUMERIC:
        if float(np.std(real_frame[target_column].to_numpy(dtype=float))) == 0.0:
            raise MetricError(f"target {target_column!r} is constant")
        metric_kind = R2
    else:
        if real_frame[target_column].nunique() < 2 or synth_frame[target_column].nunique() < 2:
            raise MetricError(f"target {target_column!r} has fewer than 2 classes")
        metric_kind = MACRO_F1
        labels = sorted(set(cat_union.get(target_column, [])) | set(real_frame[target_column]))

    m_tstr_folds, m_trtr_folds = [], []
    for fold in range(folds):
        test = real_frame.loc[real_fold_of == fold]
        trtr_train = real_frame.loc[real_fold_of != fold]
        tstr_train = synth_frame.loc[synth_fold_of != fold]
        for bucket, train in ((m_trtr_folds, trtr_train), (m_tstr_folds, tstr_train)):
            if metric_kind == R2:
                x_tr, names = build_design(train, num_cols, cat_cols)
                x_te, _ = build_design(test, num_cols, cat_cols)
                model = LinearModel().fit(x_tr, train[target_column].to_numpy(dtype=float),
                                          feature_names=names)
                bucket.append(_r2(test[target_column].to_numpy(dtype=float), model.predict(x_te)))
            else:
                x_tr, _ = build_design(train, num_cols, cat_cols, intercept=False)
                x_te, _ = build_design(test, num_cols, cat_cols, intercept=False)
                mu, sd = standardizer(x_tr)
                x_tr = np.column_stack([np.ones(len(x_tr)), (x_tr - mu) / sd])
                x_te = np.column_stack([np.ones(len(x_te)), (x_te - mu) / sd])
                model = MultinomialLogit().fit(x_tr, train[target_column].to_numpy())
                bucket.append(float(f1_score(test[target_column].to_numpy(), model.predict(x_te),
                                             labels=labels, average="macro", zero_division=0)))
    m_tstr = float(np.mean(m_tstr_folds))
    m_trtr = float(np.mean(m_trtr_folds))
    value = min(1.0, max(0.0, 1.0 - abs(m_tstr - m_trtr)))
    return EfficacyScore(target=target_column, level="parent", metric_kind=metric_kind,
                         m_tstr=m_tstr, m_trtr=m_trtr, value=value)


@dataclass(frozen=True)
class EfficacyReport:
    child: tuple[EfficacyScore, ...]
    parent: tuple[EfficacyScore, ...]

    @staticmethod
    def _avg(scores) -> Optional[float]:
        vals = [s.value for s in scores if not s.skipped]
        return float(np.mean(vals)) if vals else None

    @property
    def child_avg(self) -> Optional[float]:
        return self._avg(self.child)

    @property
    def parent_avg(self) -> Optional[float]:
        return self._avg(self.parent)

    @property
    def overall_avg(self) -> Optional[float]:
        return self._avg(list(self.child) + list(self.parent))

    def to_dict(self) -> dict:
        return {
            "child": [s.to_dict() for s in self.child],
            "parent": [s.to_dict() for s in self.parent],
            "child_avg": self.child_avg,
            "parent_avg": self.parent_avg,
            "overall_avg": self.overall_avg,
        }


def efficacy_report(
    real: MultilevelDataset,
    synth: MultilevelDataset,
    seed: int = 0,
    folds: int = 5,
) -> EfficacyReport:
    """Per-target efficacy scores with child-, parent-, and overall averages.

    Targets that cannot be scored (constant columns, too few clusters)
    are reported as skipped and excluded from the averages.
    """
    child_scores = []
    for i, col in enumerate([c.name for c in real.schema.child.columns]):
        target_seed = derive_seed(seed, 0, i, f"efficacy:child:{col}")
        try:
            child_scores.append(ml_efficacy(real, synth, col, folds=folds, seed=target_seed))
        except (MetricError, ModelFitError) as exc:
            child_scores.append(EfficacyScore.skip(col, "child", str(exc)))
    parent_scores = []
    for i, col in enumerate([c.name for c in real.schema.parent.columns]):
        target_seed = derive_seed(seed, 1, i, f"efficacy:parent:{col}")
        try:
            parent_scores.append(parent_efficacy(real, synth, col, folds=folds, seed=target_seed))
        except (MetricError, ModelFitError) as exc:
            parent_scores.append(EfficacyScore.skip(col, "parent", str(exc)))
    return EfficacyReport(child=tuple(child_scores), parent=tuple(parent_scores))
