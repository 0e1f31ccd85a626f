"""Between-table (structural) fidelity metrics.

Covers link integrity, the cluster-size distribution, cross-level
dependence (parent column x child column pairs, one hop apart), the
intra-class correlation and cluster-mean reliability of child columns,
and the generalization check (fraction of synthetic rows that are not
copies of real rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ..dataset import MultilevelDataset, join_as_one
from ..errors import MetricError
from ..schema import CATEGORICAL, NUMERIC
from ..varcomp import estimate_variance_components, icc_columns
from .scores import MetricScore, mean_score
from .within import (
    contingency_similarity,
    correlation_similarity,
    eta_squared_similarity,
    ks_distance,
    mi_similarity,
)

NUMERIC_MATCH_TOL = 1e-9


def referential_integrity(d: MultilevelDataset, name: str = "referential_integrity") -> MetricScore:
    """Proportion of child rows whose foreign key resolves to a parent row."""
    if d.n_children == 0:
        raise MetricError("empty child table")
    matched = d.n_children - d.orphan_count
    return MetricScore.of(name, matched / d.n_children)


def cardinality_shape_similarity(
    real: MultilevelDataset, synth: MultilevelDataset, name: str = "cardinality_shape"
) -> MetricScore:
    """KS complement between the two cluster-size distributions."""
    r = real.cluster_sizes.to_numpy(dtype=float)
    s = synth.cluster_sizes.to_numpy(dtype=float)
    return MetricScore.of(name, 1.0 - ks_distance(r, s))


def _linked_flat(d: MultilevelDataset) -> pd.DataFrame:
    flat = join_as_one(d)
    if d.orphan_count:
        flat = flat.loc[~d.orphan_mask].reset_index(drop=True)
    return flat


def khop_pair_score(
    real: MultilevelDataset,
    synth: MultilevelDataset,
    parent_col: str,
    child_col: str,
) -> MetricScore:
    """Cross-level dependence similarity for one parent/child column pair.

    Numeric x numeric pairs use correlation similarity, categorical pairs
    contingency similarity, and mixed pairs eta-squared similarity, all
    computed on the joined (one row per child) view.
    """
    p_kind = real.schema.parent.column(parent_col).kind
    c_kind = real.schema.child.column(child_col).kind
    fr, fs = _linked_flat(real), _linked_flat(synth)
    name = f"khop_{{}}:{parent_col}|{child_col}"
    rp, rc = fr[parent_col].to_numpy(), fr[child_col].to_numpy()
    sp, sc = fs[parent_col].to_numpy(), fs[child_col].to_numpy()
    if p_kind == NUMERIC and c_kind == NUMERIC:
        return correlation_similarity(rp, rc, sp, sc, name=name.format("correlation"))
    if p_kind == CATEGORICAL and c_kind == CATEGORICAL:
        return contingency_similarity(rp, rc, sp, sc, name=name.format("contingency"))
    if p_kind == NUMERIC:
        return eta_squared_similarity(rp, rc, sp, sc, name=name.format("eta_squared"))
    return eta_squared_similarity(rc, rp, sc, sp, name=name.format("eta_squared"))


def khop_mi_similarity(
    real: MultilevelDataset, synth: MultilevelDataset, name: str = "khop_mi"
) -> MetricScore:
    """MI similarity restricted to the cross-level block of column pairs."""
    p_num = real.schema.parent.numeric_columns()
    p_cat = real.schema.parent.categorical_columns()
    c_num = real.schema.child.numeric_columns()
    c_cat = real.schema.child.categorical_columns()
    p_cols = p_num + p_cat
    c_cols = c_num + c_cat
    if not p_cols or not c_cols:
        return MetricScore.skip(name, "no cross-level column pairs")
    fr, fs = _linked_flat(real), _linked_flat(synth)
    pairs = [(p, c) for p in p_cols for c in c_cols]
    return mi_similarity(
        fr, fs, numeric_cols=p_num + c_num, categorical_cols=p_cat + c_cat,
        name=name, pair_block=pairs,
    )


def icc_similarity(
    real: MultilevelDataset, synth: MultilevelDataset, column: str, name: Optional[str] = None
) -> MetricScore:
    """(1 - |ICC_s - ICC_r|)^3; the cube sharpens small differences."""
    name = name or f"icc:{column}"
    try:
        icc_r = estimate_variance_components(real, column).icc
        icc_s = estimate_variance_components(synth, column).icc
    except MetricError as exc:
        return MetricScore.skip(name, str(exc))
    return MetricScore.of(name, (1.0 - abs(icc_s - icc_r)) ** 3)


def reliability_similarity(
    real: MultilevelDataset, synth: MultilevelDataset, column: str, name: Optional[str] = None
) -> MetricScore:
    """1 - |Rel_s - Rel_r|, each reliability at its own mean cluster size."""
    name = name or f"reliability:{column}"
    try:
        rel_r = estimate_variance_components(real, column).reliability
        rel_s = estimate_variance_components(synth, column).reliability
    except MetricError as exc:
        return MetricScore.skip(name, str(exc))
    return MetricScore.of(name, 1.0 - abs(rel_s - rel_r))


def _attribute_frame(d: MultilevelDataset) -> tuple[pd.DataFrame, list[str], list[str]]:
    flat = _linked_flat(d)
    num = d.schema.child.numeric_columns() + d.schema.parent.numeric_columns()
    cat = d.schema.child.categorical_columns() + d.schema.parent.categorical_columns()
    return flat[num + cat], num, cat


def generalization_score(
    real: MultilevelDataset, synth: MultilevelDataset, name: str = "generalization"
) -> MetricScore:
    """Proportion of synthetic joined rows with no exact real counterpart.

    Key columns are excluded (ids are arbitrary labels); numeric fields
    match within 1e-9, categorical fields exactly.
    """
    real_flat, num, cat = _attribute_frame(real)
    synth_flat, _, _ = _attribute_frame(synth)
    if len(synth_flat) == 0:
        raise MetricError("empty synthetic table")

    real_groups: dict = {}
    for sig, block in real_flat.groupby(cat, sort=False) if cat else [((), real_flat)]:
        key = sig if isinstance(sig, tuple) else (sig,)
        arr = block[num].to_numpy(dtype=float)
        order = np.argsort(arr[:, 0], kind="stable") if num else np.arange(len(arr))
        real_groups[key] = arr[order]

    copies = 0
    synth_cats = synth_flat[cat].to_numpy() if cat else np.empty((len(synth_flat), 0))
    synth_nums = synth_flat[num].to_numpy(dtype=float) if num else np.empty((len(synth_flat), 0))
    for i in range(len(synth_flat)):
        block = real_groups.get(tuple(synth_cats[i]))
        if block is None:
            continue
        if not num:
            copies += 1
            continue
        lo = np.searchsorted(block[:, 0], synth_nums[i, 0] - NUMERIC_MATCH_TOL, side="left")
        hi = np.searchsorted(block[:, 0], synth_nums[i, 0] + NUMERIC_MATCH_TOL, side="right")
        if hi > lo and np.any(
            np.all(np.abs(block[lo:hi] - synth_nums[i]) <= NUMERIC_MATCH_TOL, axis=1)
        ):
            copies += 1
    return MetricScore.of(name, 1.0 - copies / len(synth_flat))


@dataclass(frozen=True)
class BetweenTableReport:
    referential_integrity: MetricScore
    cardinality_shape: MetricScore
    khop: tuple[MetricScore, ...]
    khop_mi: MetricScore
    icc: tuple[MetricScore, ...]
    reliability: tuple[MetricScore, ...]

    def all_scores(self) -> list[MetricScore]:
        return [
            self.referential_integrity,
            self.cardinality_shape,
            *self.khop,
            self.khop_mi,
            *self.icc,
            *self.reliability,
        ]

    @property
    def between_avg(self) -> Optional[float]:
        return mean_score(self.all_scores())

    def to_dict(self) -> dict:
        return {
            "referential_integrity": self.referential_integrity.to_dict(),
            "cardinality_shape": self.cardinality_shape.to_dict(),
            "khop": [s.to_dict() for s in self.khop],
            "khop_mi": self.khop_mi.to_dict(),
            "icc": [s.to_dict() for s in self.icc],
            "reliability": [s.to_dict() for s in self.reliability],
            "khop_avg": mean_score(list(self.khop) + [self.khop_mi]),
            "icc_avg": mean_score(self.icc),
            "reliability_avg": mean_score(self.reliability),
            "between_avg": self.between_avg,
        }


def between_table_report(real: MultilevelDataset, synth: MultilevelDataset) -> BetweenTableReport:
    """All between-table fidelity scores for a real/synthetic dataset pair."""
    khop_scores = [
        khop_pair_score(real, synth, p, c)
        for p in real.schema.parent.column_names
        for c in real.schema.child.column_names
    ]
    icc_scores = [icc_similarity(real, synth, c) for c in icc_columns(real)]
    rel_scores = [reliability_similarity(real, synth, c) for c in icc_columns(real)]
    return BetweenTableReport(
        referential_integrity=referential_integrity(synth),
        cardinality_shape=cardinality_shape_similarity(real, synth),
        khop=tuple(khop_scores),
        khop_mi=khop_mi_similarity(real, synth),
        icc=tuple(icc_scores),
        reliability=tuple(rel_scores),
    )
