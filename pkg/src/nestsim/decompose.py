"""Cluster-mean decomposition of child-level numeric variables.

Each selected child column is split into a cluster-demeaned part (kept
on the child table under the original name) and a cluster-mean part
(appended to the parent table as ``<name>__cmean``).  The two parts add
back to the original values exactly, which is what the inverse
transform does.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import MultilevelDataset
from .errors import DataValidationError
from .schema import NUMERIC, ColumnSpec, MultilevelSchema, TableSpec

MEAN_SUFFIX = "__cmean"


@dataclass(frozen=True)
class DecomposedDataset:
    """A dataset whose listed child columns are cluster-demeaned."""

    data: MultilevelDataset
    columns: tuple[str, ...]


def _mean_column_specs(columns: Sequence[str]) -> tuple[ColumnSpec, ...]:
    return tuple(ColumnSpec(name=c + MEAN_SUFFIX, kind=NUMERIC) for c in columns)


def decompose(d: MultilevelDataset, columns: Optional[Sequence[str]] = None) -> DecomposedDataset:
    """Replace child columns by within-cluster deviations; means go to the parent."""
    child_numeric = set(d.schema.child.numeric_columns())
    if columns is None:
        columns = sorted(child_numeric)
    columns = list(columns)
    for c in columns:
        if c not in child_numeric:
            raise DataValidationError(f"cannot decompose non-numeric child column {c!r}")
    fk = d.schema.child.foreign_key
    ppk = d.schema.parent.primary_key

    child = d.child.copy()
    means = child.groupby(fk, sort=True)[columns].transform("mean")
    child[columns] = child[columns] - means

    per_cluster = d.child.groupby(fk, sort=True)[columns].mean()
    per_cluster.columns = [c + MEAN_SUFFIX for c in columns]
    parent = d.parent.merge(per_cluster, left_on=ppk, right_index=True, how="left")
    # Parents without children carry no mean; decomposition requires full linkage.
    if parent[per_cluster.columns.tolist()].isna().any().any():
        raise DataValidationError("decompose: some parent rows have no child rows")

    schema = MultilevelSchema(
        parent=TableSpec(
            name=d.schema.parent.name,
            primary_key=ppk,
            columns=d.schema.parent.columns + _mean_column_specs(columns),
        ),
        child=d.schema.child,
        delimiter=d.schema.delimiter,
    )
    data = MultilevelDataset.from_frames(parent, child, schema, mode=d.mode, meta=d.meta)
    return DecomposedDataset(data=data, columns=tuple(columns))


def recompose(dd: DecomposedDataset) -> MultilevelDataset:
    """Restore original child columns from demeaned values plus cluster means."""
    d = dd.data
    fk = d.schema.child.foreign_key
    ppk = d.schema.parent.primary_key
    mean_cols = [c + MEAN_SUFFIX for c in dd.columns]
    for mc in mean_cols:
        if mc not in d.parent.columns:
            raise DataValidationError(f"recompose: missing mean column {mc!r}")

    lookup = d.parent.set_index(ppk)[mean_cols]
    child = d.child.copy()
    mapped = lookup.reindex(child[fk]).to_numpy()
    child[list(dd.columns)] = child[list(dd.columns)].to_numpy() + mapped

    parent = d.parent.drop(columns=mean_cols)
    schema = MultilevelSchema(
        parent=TableSpec(
            name=d.schema.parent.name,
            primary_key=ppk,
            columns=tuple(c for c in d.schema.parent.columns if c.name not in mean_cols),
        ),
        child=d.schema.child,
        delimiter=d.schema.delimiter,
    )
    return MultilevelDataset.from_frames(parent, child, schema, mode=d.mode, meta=d.meta)


class ClusterMeanDecomposer(BaseEstimator, TransformerMixin):
    """Transformer interface over :func:`decompose` / :func:`recompose`.

    Stateless: the cluster means live in the transformed dataset itself,
    so ``fit`` only records the column selection.
    """

    def __init__(self, columns: Optional[Sequence[str]] = None):
        self.columns = columns

    def fit(self, X: MultilevelDataset, y=None):
        cols = self.columns if self.columns is not None else sorted(X.schema.child.numeric_columns())
        self.columns_ = tuple(cols)
        return self

    def transform(self, X: MultilevelDataset) -> DecomposedDataset:
        if not hasattr(self, "columns_"):
            self.fit(X)
        return decompose(X, self.columns_)

    def inverse_transform(self, X: DecomposedDataset) -> MultilevelDataset:
        return recompose(X)
