"""Loading, validation, and reshaping of two-level datasets.

A :class:`MultilevelDataset` holds one parent table (one row per
cluster) and one child table (one row per unit, carrying the cluster id
as a foreign key).  Loading is strict by default: referential
violations, duplicate keys, missing values, unknown categories, and
type-coercion failures all abort.  ``mode="audit"`` keeps orphan child
rows so that referential integrity can be scored instead of enforced.

Datasets are immutable after construction; every operation returns a
new object.  Rows are kept in canonical order (parent by primary key,
child by (cluster id, primary key)) so that downstream hashing and
reporting are deterministic regardless of input row order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from .errors import ConsistencyError, DataValidationError, SchemaError
from .schema import CATEGORICAL, NUMERIC, MultilevelSchema, TableSpec

STRICT = "strict"
AUDIT = "audit"


def _read_table(path, spec: TableSpec, delimiter: str) -> pd.DataFrame:
    df = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, na_values=[])
    missing = [c for c in _expected_columns(spec) if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path}: missing columns {missing} for table {spec.name!r}")
    unknown = [c for c in df.columns if c not in _expected_columns(spec)]
    if unknown:
        raise DataValidationError(f"{path}: unknown columns {unknown} for table {spec.name!r}")
    return df


def _expected_columns(spec: TableSpec) -> list[str]:
    keys = [spec.primary_key] + ([spec.foreign_key] if spec.foreign_key else [])
    return keys + spec.column_names


def _coerce_column(raw: pd.Series, col, source: str) -> pd.Series:
    blank = raw.isna() | (raw.astype(str).str.len() == 0)
    if blank.any():
        row = int(np.flatnonzero(blank.to_numpy())[0])
        raise DataValidationError(f"{source}: missing value in column {col.name!r} (row {row})")
    if col.kind == NUMERIC:
        coerced = pd.to_numeric(raw, errors="coerce")
        bad = coerced.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataValidationError(
                f"{source}: non-numeric value {raw.iloc[row]!r} in numeric "
                f"column {col.name!r} (row {row})"
            )
        return coerced.astype(float)
    vals = raw.astype(str)
    if col.categories is not None:
        extra = sorted(set(vals) - set(col.categories))
        if extra:
            raise DataValidationError(
                f"{source}: values {extra} in column {col.name!r} outside "
                f"the declared category set"
            )
    return vals


def _coerce_table(df: pd.DataFrame, spec: TableSpec, source: str) -> pd.DataFrame:
    out = pd.DataFrame(index=df.index)
    keys = [spec.primary_key] + ([spec.foreign_key] if spec.foreign_key else [])
    for key in keys:
        vals = df[key].astype(str)
        if (vals.str.len() == 0).any():
            raise DataValidationError(f"{source}: empty key value in column {key!r}")
        out[key] = vals
    for col in spec.columns:
        out[col.name] = _coerce_column(df[col.name], col, source)
    return out


def _check_unique(series: pd.Series, what: str, source: str) -> None:
    dup = series[series.duplicated()]
    if not dup.empty:
        raise DataValidationError(f"{source}: duplicate {what} {dup.iloc[0]!r}")


@dataclass(frozen=True)
class MultilevelDataset:
    """Validated, canonically ordered parent + child tables."""

    schema: MultilevelSchema
    parent: pd.DataFrame = field(compare=False)
    child: pd.DataFrame = field(compare=False)
    mode: str = STRICT
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_frames(
        cls,
        parent: pd.DataFrame,
        child: pd.DataFrame,
        schema: MultilevelSchema,
        mode: str = STRICT,
        source: str = "<frames>",
        meta: Optional[dict] = None,
    ) -> "MultilevelDataset":
        if mode not in (STRICT, AUDIT):
            raise ValueError(f"unknown mode {mode!r}")
        parent = _coerce_table(parent, schema.parent, f"{source}:parent")
        child = _coerce_table(child, schema.child, f"{source}:child")
        _check_unique(parent[schema.parent.primary_key], "primary key", f"{source}:parent")
        _check_unique(child[schema.child.primary_key], "primary key", f"{source}:child")

        fk = schema.child.foreign_key
        orphan = ~child[fk].isin(set(parent[schema.parent.primary_key]))
        if mode == STRICT and orphan.any():
            bad = child.loc[orphan, fk].iloc[0]
            raise DataValidationError(
                f"{source}: child foreign key {bad!r} has no matching parent row"
            )

        # Derive category sets where the schema leaves them open.
        schema = schema.with_categories(
            "parent",
            {c: parent[c].unique() for c in schema.parent.categorical_columns()},
        )
        schema = schema.with_categories(
            "child",
            {c: child[c].unique() for c in schema.child.categorical_columns()},
        )

        parent = parent.sort_values(schema.parent.primary_key, kind="stable").reset_index(drop=True)
        child = child.sort_values(
            [fk, schema.child.primary_key], kind="stable"
        ).reset_index(drop=True)
        return cls(schema=schema, parent=parent, child=child, mode=mode, meta=dict(meta or {}))

    # -- basic structure ------------------------------------------------

    @property
    def cluster_ids(self) -> np.ndarray:
        """Cluster identity of every child row, in canonical order."""
        return self.child[self.schema.child.foreign_key].to_numpy()

    @property
    def cluster_sizes(self) -> pd.Series:
        """Child counts per distinct cluster id appearing in the child table."""
        fk = self.schema.child.foreign_key
        return self.child.groupby(fk, sort=True).size()

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_sizes.size)

    @property
    def n_children(self) -> int:
        return int(len(self.child))

    @property
    def orphan_mask(self) -> np.ndarray:
        pk = set(self.parent[self.schema.parent.primary_key])
        return ~self.child[self.schema.child.foreign_key].isin(pk).to_numpy()

    @property
    def orphan_count(self) -> int:
        return int(self.orphan_mask.sum())

    def equals(self, other: "MultilevelDataset") -> bool:
        return (
            self.schema.parent == other.schema.parent
            and self.schema.child == other.schema.child
            and self.parent.equals(other.parent)
            and self.child.equals(other.child)
        )

    def replace_tables(self, parent=None, child=None, meta=None) -> "MultilevelDataset":
        return MultilevelDataset.from_frames(
            parent if parent is not None else self.parent,
            child if child is not None else self.child,
            self.schema,
            mode=self.mode,
            meta=meta if meta is not None else self.meta,
        )

    # -- I/O -------------------------------------------------------------

    def to_files(self, parent_path, child_path) -> None:
        sep = self.schema.delimiter
        self.parent.to_csv(parent_path, sep=sep, index=False)
        self.child.to_csv(child_path, sep=sep, index=False)


def load_dataset(parent_file, child_file, schema: MultilevelSchema, mode: str = STRICT) -> MultilevelDataset:
    """Load and validate a parent/child CSV pair against a schema."""
    parent = _read_table(parent_file, schema.parent, schema.delimiter)
    child = _read_table(child_file, schema.child, schema.delimiter)
    return MultilevelDataset.from_frames(
        parent, child, schema, mode=mode, source=f"{parent_file}|{child_file}"
    )


def join_as_one(d: MultilevelDataset) -> pd.DataFrame:
    """Return the single-table view: one row per child, parent attributes repeated."""
    fk = d.schema.child.foreign_key
    ppk = d.schema.parent.primary_key
    parent_attrs = d.parent[[ppk] + d.schema.parent.column_names]
    flat = d.child.merge(parent_attrs, left_on=fk, right_on=ppk, how="left")
    if ppk != fk:
        flat = flat.drop(columns=[ppk])
    cols = (
        [d.schema.child.primary_key, fk]
        + d.schema.child.column_names
        + d.schema.parent.column_names
    )
    return flat[cols]


def load_flat(path, schema: MultilevelSchema) -> pd.DataFrame:
    """Load a join-as-one CSV.

    Cluster-level values are *not* required to be consistent within a
    cluster here; that is exactly the defect alignment repairs.
    """
    df = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=False, na_values=[])
    cpk, fk = schema.child.primary_key, schema.child.foreign_key
    expected = [cpk, fk] + schema.child.column_names + schema.parent.column_names
    missing = [c for c in expected if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path}: flat table missing columns {missing}")
    out = pd.DataFrame(index=df.index)
    out[cpk] = df[cpk].astype(str)
    out[fk] = df[fk].astype(str)
    for spec in (schema.child, schema.parent):
        for col in spec.columns:
            out[col.name] = _coerce_column(df[col.name], col, str(path))
    _check_unique(out[cpk], "primary key", str(path))
    return out[expected]


def split_tables(flat: pd.DataFrame, schema: MultilevelSchema, mode: str = STRICT) -> MultilevelDataset:
    """Split a join-as-one table back into parent and child tables.

    Raises :class:`ConsistencyError` if any cluster carries more than one
    distinct value for a parent-level column (tolerance-free check).
    """
    fk = schema.child.foreign_key
    ppk = schema.parent.primary_key
    for col in schema.parent.column_names:
        counts = flat.groupby(fk, sort=True)[col].nunique()
        bad = counts[counts > 1]
        if not bad.empty:
            cluster = bad.index[0]
            values = flat.loc[flat[fk] == cluster, col].unique()
            raise ConsistencyError(cluster, col, values)
    parent = (
        flat[[fk] + schema.parent.column_names]
        .drop_duplicates(subset=[fk])
        .rename(columns={fk: ppk})
    )
    child = flat[[schema.child.primary_key, fk] + schema.child.column_names]
    return MultilevelDataset.from_frames(parent, child, schema, mode=mode, source="<flat>")
