"""Schema model for two-level (parent/child) tabular data.

A schema names the two tables, their key columns, and the kind
(numeric or categorical) of every attribute column.  Schemas are
serialized as JSON documents of the shape::

    {
      "parent": {"name": ..., "primary_key": ...,
                 "columns": [{"name": ..., "kind": ..., "role": ...,
                              "categories": [...]}, ...]},
      "child":  {"name": ..., "primary_key": ..., "foreign_key": ...,
                 "columns": [...]}
    }

``role`` defaults to "attribute"; a child column may be marked
"outcome".  ``categories`` is optional; when absent the category set is
derived from data at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .errors import SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, CATEGORICAL)
ROLES = ("attribute", "outcome")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    role: str = "attribute"
    categories: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind == NUMERIC and self.categories is not None:
            raise SchemaError(f"numeric column {self.name!r} cannot declare categories")


@dataclass(frozen=True)
class TableSpec:
    name: str
    primary_key: str
    columns: tuple[ColumnSpec, ...]
    foreign_key: Optional[str] = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")
        keys = {self.primary_key} | ({self.foreign_key} if self.foreign_key else set())
        clash = keys & set(names)
        if clash:
            raise SchemaError(f"table {self.name!r}: key columns {sorted(clash)} also listed as attributes")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    def numeric_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == NUMERIC]

    def categorical_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == CATEGORICAL]


@dataclass(frozen=True)
class MultilevelSchema:
    """Parent and child table specs linked by the child's foreign key."""

    parent: TableSpec
    child: TableSpec
    delimiter: str = ","
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.child.foreign_key is None:
            raise SchemaError("child table must declare a foreign key")
        if self.parent.foreign_key is not None:
            raise SchemaError("parent table cannot declare a foreign key")
        # After a join the child keeps its keys and both attribute sets; the
        # only permitted shared name is FK == parent PK (the join column).
        collisions = set(self.parent.column_names) & set(self.child.column_names)
        if collisions:
            raise SchemaError(f"column name collision between tables: {sorted(collisions)}")
        reserved = {self.child.primary_key, self.child.foreign_key, self.parent.primary_key}
        bad = reserved & (set(self.parent.column_names) | set(self.child.column_names))
        if bad:
            raise SchemaError(f"key names reused as attribute names: {sorted(bad)}")

    @property
    def link_column(self) -> str:
        return self.child.foreign_key

    def with_categories(self, table: str, mapping: dict[str, Sequence[str]]) -> "MultilevelSchema":
        """Return a copy with category sets filled in for one table."""
        spec = self.parent if table == "parent" else self.child
        new_cols = []
        for c in spec.columns:
            if c.name in mapping:
                cats = tuple(sorted(set(map(str, mapping[c.name])) | set(c.categories or ())))
                new_cols.append(replace(c, categories=cats))
            else:
                new_cols.append(c)
        new_spec = replace(spec, columns=tuple(new_cols))
        if table == "parent":
            return replace(self, parent=new_spec)
        return replace(self, child=new_spec)


def _column_from_dict(d: dict) -> ColumnSpec:
    try:
        cats = d.get("categories")
        return ColumnSpec(
            name=str(d["name"]),
            kind=str(d["kind"]),
            role=str(d.get("role", "attribute")),
            categories=tuple(map(str, cats)) if cats is not None else None,
        )
    except KeyError as exc:
        raise SchemaError(f"column entry missing field {exc}") from exc


def _column_to_dict(c: ColumnSpec) -> dict:
    d = {"name": c.name, "kind": c.kind}
    if c.role != "attribute":
        d["role"] = c.role
    if c.categories is not None:
        d["categories"] = list(c.categories)
    return d


def schema_from_dict(doc: dict) -> MultilevelSchema:
    try:
        p, c = doc["parent"], doc["child"]
        parent = TableSpec(
            name=str(p.get("name", "parent")),
            primary_key=str(p["primary_key"]),
            columns=tuple(_column_from_dict(col) for col in p.get("columns", [])),
        )
        child = TableSpec(
            name=str(c.get("name", "child")),
            primary_key=str(c["primary_key"]),
            foreign_key=str(c["foreign_key"]),
            columns=tuple(_column_from_dict(col) for col in c.get("columns", [])),
        )
    except KeyError as exc:
        raise SchemaError(f"schema document missing field {exc}") from exc
    return MultilevelSchema(parent=parent, child=child, delimiter=str(doc.get("delimiter", ",")))


def schema_to_dict(schema: MultilevelSchema) -> dict:
    doc = {
        "parent": {
            "name": schema.parent.name,
            "primary_key": schema.parent.primary_key,
            "columns": [_column_to_dict(c) for c in schema.parent.columns],
        },
        "child": {
            "name": schema.child.name,
            "primary_key": schema.child.primary_key,
            "foreign_key": schema.child.foreign_key,
            "columns": [_column_to_dict(c) for c in schema.child.columns],
        },
    }
    if schema.delimiter != ",":
        doc["delimiter"] = schema.delimiter
    return doc


def load_schema(path) -> MultilevelSchema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return schema_from_dict(doc)


def save_schema(schema: MultilevelSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2, sort_keys=True)
        fh.write("\n")
