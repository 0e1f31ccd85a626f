import numpy as np
import pandas as pd
import pytest

from nestsim.dataset import (
    MultilevelDataset,
    join_as_one,
    load_dataset,
    load_flat,
    split_tables,
)
from nestsim.errors import ConsistencyError, DataValidationError, SchemaError
from nestsim.schema import ColumnSpec, MultilevelSchema, TableSpec, load_schema, save_schema, schema_from_dict


def test_load_well_formed(school_files, school_schema):
    d = load_dataset(*school_files, school_schema)
    assert d.n_clusters == 2
    assert d.n_children == 4
    assert d.cluster_sizes.tolist() == [2, 2]
    assert d.orphan_count == 0


def test_orphan_strict_fails(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child.loc[3, "SCH_ID"] = "S99"
    with pytest.raises(DataValidationError, match="S99"):
        MultilevelDataset.from_frames(parent, child, school_schema)


def test_orphan_audit_counts(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child.loc[3, "SCH_ID"] = "S99"
    d = MultilevelDataset.from_frames(parent, child, school_schema, mode="audit")
    assert d.orphan_count == 1


def test_duplicate_primary_key(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child.loc[1, "STU_ID"] = "A1"
    with pytest.raises(DataValidationError, match="duplicate"):
        MultilevelDataset.from_frames(parent, child, school_schema)


def test_missing_value_rejected(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child["STU_SCORE"] = child["STU_SCORE"].astype(object)
    child.loc[2, "STU_SCORE"] = ""
    with pytest.raises(DataValidationError, match="missing value"):
        MultilevelDataset.from_frames(parent, child, school_schema)


def test_type_coercion_failure(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child["STU_SCORE"] = child["STU_SCORE"].astype(object)
    child.loc[0, "STU_SCORE"] = "not-a-number"
    with pytest.raises(DataValidationError, match="non-numeric"):
        MultilevelDataset.from_frames(parent, child, school_schema)


def test_unknown_column_rejected(tmp_path, school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child["EXTRA"] = 1
    cpath = tmp_path / "student.csv"
    ppath = tmp_path / "school.csv"
    parent.to_csv(ppath, index=False)
    child.to_csv(cpath, index=False)
    with pytest.raises(DataValidationError, match="unknown columns"):
        load_dataset(ppath, cpath, school_schema)


def test_category_drift_rejected(school_frames, school_schema):
    parent, child = school_frames
    resolved = school_schema.with_categories("child", {"STU_EXPECT": ["hi", "lo"]})
    child = child.copy()
    child.loc[0, "STU_EXPECT"] = "maybe"
    with pytest.raises(DataValidationError, match="maybe"):
        MultilevelDataset.from_frames(parent, child, resolved)


def test_load_order_insensitive(school_frames, school_schema):
    parent, child = school_frames
    d1 = MultilevelDataset.from_frames(parent, child, school_schema)
    d2 = MultilevelDataset.from_frames(
        parent.iloc[::-1].reset_index(drop=True),
        child.sample(frac=1.0, random_state=3).reset_index(drop=True),
        school_schema,
    )
    assert d1.equals(d2)


def test_join_repeats_parent_attributes(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    flat = join_as_one(d)
    assert len(flat) == 4
    s1 = flat[flat["SCH_ID"] == "S1"]
    assert set(s1["SCH_LOCALE"]) == {"city"}
    assert set(s1["SCH_CLIMATE"]) == {0.5}


def test_join_split_round_trip(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    back = split_tables(join_as_one(d), school_schema)
    assert d.equals(back)


def test_join_row_expansion_unbalanced(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child.loc[3, "SCH_ID"] = "S1"  # sizes (3, 1)
    d = MultilevelDataset.from_frames(parent, child, school_schema)
    flat = join_as_one(d)
    assert len(flat) == 4
    assert (flat["SCH_CLIMATE"] == 0.5).sum() == 3


def test_split_inconsistency_names_cluster_and_column(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    flat = join_as_one(d)
    flat.loc[flat["STU_ID"] == "A1", "SCH_LOCALE"] = "rural"
    with pytest.raises(ConsistencyError) as err:
        split_tables(flat, school_schema)
    assert err.value.cluster == "S1"
    assert err.value.column == "SCH_LOCALE"


def test_split_distinct_cluster_count(school_frames, school_schema):
    parent, child = school_frames
    parent = pd.concat(
        [parent, pd.DataFrame({"SCH_ID": ["S3"], "SCH_CLIMATE": [1.5], "SCH_LOCALE": ["town"]})],
        ignore_index=True,
    )
    child = child.copy()
    child.loc[3, "SCH_ID"] = "S3"
    d = MultilevelDataset.from_frames(parent, child, school_schema)
    back = split_tables(join_as_one(d), school_schema)
    assert len(back.parent) == 3


def test_flat_load_allows_inconsistency(tmp_path, school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    flat = join_as_one(d)
    flat.loc[0, "SCH_LOCALE"] = "rural"
    path = tmp_path / "flat.csv"
    flat.to_csv(path, index=False)
    loaded = load_flat(path, school_schema)
    assert len(loaded) == 4


def test_schema_roundtrip(tmp_path, school_schema):
    path = tmp_path / "schema.json"
    save_schema(school_schema, path)
    again = load_schema(path)
    assert again.parent == school_schema.parent
    assert again.child == school_schema.child


def test_schema_rejects_column_collision():
    with pytest.raises(SchemaError, match="collision"):
        schema_from_dict(
            {
                "parent": {
                    "primary_key": "pid",
                    "columns": [{"name": "shared", "kind": "numeric"}],
                },
                "child": {
                    "primary_key": "cid",
                    "foreign_key": "pid",
                    "columns": [{"name": "shared", "kind": "numeric"}],
                },
            }
        )


def test_schema_rejects_missing_foreign_key():
    with pytest.raises(SchemaError):
        MultilevelSchema(
            parent=TableSpec(name="p", primary_key="pid", columns=()),
            child=TableSpec(name="c", primary_key="cid", columns=()),
        )


def test_files_round_trip(tmp_path, school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    pp, cp = tmp_path / "p.csv", tmp_path / "c.csv"
    d.to_files(pp, cp)
    again = load_dataset(pp, cp, school_schema)
    assert d.equals(again)
