import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestsim.dataset import MultilevelDataset
from nestsim.decompose import ClusterMeanDecomposer, decompose, recompose
from nestsim.errors import DataValidationError
from nestsim.generators import (
    ChildNumericSpec,
    HierarchicalGaussianSpec,
    SizeLaw,
    generate_hierarchical,
)


def test_hand_arithmetic(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    dd = decompose(d, ["STU_SCORE"])
    # cluster S1 holds {1, 2}: demeaned {-0.5, +0.5}, mean 1.5
    s1 = dd.data.child[dd.data.child["SCH_ID"] == "S1"]
    assert s1["STU_SCORE"].tolist() == [-0.5, 0.5]
    assert dd.data.parent.loc[dd.data.parent["SCH_ID"] == "S1", "STU_SCORE__cmean"].iloc[0] == 1.5


def test_two_point_cluster():
    # {2, 4} -> demeaned {-1, +1}, mean 3
    vals = np.array([2.0, 4.0])
    assert (vals - vals.mean()).tolist() == [-1.0, 1.0]
    assert vals.mean() == 3.0


def test_constant_column_all_zero(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child["STU_SCORE"] = 7.0
    d = MultilevelDataset.from_frames(parent, child, school_schema)
    dd = decompose(d, ["STU_SCORE"])
    assert (dd.data.child["STU_SCORE"] == 0.0).all()
    assert (dd.data.parent["STU_SCORE__cmean"] == 7.0).all()


def test_single_member_cluster(school_frames, school_schema):
    parent, child = school_frames
    child = child.copy()
    child.loc[3, "SCH_ID"] = "S1"  # S2 keeps only one child
    child.loc[2, "STU_SCORE"] = 7.0
    d = MultilevelDataset.from_frames(parent, child, school_schema)
    dd = decompose(d, ["STU_SCORE"])
    s2 = dd.data.child[dd.data.child["SCH_ID"] == "S2"]
    assert s2["STU_SCORE"].tolist() == [0.0]
    assert dd.data.parent.loc[dd.data.parent["SCH_ID"] == "S2", "STU_SCORE__cmean"].iloc[0] == 7.0


def test_per_cluster_mean_zero(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    dd = decompose(d)
    for _, grp in dd.data.child.groupby("SCH_ID"):
        for col in dd.columns:
            assert abs(grp[col].mean()) < 1e-10


def test_round_trip(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    back = recompose(decompose(d))
    assert np.allclose(
        back.child[["STU_SCORE", "STU_SES"]].to_numpy(),
        d.child[["STU_SCORE", "STU_SES"]].to_numpy(),
        atol=1e-10,
    )
    assert (back.child["STU_EXPECT"] == d.child["STU_EXPECT"]).all()
    assert back.schema.parent == d.schema.parent


def test_recompose_hand_values(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    dd = decompose(d, ["STU_SCORE"])
    restored = recompose(dd)
    s1 = restored.child[restored.child["SCH_ID"] == "S1"]
    assert s1["STU_SCORE"].tolist() == [1.0, 2.0]


def test_rejects_categorical_column(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    with pytest.raises(DataValidationError, match="non-numeric"):
        decompose(d, ["STU_EXPECT"])


def test_transformer_interface(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    tr = ClusterMeanDecomposer(columns=["STU_SCORE"])
    dd = tr.fit(d).transform(d)
    assert dd.columns == ("STU_SCORE",)
    back = tr.inverse_transform(dd)
    assert np.allclose(back.child["STU_SCORE"], d.child["STU_SCORE"], atol=1e-10)
    assert tr.get_params() == {"columns": ["STU_SCORE"]}


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    j=st.integers(2, 8),
    lo=st.integers(1, 3),
)
def test_round_trip_property(seed, j, lo):
    spec = HierarchicalGaussianSpec(
        n_clusters=j,
        sizes=SizeLaw(kind="uniform", lo=lo, hi=lo + 4),
        child_numeric=(ChildNumericSpec("a", tau2=0.5, sigma2=1.0),
                       ChildNumericSpec("b", tau2=0.0, sigma2=2.0)),
    )
    d = generate_hierarchical(spec, seed)
    dd = decompose(d)
    for _, grp in dd.data.child.groupby("cluster_id"):
        assert abs(grp["a"].mean()) < 1e-10
        assert abs(grp["b"].mean()) < 1e-10
    back = recompose(dd)
    assert np.allclose(back.child[["a", "b"]].to_numpy(), d.child[["a", "b"]].to_numpy(), atol=1e-10)
