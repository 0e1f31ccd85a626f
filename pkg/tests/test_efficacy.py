import numpy as np
import pandas as pd
import pytest

from nestsim.dataset import MultilevelDataset, join_as_one
from nestsim.errors import MetricError
from nestsim.generators import (
    ChildCategoricalSpec,
    ChildNumericSpec,
    HierarchicalGaussianSpec,
    OutcomeModelSpec,
    ParentCategoricalSpec,
    ParentNumericSpec,
    SizeLaw,
    generate_hierarchical,
)
from nestsim.metrics.efficacy import (
    EfficacyScore,
    _fold_assignment,
    efficacy_report,
    ml_efficacy,
    parent_efficacy,
)

SPEC = HierarchicalGaussianSpec(
    n_clusters=40,
    sizes=SizeLaw(kind="uniform", lo=6, hi=10),
    child_numeric=(
        ChildNumericSpec.from_icc("score", 0.2),
        ChildNumericSpec.from_icc("ses", 0.1),
    ),
    child_categorical=(ChildCategoricalSpec("expect", ("hi", "lo"), (0.55, 0.45), 0.1),),
    parent_numeric=(ParentNumericSpec("climate"),),
    parent_categorical=(ParentCategoricalSpec("locale", ("city", "rural"), (0.6, 0.4)),),
    cross_corr=(("climate", "score", 0.3),),
    outcome=OutcomeModelSpec(
        name="y", intercept=0.5, child_coefs={"score": 0.6, "ses": 0.2},
        parent_coefs={"climate": 0.3}, sigma_u2=0.2, sigma_r2=0.8,
    ),
)


@pytest.fixture(scope="module")
def real():
    return generate_hierarchical(SPEC, 1001)


@pytest.fixture(scope="module")
def synth():
    return generate_hierarchical(SPEC, 2002)


def test_identity_numeric_target_is_exactly_one(real):
    score = ml_efficacy(real, real, "y", seed=5)
    assert score.metric_kind == "r2"
    assert score.m_tstr == score.m_trtr
    assert score.value == 1.0


def test_identity_categorical_target_is_exactly_one(real):
    score = ml_efficacy(real, real, "expect", seed=5)
    assert score.metric_kind == "macro_f1"
    assert score.value == 1.0


def test_identity_parent_target_is_exactly_one(real):
    score = parent_efficacy(real, real, "climate", seed=5)
    assert score.value == 1.0
    cat = parent_efficacy(real, real, "locale", seed=5)
    assert cat.value == 1.0


def test_shuffled_target_scores_below_one(real):
    rng = np.random.default_rng(0)
    child = real.child.copy()
    child["y"] = rng.permutation(child["y"].to_numpy())
    shuffled = MultilevelDataset.from_frames(real.parent, child, real.schema)
    score = ml_efficacy(real, shuffled, "y", seed=5)
    assert score.value < 1.0
    assert score.m_tstr < score.m_trtr


def test_shared_fold_oracle(real):
    """Recompute both m values with the same fold assignment and models."""
    from nestsim.features import build_design
    from nestsim.models import MixedModel

    rng = np.random.default_rng(0)
    child = real.child.copy()
    child["y"] = rng.permutation(child["y"].to_numpy())
    synth = MultilevelDataset.from_frames(real.parent, child, real.schema)
    seed = 42
    score = ml_efficacy(real, synth, "y", folds=5, seed=seed)

    real_flat = join_as_one(real)
    synth_flat = join_as_one(synth)
    folds_r = _fold_assignment(real.cluster_sizes.index, 5, seed)
    folds_s = _fold_assignment(synth.cluster_sizes.index, 5, seed)
    num_cols = ["score", "ses", "climate"]
    cat_cols = {
        "expect": sorted(set(real_flat["expect"])),
        "locale": sorted(set(real_flat["locale"])),
    }
    m_vals = {"tstr": [], "trtr": []}
    for fold in range(5):
        test = real_flat[real_flat["cluster_id"].map(folds_r) == fold]
        for key, train in (
            ("trtr", real_flat[real_flat["cluster_id"].map(folds_r) != fold]),
            ("tstr", synth_flat[synth_flat["cluster_id"].map(folds_s) != fold]),
        ):
            x_tr, names = build_design(train, num_cols, cat_cols)
            x_te, _ = build_design(test, num_cols, cat_cols)
            model = MixedModel().fit(x_tr, train["y"].to_numpy(), train["cluster_id"].to_numpy(),
                                     feature_names=names)
            pred = model.predict(x_te, clusters=test["cluster_id"].to_numpy(), rule="multilevel")
            yt = test["y"].to_numpy()
            m_vals[key].append(1 - ((yt - pred) ** 2).sum() / ((yt - yt.mean()) ** 2).sum())
    assert score.m_trtr == pytest.approx(np.mean(m_vals["trtr"]), abs=1e-12)
    assert score.m_tstr == pytest.approx(np.mean(m_vals["tstr"]), abs=1e-12)


def test_clamp_rule():
    raw = 1 - abs(-0.4 - 0.7)
    assert raw == pytest.approx(-0.1, abs=1e-12)
    assert min(1.0, max(0.0, raw)) == 0.0


def test_cluster_respecting_folds(real):
    folds = _fold_assignment(real.cluster_sizes.index, 5, 7)
    assert set(folds.values()) == {0, 1, 2, 3, 4}
    # every cluster sits in exactly one fold by construction (it's a dict)
    sizes = pd.Series(list(folds.values())).value_counts()
    assert sizes.max() - sizes.min() <= 1


def test_fewer_clusters_than_folds_errors(school_frames, school_schema):
    d = MultilevelDataset.from_frames(*school_frames, school_schema)
    with pytest.raises(MetricError, match="clusters"):
        ml_efficacy(d, d, "STU_SCORE", folds=5, seed=0)


def test_constant_target_errors(real):
    child = real.child.copy()
    child["ses"] = 1.0
    flat_const = MultilevelDataset.from_frames(real.parent, child, real.schema)
    with pytest.raises(MetricError, match="constant"):
        ml_efficacy(flat_const, flat_const, "ses", seed=0)


def test_determinism(real, synth):
    a = ml_efficacy(real, synth, "y", seed=9)
    b = ml_efficacy(real, synth, "y", seed=9)
    assert a == b


def test_report_structure_and_isolation(real):
    rng = np.random.default_rng(3)
    child = real.child.copy()
    child["ses"] = rng.permutation(child["ses"].to_numpy())
    synth = MultilevelDataset.from_frames(real.parent, child, real.schema)
    report = efficacy_report(real, synth, seed=11)
    assert [s.target for s in report.child] == ["score", "ses", "expect", "y"]
    assert [s.target for s in report.parent] == ["climate", "locale"]
    by_target = {s.target: s for s in report.child}
    # shuffling one column must hurt that column's own score the most
    assert by_target["ses"].value < 1.0
    vals = [s.value for s in list(report.child) + list(report.parent) if not s.skipped]
    assert report.overall_avg == pytest.approx(np.mean(vals), abs=1e-12)


def test_report_identity_all_ones(real):
    report = efficacy_report(real, real, seed=4)
    for s in list(report.child) + list(report.parent):
        assert not s.skipped
        assert s.value == 1.0
    assert report.child_avg == 1.0
    assert report.parent_avg == 1.0
    assert report.overall_avg == 1.0
