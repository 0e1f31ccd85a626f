import math

import numpy as np
import pandas as pd
import pytest

from nestsim.clca import (
    CategoricalAssignmentProblem,
    ClusterAligner,
    build_categorical_problem,
    clca_apply,
    clca_numeric,
    evaluate_assignment,
    real_quantile,
    rescale_counts,
    solve_assignment,
    solve_exhaustive,
    solve_local_search,
)
from nestsim.dataset import MultilevelDataset, join_as_one, split_tables
from nestsim.errors import AlignmentError, ConsistencyError
from nestsim.generators import (
    ChildNumericSpec,
    HierarchicalGaussianSpec,
    ParentCategoricalSpec,
    ParentNumericSpec,
    SizeLaw,
    generate_hierarchical,
)
from nestsim.metrics.within import ks_distance


def _make_problem(sizes, conf, p_star, t_star, categories=None, **weights):
    sizes = np.asarray(sizes, dtype=float)
    conf = np.maximum(np.asarray(conf, dtype=float), 1e-6)
    categories = categories or tuple(chr(ord("A") + i) for i in range(conf.shape[1]))
    return CategoricalAssignmentProblem(
        cluster_ids=tuple(f"s{i}" for i in range(len(sizes))),
        sizes=sizes,
        confidence=conf,
        student_targets=np.asarray(p_star, dtype=float),
        count_targets=np.asarray(t_star, dtype=float),
        categories=tuple(categories),
        **weights,
    )


# -- numeric alignment -------------------------------------------------------------


def _flat_fixture(medians_by_school, real_values):
    """Flat synthetic table with given per-school value lists, plus a real dataset."""
    rows = []
    uid = 0
    for sid, vals in medians_by_school.items():
        for v in vals:
            rows.append({"unit_id": f"u{uid:03d}", "cluster_id": sid, "v": float(v)})
            uid += 1
    flat = pd.DataFrame(rows)
    from nestsim.schema import ColumnSpec, MultilevelSchema, TableSpec

    schema = MultilevelSchema(
        parent=TableSpec(name="cluster", primary_key="cluster_id",
                         columns=(ColumnSpec("v", "numeric"),)),
        child=TableSpec(name="unit", primary_key="unit_id", foreign_key="cluster_id",
                        columns=()),
    )
    j = len(real_values)
    parent = pd.DataFrame({"cluster_id": [f"r{i:03d}" for i in range(j)],
                           "v": list(real_values)})
    child = pd.DataFrame({"unit_id": [f"w{i:03d}" for i in range(j)],
                          "cluster_id": parent["cluster_id"]})
    real = MultilevelDataset.from_frames(parent, child, schema)
    # the flat table needs the full column set of the schema
    flat = flat[["unit_id", "cluster_id", "v"]]
    return flat, real, schema


def test_numeric_rank_mapping():
    flat, real, schema = _flat_fixture(
        {"a": [10.0], "b": [30.0], "c": [20.0]}, [100.0, 200.0, 300.0]
    )
    aligned = clca_numeric(flat, real, "v", schema)
    by_school = dict(zip(flat["cluster_id"], aligned))
    assert by_school == {"a": 100.0, "b": 300.0, "c": 200.0}


def test_numeric_fixed_point_when_matched():
    # already-consistent synthetic data with the same value multiset
    flat, real, schema = _flat_fixture(
        {"a": [1.0, 1.0], "b": [5.0, 5.0], "c": [3.0, 3.0]}, [5.0, 1.0, 3.0]
    )
    aligned = clca_numeric(flat, real, "v", schema)
    assert sorted(set(aligned)) == [1.0, 3.0, 5.0]
    by_school = dict(zip(flat["cluster_id"], aligned))
    assert by_school == {"a": 1.0, "b": 5.0, "c": 3.0}


def test_numeric_single_school_gets_median():
    flat, real, schema = _flat_fixture({"only": [42.0, 43.0]}, [10.0, 20.0, 30.0])
    aligned = clca_numeric(flat, real, "v", schema)
    assert set(aligned) == {20.0}


def test_numeric_monotone_and_in_range():
    rng = np.random.default_rng(0)
    schools = {f"s{i}": rng.normal(size=4).tolist() for i in range(7)}
    real_vals = rng.normal(10, 2, size=12).tolist()
    flat, real, schema = _flat_fixture(schools, real_vals)
    aligned = clca_numeric(flat, real, "v", schema)
    frame = pd.DataFrame({"school": flat["cluster_id"], "v": aligned})
    med = flat.groupby("cluster_id")["v"].median()
    out = frame.groupby("school")["v"].first()
    order = med.sort_values(kind="stable").index
    assigned_in_order = out.loc[order].to_numpy()
    assert (np.diff(assigned_in_order) >= 0).all()
    assert set(out) <= set(real_vals)


def test_right_continuous_quantile():
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    assert real_quantile(vals, 0.25) == 1.0
    assert real_quantile(vals, 0.251) == 2.0
    assert real_quantile(vals, 0.5) == 2.0
    assert real_quantile(vals, 1.0) == 4.0


# -- categorical assignment -----------------------------------------------------------


def test_worked_example_two_schools():
    prob = _make_problem(
        sizes=[1, 1],
        conf=[[0.9, 0.1], [0.2, 0.8]],
        p_star=[0.5, 0.5],
        t_star=[1, 1],
    )
    best = solve_exhaustive(prob)
    assert best.categories(prob) == ["A", "B"]
    assert best.term_marginal == pytest.approx(0.0, abs=1e-12)
    assert best.term_counts == pytest.approx(0.0, abs=1e-12)
    assert best.term_confidence == pytest.approx(-math.log(0.9) - math.log(0.8), abs=1e-12)
    assert best.objective_value == pytest.approx(0.3285, abs=1e-4)


def test_gamma_zero_forced_single_category():
    # t* forces all schools into category B; gamma = 0 removes confidence pull
    prob = _make_problem(
        sizes=[2, 3],
        conf=[[0.9, 0.1], [0.9, 0.1]],
        p_star=[0.0, 1.0],
        t_star=[0, 2],
        gamma=0.0,
    )
    ex = solve_exhaustive(prob)
    ls = solve_local_search(prob, seed=0, restarts=8)
    assert ls.objective_value == pytest.approx(ex.objective_value, abs=1e-12)
    assert ex.categories(prob) == ["B", "B"]


def test_single_category_trivial():
    prob = _make_problem(sizes=[1, 2], conf=[[1.0], [1.0]], p_star=[1.0], t_star=[2],
                         categories=("only",))
    res = solve_assignment(prob, strategy="auto")
    assert res.categories(prob) == ["only", "only"]


def test_exhaustive_guard():
    j, k = 30, 3  # 30 * log2(3) ~ 47.5 bits
    prob = _make_problem(
        sizes=np.ones(j), conf=np.full((j, k), 1.0 / k),
        p_star=np.full(k, 1.0 / k), t_star=np.full(k, 10.0),
    )
    with pytest.raises(AlignmentError, match="guard"):
        solve_exhaustive(prob)


def test_objective_recomposition():
    rng = np.random.default_rng(1)
    prob = _make_problem(
        sizes=rng.integers(1, 9, 5), conf=rng.dirichlet(np.ones(3), 5),
        p_star=rng.dirichlet(np.ones(3)), t_star=[2, 2, 1],
        alpha=1.3, beta=0.7, gamma=2.0,
    )
    res = solve_local_search(prob, seed=2, restarts=4)
    recomputed = (
        prob.alpha * res.term_marginal
        + prob.beta * res.term_counts
        + prob.gamma * res.term_confidence
    )
    assert res.objective_value == pytest.approx(recomputed, abs=1e-12)


def test_local_search_beats_argmax_start():
    rng = np.random.default_rng(2)
    for trial in range(25):
        j = int(rng.integers(2, 8))
        k = int(rng.integers(2, 5))
        prob = _make_problem(
            sizes=rng.integers(1, 10, j),
            conf=rng.dirichlet(np.ones(k), j),
            p_star=rng.dirichlet(np.ones(k)),
            t_star=rng.multinomial(j, np.full(k, 1.0 / k)),
        )
        start = evaluate_assignment(prob, np.argmax(prob.confidence, axis=1))
        result = solve_local_search(prob, seed=trial, restarts=8)
        assert result.objective_value <= start.objective_value + 1e-12


def test_local_search_matches_exhaustive_on_small_instances():
    rng = np.random.default_rng(3)
    hits, total = 0, 0
    for trial in range(200):
        j = int(rng.integers(2, 7))
        k = int(rng.integers(2, 5))
        if k**j > 4096:
            continue
        prob = _make_problem(
            sizes=rng.integers(1, 10, j),
            conf=rng.dirichlet(np.ones(k), j),
            p_star=rng.dirichlet(np.ones(k)),
            t_star=rng.multinomial(j, rng.dirichlet(np.ones(k))),
        )
        ex = solve_exhaustive(prob)
        ls = solve_local_search(prob, seed=trial, restarts=32)
        total += 1
        if abs(ls.objective_value - ex.objective_value) <= 1e-9:
            hits += 1
        else:
            assert ls.objective_value <= ex.objective_value * 1.01 + 1e-9
    assert hits / total >= 0.95


def test_determinism_same_seed():
    rng = np.random.default_rng(4)
    prob = _make_problem(
        sizes=rng.integers(1, 9, 12),
        conf=rng.dirichlet(np.ones(4), 12),
        p_star=rng.dirichlet(np.ones(4)),
        t_star=[3, 3, 3, 3],
    )
    a = solve_local_search(prob, seed=11, restarts=16)
    b = solve_local_search(prob, seed=11, restarts=16)
    assert (a.category_index == b.category_index).all()
    assert a.objective_value == b.objective_value


def test_rescale_counts_largest_remainder():
    assert rescale_counts(np.array([3.0, 2.0, 1.0]), 3).tolist() == [2.0, 1.0, 0.0]
    assert rescale_counts(np.array([1.0, 1.0]), 3).tolist() == [2.0, 1.0]
    assert rescale_counts(np.array([5.0, 5.0]), 4).sum() == 4


def test_invalid_weights():
    with pytest.raises(AlignmentError):
        _make_problem(sizes=[1], conf=[[1.0, 0.0]], p_star=[0.5, 0.5], t_star=[1, 0],
                      alpha=-1.0)


# -- whole-table alignment --------------------------------------------------------------


def _corrupted_pair(seed=0, j=10):
    spec = HierarchicalGaussianSpec(
        n_clusters=j,
        sizes=SizeLaw(kind="uniform", lo=3, hi=7),
        child_numeric=(ChildNumericSpec.from_icc("x", 0.2),),
        parent_numeric=(ParentNumericSpec("climate"),),
        parent_categorical=(ParentCategoricalSpec("locale", ("city", "rural", "town"),
                                                  (0.5, 0.3, 0.2)),),
    )
    real = generate_hierarchical(spec, seed)
    synth = generate_hierarchical(spec, seed + 1)
    flat = join_as_one(synth)
    rng = np.random.default_rng(seed + 2)
    flat["climate"] = flat["climate"].to_numpy() + rng.normal(0, 0.5, len(flat))
    flat["locale"] = rng.choice(["city", "rural", "town"], size=len(flat))
    return flat, real


def test_apply_restores_consistency():
    flat, real = _corrupted_pair()
    with pytest.raises(ConsistencyError):
        split_tables(flat, real.schema)
    repaired, audit = clca_apply(flat, real, real.schema, seed=5)
    assert repaired.n_clusters == 10
    assert set(audit["columns"]) == {"climate", "locale"}


def test_apply_numeric_ksc_one_when_sizes_match():
    flat, real = _corrupted_pair(seed=3, j=12)
    repaired, _ = clca_apply(flat, real, real.schema, seed=5)
    d = ks_distance(real.parent["climate"].to_numpy(dtype=float),
                    repaired.parent["climate"].to_numpy(dtype=float))
    assert d == 0.0


def test_apply_categorical_counts_near_exhaustive():
    flat, real = _corrupted_pair(seed=7, j=8)  # 3^8 = 6561 exhaustive-able
    problem = build_categorical_problem(flat, real, "locale", real.schema)
    ex = solve_exhaustive(problem)
    repaired, audit = clca_apply(flat, real, real.schema, seed=5, strategy="local_search")
    counts = repaired.parent["locale"].value_counts()
    dev = sum(
        abs(counts.get(cat, 0) - problem.count_targets[i])
        for i, cat in enumerate(problem.categories)
    )
    assert dev <= ex.term_counts + 1e-9 or audit["columns"]["locale"]["objective"][
        "value"
    ] <= ex.objective_value + 1e-9


def test_aligner_estimator_interface():
    flat, real = _corrupted_pair(seed=9)
    aligner = ClusterAligner(seed=1).fit(real)
    repaired = aligner.transform(flat)
    assert isinstance(repaired, MultilevelDataset)
    params = aligner.get_params()
    assert params["alpha"] == 1.0 and params["strategy"] == "auto"


def test_count_target_rescaling_flagged():
    flat, real = _corrupted_pair(seed=11, j=10)
    # keep only 5 synthetic clusters
    keep = sorted(set(flat["cluster_id"]))[:5]
    flat5 = flat[flat["cluster_id"].isin(keep)].reset_index(drop=True)
    repaired, audit = clca_apply(flat5, real, real.schema, seed=2)
    assert repaired.n_clusters == 5
    assert audit["columns"]["locale"]["rescaled_count_targets"] is True
    problem = build_categorical_problem(flat5, real, "locale", real.schema)
    assert problem.count_targets.sum() == 5
