"""Cluster-level consistency alignment (CLCA) for join-as-one synthetic data.

Single-table generators can give children of the same synthetic cluster
different values for cluster-level variables.  Alignment restores
consistency while staying close to the real cluster-level distribution:

* numeric columns: each synthetic cluster is summarized by its median,
  the medians are ranked, and rank m is mapped to the (m - 0.5)/J
  quantile of the real cluster-level values (one-dimensional optimal
  transport by monotone quantile matching); the mapped value is copied
  to every child of the cluster;
* categorical columns: each cluster is assigned exactly one category by
  minimizing  alpha * (student marginal deviation)
            + beta  * (cluster count deviation)
            + gamma * (confidence cost, -log of the within-cluster
                       synthetic proportion, clamped at eps),
  solved exactly for small instances and by multi-restart steepest
  descent otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .dataset import MultilevelDataset, join_as_one, split_tables
from .errors import AlignmentError
from .metrics.within import ks_distance, tv_distance
from .schema import CATEGORICAL, NUMERIC, MultilevelSchema
from .seeding import derive_seed

EPS_CONFIDENCE = 1e-6
EXHAUSTIVE_GUARD_BITS = 24.0
DEFAULT_RESTARTS = 32


# -- numeric alignment ----------------------------------------------------


def real_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Right-continuous empirical inverse CDF: inf{x : F(x) >= q}."""
    j = sorted_values.size
    idx = min(max(int(math.ceil(q * j)) - 1, 0), j - 1)
    return float(sorted_values[idx])


def clca_numeric(
    flat: pd.DataFrame, real: MultilevelDataset, column: str, schema: MultilevelSchema
) -> pd.Series:
    """Aligned values for one numeric cluster-level column of a flat table."""
    fk = schema.child.foreign_key
    real_values = np.sort(real.parent[column].to_numpy(dtype=float))
    if real_values.size == 0:
        raise AlignmentError(f"no real cluster-level values for {column!r}")
    medians = flat.groupby(fk, sort=True)[column].median()
    if medians.isna().any():
        raise AlignmentError(f"empty cluster while aligning {column!r}")
    j = len(medians)
    # Stable rank: ties broken by cluster id (the groupby sort order).
    order = np.argsort(medians.to_numpy(), kind="stable")
    assigned = np.empty(j)
    for m, pos in enumerate(order, start=1):
        assigned[pos] = real_quantile(real_values, (m - 0.5) / j)
    lookup = pd.Series(assigned, index=medians.index)
    return flat[fk].map(lookup)


# -- categorical alignment --------------------------------------------------


@dataclass(frozen=True)
class CategoricalAssignmentProblem:
    cluster_ids: tuple[str, ...]
    sizes: np.ndarray            # n_j, shape (J,)
    confidence: np.ndarray       # clamped within-cluster proportions, (J, K)
    student_targets: np.ndarray  # p*_k, sums to 1
    count_targets: np.ndarray    # t*_k, sums to J (rescaled when needed)
    categories: tuple[str, ...]
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise AlignmentError("weights must be nonnegative")
        if self.confidence.shape != (len(self.cluster_ids), len(self.categories)):
            raise AlignmentError("confidence matrix shape mismatch")

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def log_cost(self) -> np.ndarray:
        return -np.log(self.confidence)


@dataclass(frozen=True)
class Assignment:
    category_index: np.ndarray
    objective_value: float
    term_marginal: float
    term_counts: float
    term_confidence: float

    def categories(self, problem: CategoricalAssignmentProblem) -> list:
        return [problem.categories[k] for k in self.category_index]


def evaluate_assignment(problem: CategoricalAssignmentProblem, assign: np.ndarray) -> Assignment:
    """Recompute all three objective terms for an assignment from scratch."""
    k = problem.n_categories
    n = problem.sizes.sum()
    onehot = np.zeros((problem.n_clusters, k))
    onehot[np.arange(problem.n_clusters), assign] = 1.0
    mass = problem.sizes @ onehot
    counts = onehot.sum(axis=0)
    term_a = float(np.abs(mass / n - problem.student_targets).sum())
    term_b = float(np.abs(counts - problem.count_targets).sum())
    term_c = float(problem.log_cost[np.arange(problem.n_clusters), assign].sum())
    obj = problem.alpha * term_a + problem.beta * term_b + problem.gamma * term_c
    return Assignment(
        category_index=np.asarray(assign, dtype=int).copy(),
        objective_value=obj,
        term_marginal=term_a,
        term_counts=term_b,
        term_confidence=term_c,
    )


def solve_exhaustive(problem: CategoricalAssignmentProblem, chunk: int = 65536) -> Assignment:
    """Global optimum by enumerating all K^J assignments (guarded)."""
    j, k = problem.n_clusters, problem.n_categories
    bits = j * math.log2(k)
    if bits > EXHAUSTIVE_GUARD_BITS:
        raise AlignmentError(
            f"exhaustive search needs {bits:.1f} assignment bits; guard is {EXHAUSTIVE_GUARD_BITS}"
        )
    total = k**j
    n = problem.sizes.sum()
    cost = problem.log_cost
    best_obj = math.inf
    best_assign = None
    powers = k ** np.arange(j)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total))
        assign = (codes[:, None] // powers[None, :]) % k  # (C, J)
        obj = np.zeros(len(codes))
        for cat in range(k):
            hits = assign == cat
            mass = hits @ problem.sizes
            obj += problem.alpha * np.abs(mass / n - problem.student_targets[cat])
            obj += problem.beta * np.abs(hits.sum(axis=1) - problem.count_targets[cat])
        flat_idx = np.arange(j)[None, :] * k + assign
        obj += problem.gamma * cost.ravel()[flat_idx].sum(axis=1)
        i = int(np.argmin(obj))
        if obj[i] < best_obj - 1e-15 or best_assign is None:
            best_obj = float(obj[i])
            best_assign = assign[i]
    return evaluate_assignment(problem, best_assign)


def _descend(problem: CategoricalAssignmentProblem, assign: np.ndarray) -> np.ndarray:
    """Steepest-descent single-cluster moves until no move improves."""
    j, k = problem.n_clusters, problem.n_categories
    sizes = problem.sizes.astype(float)
    n = sizes.sum()
    cost = problem.log_cost
    p_star = problem.student_targets
    t_star = problem.count_targets
    assign = assign.copy()
    rows = np.arange(j)
    while True:
        onehot = np.zeros((j, k))
        onehot[rows, assign] = 1.0
        mass = sizes @ onehot
        counts = onehot.sum(axis=0)
        a_now = np.abs(mass / n - p_star)
        b_now = np.abs(counts - t_star)

        # Leaving the current category (same for every destination).
        out_a = np.abs((mass[assign] - sizes) / n - p_star[assign]) - a_now[assign]
        out_b = np.abs(counts[assign] - 1 - t_star[assign]) - b_now[assign]
        # Entering category key, per (cluster, destination).
        in_a = np.abs((mass[None, :] + sizes[:, None]) / n - p_star[None, :]) - a_now[None, :]
        in_b = np.abs(counts[None, :] + 1 - t_star[None, :]) - b_now[None, :]
        delta = (
            problem.alpha * (out_a[:, None] + in_a)
            + problem.beta * (out_b[:, None] + in_b)
            + problem.gamma * (cost - cost[rows, assign][:, None])
        )
        delta[rows, assign] = math.inf
        move = int(np.argmin(delta))
        best_j, best_k = divmod(move, k)
        if delta[best_j, best_k] >= -1e-12:
            return assign
        assign[best_j] = best_k


def solve_local_search(
    problem: CategoricalAssignmentProblem,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> Assignment:
    """Steepest descent from the argmax-confidence start plus random restarts."""
    j, k = problem.n_clusters, problem.n_categories
    starts = [np.argmax(problem.confidence, axis=1).astype(int)]
    for r in range(max(restarts - 1, 0)):
        rng = np.random.default_rng(derive_seed(seed, 0, r, "clca-restart"))
        starts.append(rng.integers(0, k, size=j))
    best: Optional[Assignment] = None
    for start in starts:
        cand = evaluate_assignment(problem, _descend(problem, start))
        if best is None or cand.objective_value < best.objective_value - 1e-15:
            best = cand
    return best


def solve_assignment(
    problem: CategoricalAssignmentProblem,
    strategy: str = "auto",
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> Assignment:
    if problem.n_categories == 1:
        return evaluate_assignment(problem, np.zeros(problem.n_clusters, dtype=int))
    if strategy == "exhaustive":
        return solve_exhaustive(problem)
    if strategy == "local_search":
        return solve_local_search(problem, seed=seed, restarts=restarts)
    if strategy == "auto":
        bits = problem.n_clusters * math.log2(problem.n_categories)
        if bits <= 16.0:
            return solve_exhaustive(problem)
        return solve_local_search(problem, seed=seed, restarts=restarts)
    raise AlignmentError(f"unknown strategy {strategy!r}")


def rescale_counts(counts: np.ndarray, j_out: int) -> np.ndarray:
    """Scale integer count targets to a new total by largest remainder."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        raise AlignmentError("count targets sum to zero")
    raw = counts * (j_out / total)
    floors = np.floor(raw)
    short = int(round(j_out - floors.sum()))
    order = np.argsort(-(raw - floors), kind="stable")
    out = floors.copy()
    out[order[:short]] += 1
    return out


def build_categorical_problem(
    flat: pd.DataFrame,
    real: MultilevelDataset,
    column: str,
    schema: MultilevelSchema,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> CategoricalAssignmentProblem:
    """Assemble the assignment problem for one categorical cluster column."""
    fk = schema.child.foreign_key
    real_flat = join_as_one(real)
    categories = sorted(set(real_flat[column]) | set(flat[column]))
    cat_index = {c: i for i, c in enumerate(categories)}
    k = len(categories)

    groups = flat.groupby(fk, sort=True)
    cluster_ids = tuple(groups.size().index)
    sizes = groups.size().to_numpy(dtype=float)
    conf = np.zeros((len(cluster_ids), k))
    for row, (_, sub) in enumerate(groups):
        vc = sub[column].value_counts()
        for val, cnt in vc.items():
            conf[row, cat_index[val]] = cnt / len(sub)
    conf = np.maximum(conf, EPS_CONFIDENCE)

    p_star = np.zeros(k)
    for val, cnt in real_flat[column].value_counts().items():
        p_star[cat_index[val]] = cnt / len(real_flat)
    t_star = np.zeros(k)
    for val, cnt in real.parent[column].value_counts().items():
        t_star[cat_index[val]] = cnt
    if len(cluster_ids) != real.n_clusters:
        t_star = rescale_counts(t_star, len(cluster_ids))
    return CategoricalAssignmentProblem(
        cluster_ids=cluster_ids,
        sizes=sizes,
        confidence=conf,
        student_targets=p_star,
        count_targets=t_star,
        categories=tuple(categories),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
    )


# -- whole-table alignment ---------------------------------------------------


class ClusterAligner(BaseEstimator):
    """Repairs cluster-level columns of a flat synthetic table.

    ``fit`` captures the real dataset's cluster-level distributions;
    ``transform`` aligns every cluster-level column of a flat synthetic
    table and returns the consistent two-table dataset plus an audit of
    the per-column divergence before and after alignment.
    """

    def __init__(self, strategy: str = "auto", seed: int = 0,
                 restarts: int = DEFAULT_RESTARTS,
                 alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0):
        self.strategy = strategy
        self.seed = seed
        self.restarts = restarts
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma

    def fit(self, real: MultilevelDataset, y=None):
        self.real_ = real
        return self

    def transform(self, flat: pd.DataFrame) -> MultilevelDataset:
        dataset, audit = self.transform_with_audit(flat)
        return dataset

    def transform_with_audit(self, flat: pd.DataFrame) -> tuple[MultilevelDataset, dict]:
        real = self.real_
        schema = real.schema
        flat = flat.copy()
        audit: dict = {"columns": {}, "seed": self.seed}
        real_flat = join_as_one(real)
        for idx, col in enumerate(schema.parent.columns):
            record: dict = {"kind": col.kind}
            before = flat[col.name]
            if col.kind == NUMERIC:
                real_student = real_flat[col.name].to_numpy(dtype=float)
                record["student_ks_before"] = ks_distance(
                    real_student, before.to_numpy(dtype=float)
                )
                aligned = clca_numeric(flat, real, col.name, schema)
                flat[col.name] = aligned
                record["student_ks_after"] = ks_distance(
                    real_student, aligned.to_numpy(dtype=float)
                )
                cluster_vals = flat.groupby(schema.child.foreign_key, sort=True)[col.name].first()
                record["cluster_ks_after"] = ks_distance(
                    real.parent[col.name].to_numpy(dtype=float),
                    cluster_vals.to_numpy(dtype=float),
                )
            else:
                real_student = real_flat[col.name].to_numpy()
                record["student_tv_before"] = tv_distance(real_student, before.to_numpy())
                problem = build_categorical_problem(
                    flat, real, col.name, schema,
                    alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                )
                assignment = solve_assignment(
                    problem, strategy=self.strategy,
                    seed=derive_seed(self.seed, 0, idx, f"clca:{col.name}"),
                    restarts=self.restarts,
                )
                lookup = pd.Series(
                    assignment.categories(problem), index=list(problem.cluster_ids)
                )
                flat[col.name] = flat[schema.child.foreign_key].map(lookup)
                record["student_tv_after"] = tv_distance(
                    real_student, flat[col.name].to_numpy()
                )
                record["rescaled_count_targets"] = problem.n_clusters != real.n_clusters
                record["objective"] = {
                    "value": assignment.objective_value,
                    "student_marginal_deviation": assignment.term_marginal,
                    "cluster_count_deviation": assignment.term_counts,
                    "confidence_cost": assignment.term_confidence,
                }
            audit["columns"][col.name] = record
        dataset = split_tables(flat, schema)
        return dataset, audit


def clca_apply(
    flat: pd.DataFrame,
    real: MultilevelDataset,
    schema: MultilevelSchema,
    seed: int = 0,
    strategy: str = "auto",
) -> tuple[MultilevelDataset, dict]:
    """Align every cluster-level column of a flat table; returns (dataset, audit)."""
    aligner = ClusterAligner(strategy=strategy, seed=seed).fit(real)
    return aligner.transform_with_audit(flat)
