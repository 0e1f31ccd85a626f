"""Parametric multilevel data-generating processes.

These provide ground-truth data for metric oracles and for the
traditional-simulation replications: a configurable hierarchical
Gaussian process (cluster random effects plus within-cluster noise,
optional cross-level correlations, categorical variables via latent
thresholds, and an optional outcome model with one random slope), the
omitted-cluster-variable process used in the recovery replication, and
utilities to regenerate outcomes from a known model, learn outcome-model
parameters from a reference dataset, and bootstrap whole clusters.

All generators are pure functions of (spec, seed); cluster and unit ids
carry a seed-derived prefix so datasets from different generations never
join by accident.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .dataset import MultilevelDataset
from .errors import DesignError
from .models import MixedModel
from .features import build_design
from .schema import CATEGORICAL, NUMERIC, ColumnSpec, MultilevelSchema, TableSpec

CLUSTER_KEY = "cluster_id"
UNIT_KEY = "unit_id"


def _id_prefix(seed: int) -> str:
    return hashlib.sha256(f"ids|{seed}".encode()).hexdigest()[:6]


@dataclass(frozen=True)
class SizeLaw:
    """Cluster-size distribution: fixed n, or discrete uniform on [lo, hi]."""

    kind: str = "fixed"
    n: int = 25
    lo: int = 10
    hi: int = 30

    def sample(self, j: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(j, self.n, dtype=int)
        if self.kind == "uniform":
            return rng.integers(self.lo, self.hi + 1, size=j)
        raise DesignError(f"unknown size law {self.kind!r}")

    @property
    def mean(self) -> float:
        return float(self.n) if self.kind == "fixed" else (self.lo + self.hi) / 2.0


@dataclass(frozen=True)
class ChildNumericSpec:
    name: str
    tau2: float = 0.0
    sigma2: float = 1.0

    @classmethod
    def from_icc(cls, name: str, icc: float, total_var: float = 1.0) -> "ChildNumericSpec":
        if not 0.0 <= icc < 1.0:
            raise DesignError("icc must be in [0, 1)")
        return cls(name=name, tau2=icc * total_var, sigma2=(1.0 - icc) * total_var)


@dataclass(frozen=True)
class ChildCategoricalSpec:
    name: str
    categories: tuple[str, ...]
    probs: tuple[float, ...]
    latent_icc: float = 0.0


@dataclass(frozen=True)
class ParentNumericSpec:
    name: str
    variance: float = 1.0


@dataclass(frozen=True)
class ParentCategoricalSpec:
    name: str
    categories: tuple[str, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class RandomSlopeSpec:
    column: str
    var: float = 0.0
    parent_modifiers: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutcomeModelSpec:
    """Outcome = intercept + child terms + parent terms + U_j (+ slope) + R_ij."""

    name: str = "y"
    intercept: float = 0.0
    child_coefs: dict = field(default_factory=dict)
    parent_coefs: dict = field(default_factory=dict)
    sigma_u2: float = 1.0
    sigma_r2: float = 1.0
    random_slope: Optional[RandomSlopeSpec] = None

    def __post_init__(self):
        if self.sigma_u2 < 0 or self.sigma_r2 < 0:
            raise DesignError("variance components must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.random_slope is None:
            d.pop("random_slope")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeModelSpec":
        d = dict(d)
        slope = d.pop("random_slope", None)
        if slope is not None:
            slope = RandomSlopeSpec(**slope)
        return cls(random_slope=slope, **d)


@dataclass(frozen=True)
class HierarchicalGaussianSpec:
    n_clusters: int
    sizes: SizeLaw = SizeLaw()
    child_numeric: tuple[ChildNumericSpec, ...] = ()
    child_categorical: tuple[ChildCategoricalSpec, ...] = ()
    parent_numeric: tuple[ParentNumericSpec, ...] = ()
    parent_categorical: tuple[ParentCategoricalSpec, ...] = ()
    cross_corr: tuple[tuple[str, str, float], ...] = ()
    parent_corr: tuple[tuple[str, str, float], ...] = ()
    outcome: Optional[OutcomeModelSpec] = None
    parent_table: str = "cluster"
    child_table: str = "unit"


@dataclass(frozen=True)
class HuangDGPSpec:
    """Omitted-cluster-covariate process for the recovery replication.

    Two cluster-level predictors from a bivariate normal (corr rho_w),
    one of them treated as unobserved downstream; one child predictor
    correlated rho_x with the unobserved cluster predictor; outcome
    linear in all three with a cluster random intercept and residual.
    """

    rho_w: float = -0.25
    rho_x: float = 0.25
    coef_w_obs: float = 2.0
    coef_w_omit: float = 2.0
    coef_x: float = 5.0
    sigma_u2: float = 1.0
    sigma_r2: float = 9.0
    sizes: SizeLaw = SizeLaw(kind="uniform", lo=10, hi=30)

    def __post_init__(self):
        if self.sigma_u2 <= 0 or self.sigma_r2 <= 0:
            raise DesignError("variances must be positive")
        if not (abs(self.rho_w) < 1 and abs(self.rho_x) < 1):
            raise DesignError("correlations must be in (-1, 1)")


def _build_schema(spec: HierarchicalGaussianSpec) -> MultilevelSchema:
    parent_cols = [ColumnSpec(p.name, NUMERIC) for p in spec.parent_numeric]
    parent_cols += [
        ColumnSpec(p.name, CATEGORICAL, categories=tuple(p.categories))
        for p in spec.parent_categorical
    ]
    child_cols = [ColumnSpec(c.name, NUMERIC) for c in spec.child_numeric]
    child_cols += [
        ColumnSpec(c.name, CATEGORICAL, categories=tuple(c.categories))
        for c in spec.child_categorical
    ]
    if spec.outcome is not None:
        child_cols.append(ColumnSpec(spec.outcome.name, NUMERIC, role="outcome"))
    return MultilevelSchema(
        parent=TableSpec(name=spec.parent_table, primary_key=CLUSTER_KEY,
                         columns=tuple(parent_cols)),
        child=TableSpec(name=spec.child_table, primary_key=UNIT_KEY,
                        foreign_key=CLUSTER_KEY, columns=tuple(child_cols)),
    )


def _between_draw(spec: HierarchicalGaussianSpec, j: int, rng: np.random.Generator):
    """Joint normal draw of parent numerics and child cluster components."""
    names = [p.name for p in spec.parent_numeric] + [c.name for c in spec.child_numeric]
    sds = np.array(
        [math.sqrt(p.variance) for p in spec.parent_numeric]
        + [math.sqrt(c.tau2) for c in spec.child_numeric]
    )
    d = len(names)
    cov = np.diag(sds**2)
    idx = {n: i for i, n in enumerate(names)}
    totals = {c.name: math.sqrt(c.tau2 + c.sigma2) for c in spec.child_numeric}
    for p_name, c_name, rho in spec.cross_corr:
        if p_name not in idx or c_name not in idx:
            raise DesignError(f"cross_corr references unknown columns ({p_name}, {c_name})")
        cov_val = rho * sds[idx[p_name]] * totals[c_name]
        cov[idx[p_name], idx[c_name]] = cov[idx[c_name], idx[p_name]] = cov_val
    for a, b, rho in spec.parent_corr:
        cov[idx[a], idx[b]] = cov[idx[b], idx[a]] = rho * sds[idx[a]] * sds[idx[b]]
    if d == 0:
        return {}, names
    try:
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise DesignError("infeasible correlation targets (covariance not PD)") from exc
    draws = rng.standard_normal((j, d)) @ chol.T
    return {n: draws[:, i] for i, n in enumerate(names)}, names


def generate_hierarchical(spec: HierarchicalGaussianSpec, seed: int) -> MultilevelDataset:
    """Sample one dataset from a hierarchical Gaussian specification."""
    rng = np.random.default_rng(seed)
    j = spec.n_clusters
    if j < 1:
        raise DesignError("need at least one cluster")
    sizes = spec.sizes.sample(j, rng)
    n = int(sizes.sum())
    prefix = _id_prefix(seed)
    cluster_ids = np.array([f"c{prefix}{i:05d}" for i in range(j)])
    unit_ids = np.array([f"u{prefix}{i:07d}" for i in range(n)])
    child_cluster = np.repeat(np.arange(j), sizes)

    between, _ = _between_draw(spec, j, rng)

    parent = pd.DataFrame({CLUSTER_KEY: cluster_ids})
    for p in spec.parent_numeric:
        parent[p.name] = between[p.name]
    for p in spec.parent_categorical:
        parent[p.name] = rng.choice(list(p.categories), size=j, p=list(p.probs))

    child = pd.DataFrame({UNIT_KEY: unit_ids, CLUSTER_KEY: cluster_ids[child_cluster]})
    for c in spec.child_numeric:
        e = rng.standard_normal(n) * math.sqrt(c.sigma2)
        child[c.name] = between[c.name][child_cluster] + e
    for c in spec.child_categorical:
        tau2 = c.latent_icc / (1.0 - c.latent_icc) if c.latent_icc < 1.0 else None
        if tau2 is None:
            raise DesignError("latent_icc must be < 1")
        u = rng.standard_normal(j) * math.sqrt(tau2)
        latent = u[child_cluster] + rng.standard_normal(n)
        cum = np.cumsum(c.probs)[:-1]
        cuts = stats.norm.ppf(cum) * math.sqrt(tau2 + 1.0)
        codes = np.searchsorted(cuts, latent, side="right")
        child[c.name] = np.asarray(list(c.categories))[codes]

    if spec.outcome is not None:
        child[spec.outcome.name] = _draw_outcome(
            spec.outcome, parent, child, child_cluster, rng
        )

    schema = _build_schema(spec)
    return MultilevelDataset.from_frames(parent, child, schema, meta={"generator": "hierarchical"})


def _draw_outcome(
    spec: OutcomeModelSpec,
    parent: pd.DataFrame,
    child: pd.DataFrame,
    child_cluster: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    j = len(parent)
    n = len(child)
    y = np.full(n, spec.intercept, dtype=float)
    for col, coef in spec.child_coefs.items():
        if col not in child.columns:
            raise DesignError(f"outcome model references missing child column {col!r}")
        y += coef * child[col].to_numpy(dtype=float)
    for col, coef in spec.parent_coefs.items():
        if col not in parent.columns:
            raise DesignError(f"outcome model references missing parent column {col!r}")
        y += coef * parent[col].to_numpy(dtype=float)[child_cluster]
    u0 = rng.standard_normal(j) * math.sqrt(spec.sigma_u2)
    y += u0[child_cluster]
    if spec.random_slope is not None:
        rs = spec.random_slope
        slope = np.zeros(n)
        for col, coef in rs.parent_modifiers.items():
            slope += coef * parent[col].to_numpy(dtype=float)[child_cluster]
        u1 = rng.standard_normal(j) * math.sqrt(rs.var)
        slope += u1[child_cluster]
        y += slope * child[rs.column].to_numpy(dtype=float)
    y += rng.standard_normal(n) * math.sqrt(spec.sigma_r2)
    return y


def generate_huang(spec: HuangDGPSpec, j: int, seed: int) -> MultilevelDataset:
    """Sample the omitted-cluster-covariate process with J clusters."""
    if j < 2:
        raise DesignError("need at least 2 clusters")
    rng = np.random.default_rng(seed)
    sizes = spec.sizes.sample(j, rng)
    n = int(sizes.sum())
    prefix = _id_prefix(seed)
    child_cluster = np.repeat(np.arange(j), sizes)

    cov = np.array([[1.0, spec.rho_w], [spec.rho_w, 1.0]])
    w = rng.standard_normal((j, 2)) @ np.linalg.cholesky(cov).T
    w_obs, w_omit = w[:, 0], w[:, 1]
    x = spec.rho_x * w_omit[child_cluster] + math.sqrt(1.0 - spec.rho_x**2) * rng.standard_normal(n)
    u = rng.standard_normal(j) * math.sqrt(spec.sigma_u2)
    r = rng.standard_normal(n) * math.sqrt(spec.sigma_r2)
    y = (
        spec.coef_w_obs * w_obs[child_cluster]
        + spec.coef_w_omit * w_omit[child_cluster]
        + spec.coef_x * x
        + u[child_cluster]
        + r
    )

    parent = pd.DataFrame({
        CLUSTER_KEY: [f"c{prefix}{i:05d}" for i in range(j)],
        "W_obs": w_obs,
        "W_omit": w_omit,
    })
    child = pd.DataFrame({
        UNIT_KEY: [f"u{prefix}{i:07d}" for i in range(n)],
        CLUSTER_KEY: parent[CLUSTER_KEY].to_numpy()[child_cluster],
        "X": x,
        "y": y,
    })
    schema = MultilevelSchema(
        parent=TableSpec(name="cluster", primary_key=CLUSTER_KEY, columns=(
            ColumnSpec("W_obs", NUMERIC), ColumnSpec("W_omit", NUMERIC),
        )),
        child=TableSpec(name="unit", primary_key=UNIT_KEY, foreign_key=CLUSTER_KEY, columns=(
            ColumnSpec("X", NUMERIC), ColumnSpec("y", NUMERIC, role="outcome"),
        )),
    )
    meta = {"generator": "huang", "omitted": ["W_omit"], "outcome": "y"}
    return MultilevelDataset.from_frames(parent, child, schema, meta=meta)


def regenerate_outcome(d: MultilevelDataset, spec: OutcomeModelSpec, seed: int) -> MultilevelDataset:
    """Replace (or create) the outcome column with fresh draws from the model."""
    rng = np.random.default_rng(seed)
    ppk = d.schema.parent.primary_key
    fk = d.schema.child.foreign_key
    pos = {pid: i for i, pid in enumerate(d.parent[ppk])}
    child_cluster = np.array([pos[c] for c in d.child[fk]])
    y = _draw_outcome(spec, d.parent, d.child, child_cluster, rng)

    child = d.child.copy()
    child[spec.name] = y
    schema = d.schema
    if spec.name not in schema.child.column_names:
        new_child = TableSpec(
            name=schema.child.name,
            primary_key=schema.child.primary_key,
            foreign_key=schema.child.foreign_key,
            columns=schema.child.columns + (ColumnSpec(spec.name, NUMERIC, role="outcome"),),
        )
        schema = MultilevelSchema(parent=schema.parent, child=new_child,
                                  delimiter=schema.delimiter)
    return MultilevelDataset.from_frames(d.parent, child, schema, mode=d.mode, meta=d.meta)


def learn_true_parameters(
    reference: MultilevelDataset,
    outcome: str,
    child_covariates: Sequence[str],
    parent_covariates: Sequence[str],
) -> OutcomeModelSpec:
    """Fit the assumed random-intercept model and package it as ground truth."""
    from .dataset import join_as_one

    flat = join_as_one(reference)
    num = list(child_covariates) + list(parent_covariates)
    x, names = build_design(flat, num)
    fk = reference.schema.child.foreign_key
    model = MixedModel().fit(x, flat[outcome].to_numpy(dtype=float),
                             flat[fk].to_numpy(), feature_names=names)
    coefs = dict(zip(model.feature_names_, model.coef_))
    return OutcomeModelSpec(
        name=outcome,
        intercept=float(coefs["(intercept)"]),
        child_coefs={c: float(coefs[c]) for c in child_covariates},
        parent_coefs={c: float(coefs[c]) for c in parent_covariates},
        sigma_u2=float(model.tau2_),
        sigma_r2=float(model.sigma2_),
    )


def cluster_bootstrap(
    d: MultilevelDataset, j_out: int, seed: int, replace: bool = False
) -> MultilevelDataset:
    """Sample whole clusters (children follow) under fresh cluster ids."""
    rng = np.random.default_rng(seed)
    ppk = d.schema.parent.primary_key
    fk = d.schema.child.foreign_key
    ids = d.parent[ppk].to_numpy()
    if not replace and j_out > ids.size:
        raise DesignError(f"cannot draw {j_out} of {ids.size} clusters without replacement")
    picks = rng.choice(ids.size, size=j_out, replace=replace)
    prefix = _id_prefix(seed)

    parent_rows = d.parent.iloc[picks].copy().reset_index(drop=True)
    new_ids = [f"c{prefix}{i:05d}" for i in range(j_out)]
    child_groups = {pid: grp for pid, grp in d.child.groupby(fk, sort=False)}
    child_parts = []
    unit_counter = 0
    for i, src in enumerate(parent_rows[ppk]):
        grp = child_groups[src].copy()
        grp[fk] = new_ids[i]
        grp[d.schema.child.primary_key] = [
            f"u{prefix}{unit_counter + t:07d}" for t in range(len(grp))
        ]
        unit_counter += len(grp)
        child_parts.append(grp)
    parent_rows[ppk] = new_ids
    child = pd.concat(child_parts, ignore_index=True)
    return MultilevelDataset.from_frames(parent_rows, child, d.schema, mode=d.mode, meta=d.meta)


# -- config parsing -----------------------------------------------------------


def size_law_from_dict(d: dict) -> SizeLaw:
    return SizeLaw(**d)


def hierarchical_spec_from_dict(doc: dict) -> HierarchicalGaussianSpec:
    """Build a generator spec from a JSON-friendly dict."""
    doc = dict(doc)

    def child_numeric(entry):
        if "icc" in entry:
            return ChildNumericSpec.from_icc(
                entry["name"], entry["icc"], entry.get("total_var", 1.0)
            )
        return ChildNumericSpec(
            entry["name"], tau2=entry.get("tau2", 0.0), sigma2=entry.get("sigma2", 1.0)
        )

    outcome = doc.get("outcome")
    return HierarchicalGaussianSpec(
        n_clusters=int(doc["n_clusters"]),
        sizes=size_law_from_dict(doc.get("sizes", {"kind": "fixed", "n": 25})),
        child_numeric=tuple(child_numeric(e) for e in doc.get("child_numeric", [])),
        child_categorical=tuple(
            ChildCategoricalSpec(
                e["name"], tuple(e["categories"]), tuple(e["probs"]),
                latent_icc=e.get("latent_icc", 0.0),
            )
            for e in doc.get("child_categorical", [])
        ),
        parent_numeric=tuple(
            ParentNumericSpec(e["name"], variance=e.get("variance", 1.0))
            for e in doc.get("parent_numeric", [])
        ),
        parent_categorical=tuple(
            ParentCategoricalSpec(e["name"], tuple(e["categories"]), tuple(e["probs"]))
            for e in doc.get("parent_categorical", [])
        ),
        cross_corr=tuple((a, b, float(r)) for a, b, r in doc.get("cross_corr", [])),
        parent_corr=tuple((a, b, float(r)) for a, b, r in doc.get("parent_corr", [])),
        outcome=OutcomeModelSpec.from_dict(outcome) if outcome else None,
        parent_table=doc.get("parent_table", "cluster"),
        child_table=doc.get("child_table", "unit"),
    )


def huang_spec_from_dict(doc: dict) -> HuangDGPSpec:
    doc = dict(doc)
    sizes = doc.pop("sizes", None)
    if sizes is not None:
        doc["sizes"] = size_law_from_dict(sizes)
    return HuangDGPSpec(**doc)


def shuffle_cluster_labels(d: MultilevelDataset, seed: int) -> MultilevelDataset:
    """Randomly permute which cluster each child belongs to.

    Preserves every marginal distribution and the cluster-size multiset
    while destroying within-cluster dependence (ICC drops to noise level).
    """
    rng = np.random.default_rng(seed)
    fk = d.schema.child.foreign_key
    child = d.child.copy()
    child[fk] = rng.permutation(child[fk].to_numpy())
    return MultilevelDataset.from_frames(d.parent, child, d.schema, mode=d.mode, meta=d.meta)


# -- named replication setups ------------------------------------------------


def afshartous_spec(
    n_clusters: int,
    icc: float = 0.2,
    cluster_size: int = 25,
    slope_var: float = 0.1,
    sigma_r2: float = 1.0,
) -> HierarchicalGaussianSpec:
    """Two-level prediction DGP: one child predictor, one parent predictor.

    The parent predictor enters both the intercept and the slope
    equation; coefficients default so fixed effects explain half of the
    variance at each level, and the random-intercept share of residual
    variance equals ``icc``.
    """
    sigma_u2 = icc / (1.0 - icc) * sigma_r2
    outcome = OutcomeModelSpec(
        name="y",
        intercept=0.0,
        child_coefs={"x": math.sqrt(sigma_r2)},
        parent_coefs={"w": math.sqrt(sigma_u2)},
        sigma_u2=sigma_u2,
        sigma_r2=sigma_r2,
        random_slope=RandomSlopeSpec(
            column="x", var=slope_var, parent_modifiers={"w": math.sqrt(slope_var)}
        ),
    )
    return HierarchicalGaussianSpec(
        n_clusters=n_clusters,
        sizes=SizeLaw(kind="fixed", n=cluster_size),
        child_numeric=(ChildNumericSpec("x", tau2=0.0, sigma2=1.0),),
        parent_numeric=(ParentNumericSpec("w", variance=1.0),),
        outcome=outcome,
    )
