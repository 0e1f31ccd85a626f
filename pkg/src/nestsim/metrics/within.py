"""Within-table fidelity metrics.

Marginal metrics compare one column at a time (KS complement for
numerics, total-variation complement for categoricals); pairwise metrics
compare dependence structure (Pearson correlation similarity,
contingency-table similarity, eta-squared similarity, and one
mutual-information similarity for the whole table).  Every score is
1 - distance, so 1 means indistinguishable and 0 means maximally
different.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import MetricError
from ..schema import TableSpec
from .scores import MetricScore, mean_score

MI_BINS = 20


# -- distance primitives ------------------------------------------------


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """sup_x |F_a(x) - F_b(x)| over the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise MetricError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _proportions(values: np.ndarray, universe: Sequence) -> np.ndarray:
    idx = {c: i for i, c in enumerate(universe)}
    counts = np.zeros(len(universe))
    for v in values:
        counts[idx[v]] += 1
    return counts / counts.sum()


def tv_distance(real: np.ndarray, synth: np.ndarray) -> float:
    """Half the L1 distance between category proportions (union universe)."""
    if real.size == 0 or synth.size == 0:
        raise MetricError("empty sample")
    universe = sorted(set(real.tolist()) | set(synth.tolist()))
    p_r = _proportions(real, universe)
    p_s = _proportions(synth, universe)
    return float(0.5 * np.abs(p_s - p_r).sum())


def eta_squared(values: np.ndarray, groups: np.ndarray) -> float:
    """SS_between / SS_total of a numeric variable across category groups."""
    values = np.asarray(values, dtype=float)
    grand = values.mean()
    ss_total = float(np.sum((values - grand) ** 2))
    if ss_total == 0.0:
        raise MetricError("constant numeric column; eta-squared undefined")
    _, inverse = np.unique(groups, return_inverse=True)
    sizes = np.bincount(inverse)
    means = np.bincount(inverse, weights=values) / sizes
    ss_between = float(np.sum(sizes * (means - grand) ** 2))
    return ss_between / ss_total


def _joint_proportions(a: np.ndarray, b: np.ndarray, universe: list) -> np.ndarray:
    idx = {c: i for i, c in enumerate(universe)}
    counts = np.zeros(len(universe))
    for pair in zip(a.tolist(), b.tolist()):
        counts[idx[pair]] += 1
    return counts / counts.sum()


def mutual_information(codes_a: np.ndarray, codes_b: np.ndarray) -> float:
    """Plug-in mutual information (nats) from the empirical joint of two codes."""
    n = codes_a.size
    ka = int(codes_a.max()) + 1 if n else 0
    kb = int(codes_b.max()) + 1 if n else 0
    joint = np.bincount(codes_a * kb + codes_b, minlength=ka * kb).reshape(ka, kb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mask = joint > 0
    outer = np.outer(pa, pb)
    return float(np.sum(joint[mask] * np.log(joint[mask] / outer[mask])))


# -- metric scores -------------------------------------------------------


def ksc(real_values, synth_values, name: str = "ksc") -> MetricScore:
    """Kolmogorov-Smirnov complement: 1 - sup ECDF difference."""
    return MetricScore.of(name, 1.0 - ks_distance(np.asarray(real_values), np.asarray(synth_values)))


def tvc(real_values, synth_values, name: str = "tvc") -> MetricScore:
    """Total-variation complement over category proportions."""
    return MetricScore.of(name, 1.0 - tv_distance(np.asarray(real_values), np.asarray(synth_values)))


def correlation_similarity(real_x, real_y, synth_x, synth_y, name: str = "correlation") -> MetricScore:
    """1 - |pearson_s - pearson_r| / 2; skipped when either column is constant."""
    for arr in (real_x, real_y, synth_x, synth_y):
        arr = np.asarray(arr, dtype=float)
        if arr.size < 2 or np.std(arr) == 0.0:
            return MetricScore.skip(name, "zero-variance column")
    rho_r = float(np.corrcoef(np.asarray(real_x, float), np.asarray(real_y, float))[0, 1])
    rho_s = float(np.corrcoef(np.asarray(synth_x, float), np.asarray(synth_y, float))[0, 1])
    return MetricScore.of(name, 1.0 - abs(rho_s - rho_r) / 2.0)


def contingency_similarity(real_a, real_b, synth_a, synth_b, name: str = "contingency") -> MetricScore:
    """Half-L1 complement between joint category proportions (union of cells)."""
    real_a, real_b = np.asarray(real_a), np.asarray(real_b)
    synth_a, synth_b = np.asarray(synth_a), np.asarray(synth_b)
    if real_a.size == 0 or synth_a.size == 0:
        raise MetricError("empty sample")
    universe = sorted(
        set(zip(real_a.tolist(), real_b.tolist())) | set(zip(synth_a.tolist(), synth_b.tolist()))
    )
    p_r = _joint_proportions(real_a, real_b, universe)
    p_s = _joint_proportions(synth_a, synth_b, universe)
    return MetricScore.of(name, 1.0 - 0.5 * float(np.abs(p_s - p_r).sum()))


def eta_squared_similarity(real_num, real_cat, synth_num, synth_cat, name: str = "eta_squared") -> MetricScore:
    """1 - |eta2_s - eta2_r|; skipped when a numeric column is constant."""
    try:
        e_r = eta_squared(np.asarray(real_num, float), np.asarray(real_cat))
        e_s = eta_squared(np.asarray(synth_num, float), np.asarray(synth_cat))
    except MetricError as exc:
        return MetricScore.skip(name, str(exc))
    return MetricScore.of(name, 1.0 - abs(e_s - e_r))


def shared_bin_edges(real: np.ndarray, synth: np.ndarray, bins: int = MI_BINS) -> np.ndarray:
    """Equal-frequency bin edges computed on the pooled real+synthetic values."""
    pooled = np.concatenate([np.asarray(real, float), np.asarray(synth, float)])
    qs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    return np.quantile(pooled, qs)


def _encode_columns(
    real: pd.DataFrame,
    synth: pd.DataFrame,
    numeric_cols: Sequence[str],
    categorical_cols: Sequence[str],
    bins: int,
) -> tuple[dict, dict]:
    """Integer codes per column, shared between the two datasets."""
    codes_r, codes_s = {}, {}
    for c in numeric_cols:
        edges = shared_bin_edges(real[c].to_numpy(), synth[c].to_numpy(), bins)
        codes_r[c] = np.searchsorted(edges, real[c].to_numpy(dtype=float), side="right")
        codes_s[c] = np.searchsorted(edges, synth[c].to_numpy(dtype=float), side="right")
    for c in categorical_cols:
        cats = sorted(set(real[c].tolist()) | set(synth[c].tolist()))
        idx = {v: i for i, v in enumerate(cats)}
        codes_r[c] = np.array([idx[v] for v in real[c].tolist()], dtype=int)
        codes_s[c] = np.array([idx[v] for v in synth[c].tolist()], dtype=int)
    return codes_r, codes_s


def _normalized_mi_vector(codes: dict, pairs: Sequence[tuple[str, str]]) -> Optional[np.ndarray]:
    vals = np.array(
        [max(mutual_information(codes[a], codes[b]), 0.0) for a, b in pairs], dtype=float
    )
    total = vals.sum()
    if total == 0.0:
        return None
    return vals / total


def mi_similarity(
    real: pd.DataFrame,
    synth: pd.DataFrame,
    numeric_cols: Sequence[str],
    categorical_cols: Sequence[str],
    bins: int = MI_BINS,
    name: str = "mi",
    pair_block: Optional[Sequence[tuple[str, str]]] = None,
) -> MetricScore:
    """Half-L1 complement between normalized pairwise MI matrices.

    Numeric columns are discretized into equal-frequency bins with edges
    shared across the two datasets, so identical data yields identical
    matrices and a score of exactly 1.  ``pair_block`` restricts the
    matrix to the given column pairs (used for the cross-level block);
    by default all unordered pairs enter, each counted once on either
    side of the diagonal.
    """
    columns = list(numeric_cols) + list(categorical_cols)
    if pair_block is None and len(columns) < 2:
        return MetricScore.skip(name, "need at least 2 columns")
    codes_r, codes_s = _encode_columns(real, synth, numeric_cols, categorical_cols, bins)
    pairs = list(pair_block) if pair_block is not None else list(itertools.combinations(columns, 2))
    if not pairs:
        return MetricScore.skip(name, "no column pairs")
    m_r = _normalized_mi_vector(codes_r, pairs)
    m_s = _normalized_mi_vector(codes_s, pairs)
    if m_r is None or m_s is None:
        return MetricScore.skip(name, "all pairwise mutual information is zero")
    return MetricScore.of(name, 1.0 - 0.5 * float(np.abs(m_s - m_r).sum()))


# -- table-level report ---------------------------------------------------


@dataclass(frozen=True)
class WithinTableReport:
    table: str
    marginal: tuple[MetricScore, ...]
    pairwise: tuple[MetricScore, ...]

    @property
    def marginal_avg(self) -> Optional[float]:
        return mean_score(self.marginal)

    @property
    def pairwise_avg(self) -> Optional[float]:
        return mean_score(self.pairwise)

    @property
    def table_avg(self) -> Optional[float]:
        parts = [a for a in (self.marginal_avg, self.pairwise_avg) if a is not None]
        if not parts:
            return None
        return float(sum(parts) / len(parts))

    def to_dict(self) -> dict:
        return {
            "table": self.table,
            "marginal": [s.to_dict() for s in self.marginal],
            "pairwise": [s.to_dict() for s in self.pairwise],
            "marginal_avg": self.marginal_avg,
            "pairwise_avg": self.pairwise_avg,
            "table_avg": self.table_avg,
        }


def within_table_report(real: pd.DataFrame, synth: pd.DataFrame, spec: TableSpec) -> WithinTableReport:
    """Score every column and column pair of one table of a real/synthetic pair."""
    num = spec.numeric_columns()
    cat = spec.categorical_columns()

    marginal: list[MetricScore] = []
    for c in num:
        marginal.append(ksc(real[c].to_numpy(), synth[c].to_numpy(), name=f"ksc:{c}"))
    for c in cat:
        marginal.append(tvc(real[c].to_numpy(), synth[c].to_numpy(), name=f"tvc:{c}"))

    pairwise: list[MetricScore] = []
    for a, b in itertools.combinations(num, 2):
        pairwise.append(
            correlation_similarity(
                real[a].to_numpy(), real[b].to_numpy(),
                synth[a].to_numpy(), synth[b].to_numpy(),
                name=f"correlation:{a}|{b}",
            )
        )
    for a, b in itertools.combinations(cat, 2):
        pairwise.append(
            contingency_similarity(
                real[a].to_numpy(), real[b].to_numpy(),
                synth[a].to_numpy(), synth[b].to_numpy(),
                name=f"contingency:{a}|{b}",
            )
        )
    for a in num:
        for b in cat:
            pairwise.append(
                eta_squared_similarity(
                    real[a].to_numpy(), real[b].to_numpy(),
                    synth[a].to_numpy(), synth[b].to_numpy(),
                    name=f"eta_squared:{a}|{b}",
                )
            )
    if len(num) + len(cat) >= 2:
        pairwise.append(mi_similarity(real, synth, num, cat, name="mi:table"))

    report = WithinTableReport(table=spec.name, marginal=tuple(marginal), pairwise=tuple(pairwise))
    if report.table_avg is None:
        raise MetricError(f"table {spec.name!r} has no scoreable columns")
    return report
