"""Design-matrix construction from typed data frames.

Numeric columns pass through, categorical columns are one-hot encoded
against an explicit category list (reference category dropped), and the
builder can append cluster means of numeric columns and pairwise product
terms.  Category lists are supplied by the caller so that two datasets
can share one encoding.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

INTERCEPT = "(intercept)"


def build_design(
    frame: pd.DataFrame,
    numeric_cols: Sequence[str],
    categorical_cols: Mapping[str, Sequence[str]] = (),
    intercept: bool = True,
    cluster_means_of: Sequence[str] = (),
    cluster_col: Optional[str] = None,
    interactions: Sequence[tuple[str, str]] = (),
) -> tuple[np.ndarray, list[str]]:
    """Return (matrix, column names) for one frame.

    ``categorical_cols`` maps column name to its full category list; the
    first category is the reference level and gets no indicator.
    ``cluster_means_of`` appends per-cluster means of the named numeric
    columns as ``<col>__gmean`` (requires ``cluster_col``).
    ``interactions`` appends products of numeric columns as ``a:b``.
    """
    cols: list[np.ndarray] = []
    names: list[str] = []
    if intercept:
        cols.append(np.ones(len(frame)))
        names.append(INTERCEPT)
    for c in numeric_cols:
        cols.append(frame[c].to_numpy(dtype=float))
        names.append(c)
    for c, categories in dict(categorical_cols).items():
        values = frame[c].to_numpy()
        for cat in list(categories)[1:]:
            cols.append((values == cat).astype(float))
            names.append(f"{c}={cat}")
    if cluster_means_of:
        if cluster_col is None:
            raise ValueError("cluster_means_of requires cluster_col")
        groups = frame[cluster_col]
        for c in cluster_means_of:
            means = frame.groupby(groups, sort=False)[c].transform("mean")
            cols.append(means.to_numpy(dtype=float))
            names.append(f"{c}__gmean")
    for a, b in interactions:
        cols.append(frame[a].to_numpy(dtype=float) * frame[b].to_numpy(dtype=float))
        names.append(f"{a}:{b}")
    return np.column_stack(cols) if cols else np.empty((len(frame), 0)), names


def standardizer(train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and scales from a training matrix; constant columns keep scale 1."""
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd
