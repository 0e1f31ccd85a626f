"""Ordinary least squares, plain and with cluster fixed effects.

``LinearModel`` is a rank-revealing OLS: aliased columns are detected by
pivoted QR, dropped from the solve, and reported; their coefficients and
standard errors come back as NaN so the caller can see exactly what was
estimable.

``ClusterFixedEffectsModel`` fits a design with one intercept per
cluster and, optionally, one cluster-specific slope for a designated
covariate.  It never materializes the dummy block: all shared covariates
and the response are residualized against the per-cluster basis
(Frisch-Waugh), the shared coefficients come from OLS on the residuals,
and the per-cluster intercepts/slopes are recovered afterwards.  Shared
covariates absorbed by the dummies (e.g. cluster-constant columns) are
reported as aliased.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from ..errors import ModelFitError

ALIAS_RTOL = 1e-10


class LinearModel(BaseEstimator):
    """Least squares via pivoted QR with aliased-column reporting."""

    def __init__(self, alias_rtol: float = ALIAS_RTOL):
        self.alias_rtol = alias_rtol

    def fit(self, X, y, feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]

        q, r, piv = linalg.qr(X, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        if diag.size == 0 or diag[0] == 0.0:
            raise ModelFitError("design matrix has rank 0")
        rank = int(np.sum(diag > self.alias_rtol * diag[0]))
        kept = np.sort(piv[:rank])
        dropped = np.sort(piv[rank:])
        if n <= rank:
            raise ModelFitError("more parameters than observations")

        xk = X[:, kept]
        beta_k, *_ = np.linalg.lstsq(xk, y, rcond=None)
        resid = y - xk @ beta_k
        dof = n - rank
        sigma2 = float(resid @ resid) / dof
        xtx_inv = np.linalg.inv(xk.T @ xk)

        self.coef_ = np.full(p, np.nan)
        self.coef_[kept] = beta_k
        self.se_ = np.full(p, np.nan)
        self.se_[kept] = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
        self.cov_params_ = sigma2 * xtx_inv
        self.xtx_inv_ = xtx_inv
        self.kept_ = kept
        self.dropped_ = [names[i] for i in dropped]
        self.feature_names_ = names
        self.sigma2_ = sigma2
        self.dof_ = dof
        self.residuals_ = resid
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        coef = np.nan_to_num(self.coef_, nan=0.0)
        return X @ coef


def _cluster_basis_stats(values: list[np.ndarray], starts: np.ndarray, q: int):
    """Per-cluster B'B for the basis [1] or [1, s]."""
    j = starts.size
    btb = np.empty((j, q, q))
    ones = np.ones_like(values[0])
    cols = [ones] + ([values[1]] if q == 2 else [])
    for a in range(q):
        for b in range(a, q):
            s = np.add.reduceat(cols[a] * cols[b], starts)
            btb[:, a, b] = s
            btb[:, b, a] = s
    return btb, cols


def _safe_inverse(btb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched inverse of per-cluster B'B, reducing rank where singular.

    Clusters whose slope basis is degenerate (single row, or constant
    slope covariate) fall back to an intercept-only basis; returns the
    pseudo-inverse stack and the per-cluster basis rank.
    """
    j, q, _ = btb.shape
    inv = np.zeros_like(btb)
    ranks = np.full(j, q)
    if q == 1:
        inv[:, 0, 0] = 1.0 / btb[:, 0, 0]
        return inv, ranks
    n = btb[:, 0, 0]
    det = btb[:, 0, 0] * btb[:, 1, 1] - btb[:, 0, 1] ** 2
    # Scale-aware singularity test: det / (n * sum s^2) ~ within-cluster var share.
    degenerate = det <= 1e-12 * np.maximum(n * btb[:, 1, 1], 1e-300)
    good = ~degenerate
    inv[good, 0, 0] = btb[good, 1, 1] / det[good]
    inv[good, 1, 1] = btb[good, 0, 0] / det[good]
    inv[good, 0, 1] = inv[good, 1, 0] = -btb[good, 0, 1] / det[good]
    inv[degenerate, 0, 0] = 1.0 / n[degenerate]
    ranks[degenerate] = 1
    return inv, ranks


class ClusterFixedEffectsModel(BaseEstimator):
    """OLS with cluster-specific intercepts (and optionally slopes).

    Parameters
    ----------
    slope : include a per-cluster slope for the covariate passed to
        ``fit`` as ``slope_values``.
    """

    def __init__(self, slope: bool = False, alias_rtol: float = ALIAS_RTOL):
        self.slope = slope
        self.alias_rtol = alias_rtol

    def fit(self, X, y, clusters, slope_values=None,
            feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
        if self.slope and slope_values is None:
            raise ModelFitError("slope=True requires slope_values")
        q = 2 if self.slope else 1

        labels, codes = np.unique(np.asarray(clusters), return_inverse=True)
        order = np.argsort(codes, kind="stable")
        xs, ys, codes_s = X[order], y[order], codes[order]
        sv = np.asarray(slope_values, dtype=float)[order] if self.slope else None
        counts = np.bincount(codes_s)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

        basis_vals = [np.ones(n)] + ([sv] if self.slope else [])
        btb, cols = _cluster_basis_stats(basis_vals, starts, q)
        inv, ranks = _safe_inverse(btb)

        def residualize(mat: np.ndarray) -> np.ndarray:
            # B'mat per cluster, then subtract B (B'B)^- B'mat.
            btm = np.stack(
                [np.add.reduceat(mat * c[:, None], starts, axis=0) for c in cols], axis=1
            )  # (J, q, k)
            gamma = inv @ btm  # (J, q, k)
            fitted = np.zeros_like(mat)
            for a in range(q):
                fitted += gamma[codes_s, a, :] * cols[a][:, None]
            return mat - fitted

        x_res = residualize(xs)
        y_res = residualize(ys[:, None])[:, 0]

        # Columns fully absorbed by the cluster basis are aliased.
        norms = np.linalg.norm(x_res, axis=0)
        scale = np.linalg.norm(xs, axis=0)
        absorbed = norms <= np.maximum(self.alias_rtol * scale, 1e-300)
        free = np.flatnonzero(~absorbed)

        beta = np.full(p, np.nan)
        se = np.full(p, np.nan)
        dropped = [names[i] for i in np.flatnonzero(absorbed)]
        fe_rank = int(ranks.sum())
        if free.size:
            inner = LinearModel(alias_rtol=self.alias_rtol).fit(
                x_res[:, free], y_res, feature_names=[names[i] for i in free]
            )
            beta[free] = inner.coef_
            dropped += inner.dropped_
            common_rank = len(free) - len(inner.dropped_)
            dof = n - fe_rank - common_rank
            if dof <= 0:
                raise ModelFitError("no residual degrees of freedom")
            resid_common = y_res - x_res[:, free] @ np.nan_to_num(inner.coef_, nan=0.0)
            sigma2 = float(resid_common @ resid_common) / dof
            se_free = np.full(free.size, np.nan)
            se_free[~np.isnan(inner.coef_)] = np.sqrt(
                np.maximum(sigma2 * np.diag(inner.xtx_inv_), 0.0)
            )
            se[free] = se_free
        else:
            common_rank = 0
            dof = n - fe_rank
            if dof <= 0:
                raise ModelFitError("no residual degrees of freedom")
            sigma2 = float(y_res @ y_res) / dof

        # Recover per-cluster intercepts/slopes from y - X beta.
        partial = ys - xs @ np.nan_to_num(beta, nan=0.0)
        btr = np.stack([np.add.reduceat(partial * c, starts) for c in cols], axis=1)
        gamma = (inv @ btr[:, :, None])[:, :, 0]  # (J, q)

        self.feature_names_ = names
        self.coef_ = beta
        self.se_ = se
        self.dropped_ = dropped
        self.sigma2_ = sigma2
        self.dof_ = dof
        self.cluster_labels_ = labels
        self.cluster_effects_ = {lab: gamma[i].copy() for i, lab in enumerate(labels)}
        self.basis_rank_ = ranks
        return self

    def predict(self, X, clusters, slope_values=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        pred = X @ np.nan_to_num(self.coef_, nan=0.0)
        clusters = np.asarray(clusters)
        if self.slope:
            if slope_values is None:
                raise ModelFitError("slope model prediction requires slope_values")
            sv = np.asarray(slope_values, dtype=float)
        for i, lab in enumerate(clusters):
            eff = self.cluster_effects_.get(lab)
            if eff is None:
                raise ModelFitError(f"unknown cluster {lab!r} for fixed-effects prediction")
            pred[i] += eff[0]
            if self.slope:
                pred[i] += eff[1] * sv[i]
        return pred
