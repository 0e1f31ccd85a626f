"""Linear mixed models (random intercept, optional one random slope) by REML.

The covariance of the random effects is parameterized as ``G = sigma2 *
Psi`` with ``Psi = L L'`` and ``L`` a lower-triangular log-Cholesky
factor, so the profiled REML deviance is an unconstrained function of
the ratio parameters ``theta``:

    D(theta) = log|Lambda| + log|X' Lambda^-1 X| + (N - p) log(y' P y)

with ``Lambda = I + Z Psi Z'`` block-diagonal by cluster.  Everything is
computed from per-cluster sufficient statistics (Z'Z, Z'X, Z'y and the
dense X'X, X'y, y'y), so one evaluation costs O(J q^2 p + p^3)
regardless of N, and the analytic gradient reduces to a trace against a
single q x q accumulator.  The scalar (random-intercept) case is solved
by bracketing the gradient root; the three-parameter slope case uses
L-BFGS-B on the analytic gradient with a fallback to the intercept-only
model when fitting fails.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from ..errors import ModelFitError

RATIO_FLOOR = 1e-8
THETA_LO = math.log(1e-10) / 2.0  # log-chol scale: psi = exp(2*theta)
THETA_HI = math.log(1e8) / 2.0


def _log_chol_psi(theta: np.ndarray, q: int) -> np.ndarray:
    l = np.zeros((q, q))
    if q == 1:
        l[0, 0] = math.exp(theta[0])
    else:
        l[0, 0] = math.exp(theta[0])
        l[1, 1] = math.exp(theta[1])
        l[1, 0] = theta[2]
    return l @ l.T


def _log_chol_dpsi(theta: np.ndarray, q: int) -> list[np.ndarray]:
    l = np.zeros((q, q))
    if q == 1:
        l[0, 0] = math.exp(theta[0])
        dl = [np.array([[l[0, 0]]])]
    else:
        l[0, 0] = math.exp(theta[0])
        l[1, 1] = math.exp(theta[1])
        l[1, 0] = theta[2]
        dl = [
            np.array([[l[0, 0], 0.0], [0.0, 0.0]]),
            np.array([[0.0, 0.0], [0.0, l[1, 1]]]),
            np.array([[0.0, 0.0], [1.0, 0.0]]),
        ]
    return [dli @ l.T + l @ dli.T for dli in dl]


class REMLProblem:
    """Profiled REML deviance and gradient for one design.

    Rows are grouped by cluster once at construction; ``deviance`` and
    ``deviance_and_grad`` are pure functions of the ratio parameters.
    """

    def __init__(self, x, y, clusters, slope_values=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise ModelFitError("design/response shape mismatch")
        clusters = np.asarray(clusters)
        labels, codes = np.unique(clusters, return_inverse=True)
        if labels.size < 2:
            raise ModelFitError("mixed model needs at least 2 clusters")
        order = np.argsort(codes, kind="stable")
        x, y, codes = x[order], y[order], codes[order]
        counts = np.bincount(codes)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

        self.n, self.p = x.shape
        if self.n <= self.p:
            raise ModelFitError("more parameters than observations")
        self.labels = labels
        self.q = 2 if slope_values is not None else 1

        if self.q == 2:
            s = np.asarray(slope_values, dtype=float)[order]
            z_cols = [np.ones_like(y), s]
        else:
            z_cols = [np.ones_like(y)]

        j = labels.size
        self.j = j
        # Per-cluster sufficient statistics.
        self.S = np.empty((j, self.q, self.q))
        self.U = np.empty((j, self.q, self.p))
        self.v = np.empty((j, self.q))
        for a in range(self.q):
            for b in range(a, self.q):
                sab = np.add.reduceat(z_cols[a] * z_cols[b], starts)
                self.S[:, a, b] = sab
                self.S[:, b, a] = sab
            self.U[:, a, :] = np.add.reduceat(x * z_cols[a][:, None], starts, axis=0)
            self.v[:, a] = np.add.reduceat(y * z_cols[a], starts)
        self.xtx = x.T @ x
        self.xty = x.T @ y
        self.yty = float(y @ y)

    # -- core evaluation ---------------------------------------------------

    def _pieces(self, theta: np.ndarray):
        psi = _log_chol_psi(theta, self.q)
        kinv = np.eye(self.q) + self.S @ psi
        sign, logdet = np.linalg.slogdet(kinv)
        if np.any(sign <= 0):
            raise ModelFitError("non-positive-definite marginal covariance")
        k = np.linalg.inv(kinv)
        w = psi @ k
        a = self.xtx - np.einsum("jap,jab,jbq->pq", self.U, w, self.U)
        b = self.xty - np.einsum("jap,jab,jb->p", self.U, w, self.v)
        c = self.yty - np.einsum("ja,jab,jb->", self.v, w, self.v)
        sign_a, logdet_a = np.linalg.slogdet(a)
        if sign_a <= 0:
            raise ModelFitError("singular fixed-effects design")
        try:
            a_inv = np.linalg.inv(a)
        except np.linalg.LinAlgError as exc:
            raise ModelFitError("singular fixed-effects design") from exc
        beta = a_inv @ b
        sse = c - float(b @ beta)
        if sse <= 0 or sse < 1e-12 * max(self.yty, 1.0):
            raise ModelFitError("residual variance collapsed to zero")
        dev = float(logdet.sum()) + logdet_a + (self.n - self.p) * math.log(sse)
        return psi, k, a_inv, beta, sse, dev

    def deviance(self, theta) -> float:
        return self._pieces(np.asarray(theta, dtype=float))[-1]

    def deviance_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        psi, k, a_inv, beta, sse, dev = self._pieces(theta)
        g = np.einsum("jab,jb->ja", k, self.v - np.einsum("jap,p->ja", self.U, beta))
        ku = k @ self.U
        m = np.einsum("jab,jbc->ac", k, self.S)
        m -= np.einsum("jap,pq,jbq->ab", ku, a_inv, ku)
        m -= ((self.n - self.p) / sse) * np.einsum("ja,jb->ab", g, g)
        dpsi = _log_chol_dpsi(theta, self.q)
        grad = np.array([float(np.sum(dp * m)) for dp in dpsi])
        return dev, grad

    # -- extraction ---------------------------------------------------------

    def solution(self, theta: np.ndarray) -> dict:
        psi, k, a_inv, beta, sse, dev = self._pieces(np.asarray(theta, dtype=float))
        sigma2 = sse / (self.n - self.p)
        g = psi @ np.einsum(
            "jab,jb->ja", k, self.v - np.einsum("jap,p->ja", self.U, beta)
        )[..., None]
        blups = g[:, :, 0]
        cov_beta = sigma2 * a_inv
        return {
            "beta": beta,
            "cov_beta": cov_beta,
            "sigma2": sigma2,
            "gmat": sigma2 * psi,
            "psi": psi,
            "blups": blups,
            "deviance": dev,
        }


def _scan_brackets(problem: REMLProblem) -> list[tuple[float, float]]:
    """Bracket every sign change of dD/dtheta for the scalar ratio."""
    grid = np.linspace(THETA_LO, THETA_HI, 25)
    vals = []
    for t in grid:
        _, gr = problem.deviance_and_grad(np.array([t]))
        vals.append(gr[0])
    vals = np.asarray(vals)
    brackets = [
        (grid[i], grid[i + 1])
        for i in range(len(grid) - 1)
        if vals[i] < 0 <= vals[i + 1]
    ]
    if brackets:
        return brackets
    if vals[0] >= 0:
        return [(THETA_LO, THETA_LO)]  # boundary: ratio -> 0
    return [(THETA_HI, THETA_HI)]  # boundary: ratio -> inf


class MixedModel(BaseEstimator):
    """Random-intercept linear mixed model, optionally with one random slope.

    Parameters
    ----------
    slope_feature : column index of X whose coefficient receives a random
        slope, or None for a random intercept only.
    max_iter : optimizer iteration cap before the fit counts as failed.
    fallback : when True, a failed random-slope fit is retried as a
        random-intercept-only model (recorded in ``fallback_applied_``).
    """

    def __init__(self, slope_feature: Optional[int] = None, max_iter: int = 200,
                 fallback: bool = True):
        self.slope_feature = slope_feature
        self.max_iter = max_iter
        self.fallback = fallback

    # -- fitting -------------------------------------------------------------

    def fit(self, X, y, clusters, feature_names: Optional[Sequence[str]] = None):
        X = np.asarray(X, dtype=float)
        names = list(feature_names) if feature_names is not None else [
            f"x{i}" for i in range(X.shape[1])
        ]
        try:
            self._fit_once(X, y, clusters, names, self.slope_feature)
            self.fallback_applied_ = False
        except ModelFitError:
            if self.slope_feature is None or not self.fallback:
                raise
            self._fit_once(X, y, clusters, names, None)
            self.fallback_applied_ = True
        return self

    def _fit_once(self, X, y, clusters, names, slope_feature):
        slope_values = X[:, slope_feature] if slope_feature is not None else None
        problem = REMLProblem(X, y, clusters, slope_values=slope_values)
        if problem.q == 1:
            theta, n_iter, trace = self._solve_scalar(problem)
        else:
            theta, n_iter, trace = self._solve_multi(problem)

        sol = problem.solution(theta)
        _, grad = problem.deviance_and_grad(theta)
        n_diag = 1 if problem.q == 1 else 2
        boundary = bool(
            np.any(theta[:n_diag] <= THETA_LO + 1e-9)
            or np.any(theta[:n_diag] >= THETA_HI - 1e-9)
        )
        if not boundary and float(np.max(np.abs(grad))) > 1e-6:
            raise ModelFitError("REML optimizer did not converge")
        eigvals = np.linalg.eigvalsh(sol["gmat"])
        if np.any(eigvals < -1e-8):
            raise ModelFitError("random-effect covariance not positive semidefinite")

        psi = sol["psi"]
        dead = [i for i in range(problem.q) if psi[i, i] < RATIO_FLOOR]
        if dead:
            # Ratio pinned at the boundary: report exact zero components.
            sol["gmat"] = sol["gmat"].copy()
            sol["blups"] = sol["blups"].copy()
            for i in dead:
                sol["gmat"][i, :] = 0.0
                sol["gmat"][:, i] = 0.0
                sol["blups"][:, i] = 0.0

        se = np.sqrt(np.diag(sol["cov_beta"]))
        if not np.all(np.isfinite(se)):
            raise ModelFitError("standard error computation failed")

        self.active_slope_ = slope_feature
        self.feature_names_ = list(names)
        self.coef_ = sol["beta"]
        self.se_ = se
        self.cov_params_ = sol["cov_beta"]
        self.sigma2_ = float(sol["sigma2"])
        gmat = sol["gmat"]
        self.tau2_ = float(gmat[0, 0])
        self.slope_var_ = float(gmat[1, 1]) if problem.q == 2 else None
        self.slope_cov_ = float(gmat[0, 1]) if problem.q == 2 else None
        self.cluster_labels_ = problem.labels
        self.blups_ = {lab: sol["blups"][i].copy() for i, lab in enumerate(problem.labels)}
        self.reml_deviance_ = float(sol["deviance"])
        self.converged_ = True
        self.n_iter_ = n_iter
        self.opt_trace_ = trace
        self.theta_ = np.asarray(theta, dtype=float)
        self._problem_shape = (problem.n, problem.p, problem.q)

    def _solve_scalar(self, problem: REMLProblem):
        best = None
        n_iter = 0
        for lo, hi in _scan_brackets(problem):
            if lo == hi:
                root = lo
            else:
                root, res = optimize.brentq(
                    lambda t: problem.deviance_and_grad(np.array([t]))[1][0],
                    lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=self.max_iter,
                    full_output=True,
                )
                if not res.converged:
                    raise ModelFitError("scalar REML root search failed")
                n_iter += res.iterations
            dev = problem.deviance(np.array([root]))
            if best is None or dev < best[1]:
                best = (root, dev)
        return np.array([best[0]]), n_iter, [best[1]]

    def _solve_multi(self, problem: REMLProblem):
        # Start at the ANOVA-flavored intercept ratio with a modest slope ratio.
        start_ratio = self._anova_ratio(problem)
        theta0 = np.array([0.5 * math.log(start_ratio),
                           0.5 * math.log(max(start_ratio * 0.25, 1e-4)), 0.0])
        trace: list[float] = []

        def fun(t):
            try:
                d, g = problem.deviance_and_grad(t)
            except ModelFitError:
                return 1e30, np.zeros_like(t)
            return d, g

        def cb(tk):
            try:
                trace.append(problem.deviance(tk))
            except ModelFitError:
                pass

        bounds = [(THETA_LO, THETA_HI)] * 2 + [(-1e4, 1e4)]
        res = optimize.minimize(
            fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds, callback=cb,
            options={"maxiter": self.max_iter, "ftol": 1e-14, "gtol": 1e-9},
        )
        if not np.isfinite(res.fun):
            raise ModelFitError("slope REML optimization diverged")
        theta = self._newton_polish(problem, res.x, trace)
        return theta, int(res.nit), trace

    @staticmethod
    def _newton_polish(problem: REMLProblem, theta: np.ndarray, trace: list) -> np.ndarray:
        """Newton steps on the analytic gradient to tighten convergence."""
        theta = np.asarray(theta, dtype=float)
        try:
            dev, grad = problem.deviance_and_grad(theta)
        except ModelFitError:
            return theta
        for _ in range(8):
            if float(np.max(np.abs(grad))) < 1e-8:
                break
            h = 1e-5
            hess = np.empty((theta.size, theta.size))
            try:
                for k in range(theta.size):
                    tp, tm = theta.copy(), theta.copy()
                    tp[k] += h
                    tm[k] -= h
                    hess[:, k] = (
                        problem.deviance_and_grad(tp)[1] - problem.deviance_and_grad(tm)[1]
                    ) / (2 * h)
                hess = 0.5 * (hess + hess.T)
                np.linalg.cholesky(hess)
                step = np.linalg.solve(hess, grad)
                cand = theta - step
                cand_dev, cand_grad = problem.deviance_and_grad(cand)
            except (np.linalg.LinAlgError, ModelFitError):
                break
            if not np.isfinite(cand_dev) or cand_dev > dev + 1e-9:
                break
            theta, dev, grad = cand, cand_dev, cand_grad
            trace.append(dev)
        return theta

    @staticmethod
    def _anova_ratio(problem: REMLProblem) -> float:
        sizes = problem.S[:, 0, 0]
        n, j = problem.n, problem.j
        means = problem.v[:, 0] / sizes
        ybar = problem.v[:, 0].sum() / n
        ssb = float(np.sum(sizes * (means - ybar) ** 2))
        sst = problem.yty - n * ybar**2
        ssw = max(sst - ssb, 1e-12)
        if n == j:
            return 1.0
        msb, msw = ssb / max(j - 1, 1), ssw / (n - j)
        n_tilde = (n - np.sum(sizes**2) / n) / max(j - 1, 1)
        ratio = max((msb - msw) / n_tilde, 1e-6) / msw if msw > 0 else 1.0
        return float(min(max(ratio, 1e-6), 1e6))

    # -- prediction -----------------------------------------------------------

    def predict(self, X, clusters=None, rule: str = "multilevel") -> np.ndarray:
        """Predict with fixed effects only ("prior") or adding BLUPs ("multilevel").

        Rows from clusters unseen at fit time fall back to fixed effects
        under the multilevel rule.
        """
        X = np.asarray(X, dtype=float)
        pred = X @ self.coef_
        if rule == "prior":
            return pred
        if rule != "multilevel":
            raise ValueError(f"unknown prediction rule {rule!r}")
        if clusters is None:
            return pred
        clusters = np.asarray(clusters)
        for i, lab in enumerate(clusters):
            u = self.blups_.get(lab)
            if u is None:
                continue
            pred[i] += u[0]
            if self.active_slope_ is not None and u.size > 1:
                pred[i] += u[1] * X[i, self.active_slope_]
        return pred
