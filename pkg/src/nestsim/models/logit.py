"""Ridge-penalized multinomial logistic regression.

Full softmax parameterization with an L2 penalty on every coefficient,
which keeps the optimum unique and finite even on separable data.  The
penalized negative log-likelihood and its analytic gradient are exposed
as a static method so finite-difference checks can hit them directly.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, ClassifierMixin

from ..errors import ModelFitError


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MultinomialLogit(BaseEstimator, ClassifierMixin):
    def __init__(self, ridge: float = 1e-4, max_iter: int = 2000, tol: float = 1e-12):
        self.ridge = ridge
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def penalized_nll(w_flat: np.ndarray, X: np.ndarray, y_onehot: np.ndarray, ridge: float):
        """Objective value and gradient at flattened weights (p x C)."""
        n, p = X.shape
        c = y_onehot.shape[1]
        w = w_flat.reshape(p, c)
        z = X @ w
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        nll = float(lse.sum() - np.sum(z * y_onehot)) + 0.5 * ridge * float(np.sum(w * w))
        probs = _softmax(z)
        grad = X.T @ (probs - y_onehot) + ridge * w
        return nll, grad.ravel()

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.classes_ = np.array(sorted(set(y.tolist())))
        if self.classes_.size < 2:
            raise ModelFitError("multinomial logit needs at least 2 classes")
        class_index = {c: i for i, c in enumerate(self.classes_)}
        codes = np.array([class_index[v] for v in y.tolist()])
        onehot = np.zeros((y.size, self.classes_.size))
        onehot[np.arange(y.size), codes] = 1.0

        p, c = X.shape[1], self.classes_.size
        w0 = np.zeros(p * c)
        res = optimize.minimize(
            self.penalized_nll, w0, args=(X, onehot, self.ridge),
            jac=True, method="L-BFGS-B",
            options={"maxiter": self.max_iter, "ftol": self.tol, "gtol": 1e-9},
        )
        if not np.isfinite(res.fun):
            raise ModelFitError("logistic optimization diverged")
        w = self._newton_polish(res.x, X, onehot)
        _, grad = self.penalized_nll(w, X, onehot, self.ridge)
        self.coef_ = w.reshape(p, c)
        self.n_iter_ = int(res.nit)
        self.grad_norm_ = float(np.max(np.abs(grad)))
        self.converged_ = self.grad_norm_ < 1e-5
        return self

    def _newton_polish(self, w_flat: np.ndarray, X: np.ndarray, onehot: np.ndarray) -> np.ndarray:
        """Exact Newton steps; the ridge keeps the Hessian positive definite."""
        n, p = X.shape
        c = onehot.shape[1]
        if p * c > 400:
            return w_flat
        w = w_flat.copy()
        val, grad = self.penalized_nll(w, X, onehot, self.ridge)
        for _ in range(25):
            if float(np.max(np.abs(grad))) < 1e-9:
                break
            probs = _softmax(X @ w.reshape(p, c))
            # Flat order is (feature, class) row-major: index (a, j) = a*c + j,
            # so hess[j::c, k::c] addresses the (class j, class k) block.
            hess = np.zeros((p * c, p * c))
            for j in range(c):
                for k in range(c):
                    dd = probs[:, j] * ((1.0 if j == k else 0.0) - probs[:, k])
                    hess[j::c, k::c] = X.T @ (X * dd[:, None])
            hess += self.ridge * np.eye(p * c)
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                break
            cand = w - step
            cand_val, cand_grad = self.penalized_nll(cand, X, onehot, self.ridge)
            if not np.isfinite(cand_val) or cand_val > val + 1e-12:
                break
            w, val, grad = cand, cand_val, cand_grad
        return w

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(np.asarray(X, dtype=float) @ self.coef_)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
