"""From-scratch classifiers: L2 logistic regression, random forest,
gradient boosting, plus feature standardization.

All three follow the scikit-learn estimator protocol (fit / predict_proba /
get_params).  Tree ensembles serialize to a documented JSON schema which is
the contract consumed by the `explain` module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .base import BaseEstimator, check_fitted, check_X, check_X_y
from .rng import SplitMix64
from .tree import DecisionTree, grow_tree

MODEL_SCHEMA_VERSION = 1


def logistic(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def binomial_deviance(y: np.ndarray, proba: np.ndarray) -> float:
    """Mean negative binomial log-likelihood (x2), clipped for stability."""
    p = np.clip(proba, 1e-15, 1 - 1e-15)
    return float(-2.0 * np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


class Standardizer(BaseEstimator):
    """Zero-mean unit-variance scaling with training statistics only.

    Uses the population standard deviation.  Zero-variance features get a
    divisor of 1 and are tagged in `constant_features_`.
    """

    def fit(self, X) -> "Standardizer":
        X = check_X(X)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on an empty matrix")
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.constant_features_ = np.flatnonzero(sd == 0.0)
        sd = np.where(sd == 0.0, 1.0, sd)
        self.scale_ = sd
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "mean_")
        X = check_X(X, n_features=len(self.mean_))
        return (X - self.mean_) / self.scale_

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)

    def inverse_transform(self, X) -> np.ndarray:
        check_fitted(self, "mean_")
        X = check_X(X, n_features=len(self.mean_))
        return X * self.scale_ + self.mean_


class LogisticRegressionClassifier(BaseEstimator):
    """Binary logistic regression with an unpenalized intercept.

    Minimizes mean negative log-likelihood + (lambda / (2n)) * ||w||^2 with
    lambda = 1/C, starting from zero weights, via L-BFGS.  Converged when the
    gradient max-norm is <= tol or the iteration cap is reached.
    """

    def __init__(self, C: float = 1.0, max_iter: int = 2000, tol: float = 1e-6):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol

    def _objective(self, params: np.ndarray, X: np.ndarray, y: np.ndarray):
        n = len(y)
        w, b = params[:-1], params[-1]
        z = X @ w + b
        p = logistic(z)
        # log-likelihood via log1p(exp(.)) on the safe side of the exponent
        nll = np.mean(np.logaddexp(0.0, z) - y * z)
        lam = 1.0 / self.C
        obj = nll + lam / (2.0 * n) * float(w @ w)
        grad_w = X.T @ (p - y) / n + lam / n * w
        grad_b = float(np.mean(p - y))
        return obj, np.concatenate([grad_w, [grad_b]])

    def fit(self, X, y) -> "LogisticRegressionClassifier":
        X, y = check_X_y(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("y contains a single class")
        x0 = np.zeros(X.shape[1] + 1)
        result = minimize(
            self._objective, x0, args=(X, y), jac=True, method="L-BFGS-B",
            options={"maxiter": self.max_iter, "gtol": self.tol * 1e-2,
                     "ftol": 1e-16, "maxfun": 10 * self.max_iter},
        )
        params = result.x
        self.coef_ = params[:-1]
        self.intercept_ = float(params[-1])
        _, grad = self._objective(params, X, y)
        self.gradient_max_norm_ = float(np.max(np.abs(grad)))
        self.n_iter_ = int(result.nit)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "coef_")
        X = check_X(X, n_features=self.n_features_in_)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return logistic(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


@dataclass
class TreeEnsemble:
    """Additive collection of trees plus the aggregation contract.

    kind "gradient-boosting": margin = base_score + shrinkage * sum of leaf
    values; probability = logistic(margin).  kind "random-forest": trees
    store leaf probabilities; probability = mean over trees; margins are
    undefined.
    """

    kind: str  # "gradient-boosting" | "random-forest"
    trees: list[DecisionTree]
    base_score: float = 0.0
    shrinkage: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gradient-boosting", "random-forest"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "random-forest" and self.shrinkage != 1.0:
            raise ValueError("random forests use shrinkage 1.0")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")

    def predict_margin(self, X) -> np.ndarray:
        if self.kind != "gradient-boosting":
            raise ValueError("margins are defined for gradient boosting only")
        X = check_X(X)
        margin = np.full(len(X), self.base_score)
        for tree in self.trees:
            margin += self.shrinkage * tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        if self.kind == "gradient-boosting":
            return logistic(self.predict_margin(X))
        X = check_X(X)
        if not self.trees:
            raise ValueError("empty forest")
        acc = np.zeros(len(X))
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)

    def expected_output(self) -> float:
        """Cover-weighted expected ensemble output (margin or probability)."""
        total = sum(tree.expected_value() for tree in self.trees)
        if self.kind == "gradient-boosting":
            return self.base_score + self.shrinkage * total
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": self.kind,
            "base_score": self.base_score,
            "shrinkage": self.shrinkage,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            kind=d["kind"],
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            base_score=d["base_score"],
            shrinkage=d["shrinkage"],
        )

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        return cls.from_dict(json.loads(text))


class RandomForestClassifier(BaseEstimator):
    """Bagged Gini trees with sqrt(p) feature subsampling per node.

    Bootstrap draws and feature picks come from per-tree SplitMix64 streams
    derived from the seed, so fitting is deterministic and independent of
    row storage order given a compensating index map.
    """

    def __init__(self, n_estimators: int = 200, max_depth: int = 8,
                 min_samples_leaf: int = 10, seed: int = 0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed

    def fit(self, X, y) -> "RandomForestClassifier":
        X, y = check_X_y(X, y)
        if len(X) < 2:
            raise ValueError("need at least two rows")
        if len(np.unique(y)) < 2:
            raise ValueError("y contains a single class")
        n, p = X.shape
        k = max(1, int(round(math.sqrt(p))))
        root = SplitMix64(self.seed)
        y_float = y.astype(float)
        trees = []
        for t in range(self.n_estimators):
            rng = root.spawn(t)
            boot = np.asarray([rng.randint_below(n) for _ in range(n)], dtype=int)
            tree = grow_tree(
                X, y_float, criterion="gini",
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                rows=boot, max_features=k, rng=rng,
            )
            trees.append(tree)
        self.ensemble_ = TreeEnsemble(kind="random-forest", trees=trees)
        self.n_features_in_ = p
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "ensemble_")
        return self.ensemble_.predict_proba(check_X(X, n_features=self.n_features_in_))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


class GradientBoostingClassifier(BaseEstimator):
    """Stagewise binomial-deviance boosting with Newton leaf values.

    The base score is logit(prevalence); each stage fits a variance-reduction
    regression tree to the residual y - p and sets leaf values to
    sum(residual) / sum(p * (1 - p)) (denominator floored at 1e-12).  No
    subsampling, so fitting is fully deterministic.
    """

    def __init__(self, n_estimators: int = 200, learning_rate: float = 0.05,
                 max_depth: int = 4, min_samples_leaf: int = 10):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y) -> "GradientBoostingClassifier":
        X, y = check_X_y(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("y contains a single class")
        n, p = X.shape
        prevalence = float(np.mean(y))
        base = logit(prevalence)
        margin = np.full(n, base)
        trees: list[DecisionTree] = []
        deviance: list[float] = []
        y_float = y.astype(float)
        for _ in range(self.n_estimators):
            prob = logistic(margin)
            residual = y_float - prob
            hessian = prob * (1.0 - prob)

            def newton_leaf(rows: np.ndarray) -> float:
                denom = max(float(np.sum(hessian[rows])), 1e-12)
                return float(np.sum(residual[rows])) / denom

            tree = grow_tree(
                X, residual, criterion="variance",
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                leaf_value=newton_leaf,
            )
            margin = margin + self.learning_rate * tree.predict(X)
            trees.append(tree)
            deviance.append(binomial_deviance(y_float, logistic(margin)))
        self.ensemble_ = TreeEnsemble(
            kind="gradient-boosting", trees=trees,
            base_score=base, shrinkage=self.learning_rate,
        )
        self.train_deviance_ = deviance
        self.n_features_in_ = p
        return self

    def predict_margin(self, X) -> np.ndarray:
        check_fitted(self, "ensemble_")
        return self.ensemble_.predict_margin(check_X(X, n_features=self.n_features_in_))

    def predict_proba(self, X) -> np.ndarray:
        return logistic(self.predict_margin(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)
