"""Estimator-style wrappers: fit/transform/predict objects with get_params,
mirroring the scikit-learn conventions so the pieces drop into sklearn
pipelines. The underlying computations live in the functional modules;
these classes add parameter handling and input validation only.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .boosting import (
    DEFAULT_LEARNING_RATE,
    DEFAULT_REG_LAMBDA,
    DEFAULT_ROUNDS,
    predict_raw,
    predict_scores,
    train_stump_booster,
)
from .distance import DEFAULT_RECTANGLE_FACTOR
from .errors import ParameterError, SelectionError
from .features import FeatureRegistry, extract_features
from .model import AlignedSlide
from .parallel import extract_features_parallel
from .selection import impute_median, mannwhitney_rank, mrmr_rank


def check_matrix(X, *, allow_nan: bool = False, name: str = "X") -> np.ndarray:
    """Validate a 2-D float matrix; NaN only when explicitly allowed."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {X.shape}")
    if np.isinf(X).any():
        raise ParameterError(f"{name} contains infinity")
    if not allow_nan and np.isnan(X).any():
        raise ParameterError(f"{name} contains NaN")
    return X


def check_binary_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise ParameterError(f"y must have shape ({n_rows},)")
    if not np.isin(y, (0, 1)).all():
        raise ParameterError("y must contain only 0 and 1")
    return y.astype(np.int64)


class TissueFeatureExtractor(BaseEstimator, TransformerMixin):
    """Turns aligned slides into a feature matrix in registry order.

    ``transform`` accepts a sequence of :class:`AlignedSlide` and returns a
    float matrix with NaN where a feature is null. ``fit`` is a no-op; the
    extractor is stateless apart from its parameters.
    """

    def __init__(
        self,
        registry: Optional[FeatureRegistry] = None,
        rectangle_factor: float = DEFAULT_RECTANGLE_FACTOR,
        distances_in_um: bool = False,
        workers: Optional[int] = None,
    ):
        self.registry = registry
        self.rectangle_factor = rectangle_factor
        self.distances_in_um = distances_in_um
        self.workers = workers

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        registry = self.registry if self.registry is not None else FeatureRegistry.default()
        rows = []
        for slide in X:
            if not isinstance(slide, AlignedSlide):
                raise ParameterError("transform expects AlignedSlide items")
            if self.workers is not None and self.workers != 1:
                fv = extract_features_parallel(
                    slide,
                    registry,
                    workers=self.workers,
                    rectangle_factor=self.rectangle_factor,
                    distances_in_um=self.distances_in_um,
                )
            else:
                fv = extract_features(
                    slide,
                    registry,
                    rectangle_factor=self.rectangle_factor,
                    distances_in_um=self.distances_in_um,
                )
            rows.append(
                [math.nan if v is None else float(v) for v in fv.values.values()]
            )
        return np.array(rows, dtype=np.float64).reshape(len(rows), len(registry.names))

    def get_feature_names_out(self, input_features=None):
        registry = self.registry if self.registry is not None else FeatureRegistry.default()
        return np.array(registry.names, dtype=object)


class _RankingSelector(BaseEstimator, TransformerMixin):
    """Shared fit/transform scaffolding for the two rankers."""

    def __init__(self, n_features: Optional[int] = None, impute: bool = True):
        self.n_features = n_features
        self.impute = impute

    def _prepare(self, X, y):
        X = check_matrix(X, allow_nan=self.impute)
        y = check_binary_labels(y, X.shape[0])
        if self.impute:
            self.medians_source_ = X
            X = impute_median(X)
        return X, y

    def _rank(self, X, y) -> list[int]:  # pragma: no cover - subclass hook
        raise NotImplementedError

    def fit(self, X, y):
        X, y = self._prepare(X, y)
        ranking = self._rank(X, y)
        n = self.n_features if self.n_features is not None else X.shape[1]
        if not 1 <= n <= X.shape[1]:
            raise SelectionError(f"n_features must be in 1..{X.shape[1]}")
        self.ranking_ = np.array(ranking, dtype=np.int64)
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[self.ranking_[:n]] = True
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "support_"):
            raise SelectionError("selector is not fitted")
        X = check_matrix(X, allow_nan=self.impute)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(f"X must have {self.n_features_in_} columns")
        if self.impute:
            X = impute_median(X, reference=self.medians_source_)
        n = self.n_features if self.n_features is not None else X.shape[1]
        return X[:, self.ranking_[:n]]


class MrmrSelector(_RankingSelector):
    """Greedy relevance/redundancy feature selector."""

    def _rank(self, X, y):
        return mrmr_rank(X, y)


class MannWhitneySelector(_RankingSelector):
    """Ranks features by two-sided Mann-Whitney p-value."""

    def _rank(self, X, y):
        scores = mannwhitney_rank(X, y)
        self.u_statistics_ = np.array([s.u for s in scores])
        self.p_values_ = np.array([s.p for s in scores])
        return [s.index for s in scores]


class StumpBoostingClassifier(BaseEstimator, ClassifierMixin):
    """Deterministic gradient-boosted stump classifier for binary labels."""

    def __init__(
        self,
        rounds: int = DEFAULT_ROUNDS,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        reg_lambda: float = DEFAULT_REG_LAMBDA,
    ):
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_binary_labels(y, X.shape[0])
        self.model_ = train_stump_booster(
            X, y, rounds=self.rounds, learning_rate=self.learning_rate, reg_lambda=self.reg_lambda
        )
        self.classes_ = np.array([0, 1], dtype=np.int64)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted_input(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise SelectionError("classifier is not fitted")
        return check_matrix(X)

    def decision_function(self, X) -> np.ndarray:
        X = self._check_fitted_input(X)
        return predict_raw(self.model_, X)

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_fitted_input(X)
        scores = predict_scores(self.model_, X)
        return np.column_stack([1.0 - scores, scores])

    def predict(self, X) -> np.ndarray:
        X = self._check_fitted_input(X)
        scores = predict_scores(self.model_, X)
        return (scores >= 0.5).astype(np.int64)
