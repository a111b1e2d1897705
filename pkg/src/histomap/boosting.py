"""Gradient-boosted decision stumps with logistic loss.

Second-order (Newton) boosting: each round fits a depth-1 tree to the
current gradients g = p - y and hessians h = p (1 - p), with leaf weights
-G / (H + reg_lambda) scaled by the learning rate. Split gain is the
standard regularized reduction; a round with no positive gain adds a single
leaf instead, which on constant inputs walks the score to the class prior.

Training is entirely deterministic: no sampling, stable sorts, ties broken
by lowest feature index then lowest threshold. Identical data always gives
a bit-identical model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainError

DEFAULT_ROUNDS = 100
DEFAULT_LEARNING_RATE = 0.3
DEFAULT_REG_LAMBDA = 1.0


@dataclass(frozen=True)
class Stump:
    """One round's tree. feature -1 means a single leaf (left == right)."""

    feature: int
    threshold: float
    left: float
    right: float


@dataclass(frozen=True)
class StumpModel:
    n_features: int
    stumps: tuple


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_stump_booster(
    X: np.ndarray,
    y: np.ndarray,
    rounds: int = DEFAULT_ROUNDS,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    reg_lambda: float = DEFAULT_REG_LAMBDA,
) -> StumpModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise TrainError("X must be (samples, features) matching y")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise TrainError("empty training data")
    if not np.isfinite(X).all():
        raise TrainError("training matrix contains NaN or infinity")
    classes = set(np.unique(y).tolist())
    if not classes <= {0.0, 1.0} or len(classes) != 2:
        raise TrainError("labels must contain both classes 0 and 1")
    if rounds < 1 or learning_rate <= 0 or reg_lambda < 0:
        raise TrainError("bad hyperparameters")

    n, n_features = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    x_sorted = np.take_along_axis(X, order, axis=0)
    # only boundaries between distinct values are valid split points; the
    # threshold is the upper value, with a strict < sending the lower side
    # left, so the cut is exact in float arithmetic
    valid = x_sorted[1:] != x_sorted[:-1] if n > 1 else np.zeros((0, n_features), bool)
    thresholds = x_sorted[1:] if n > 1 else np.zeros((0, n_features))

    raw = np.zeros(n)
    stumps: list[Stump] = []
    for _ in range(rounds):
        p = _sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        g_total = float(g.sum())
        h_total = float(h.sum())
        leaf_weight = -g_total / (h_total + reg_lambda)
        parent = g_total * g_total / (h_total + reg_lambda)

        best = None
        if valid.size:
            gl = np.cumsum(g[order], axis=0)[:-1]
            hl = np.cumsum(h[order], axis=0)[:-1]
            gr = g_total - gl
            hr = h_total - hl
            gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent
            gain[~valid] = -np.inf
            # transpose before ravel: first max in feature-major order gives
            # the lowest feature index, then the lowest threshold
            flat = np.argmax(gain.T)
            if gain.T.ravel()[flat] > 0.0:
                feat, cut = divmod(int(flat), valid.shape[0])
                left_mask = X[:, feat] <= x_sorted[cut, feat]
                gl_b = float(g[left_mask].sum())
                hl_b = float(h[left_mask].sum())
                best = Stump(
                    feature=feat,
                    threshold=float(thresholds[cut, feat]),
                    left=learning_rate * (-gl_b / (hl_b + reg_lambda)),
                    right=learning_rate * (-(g_total - gl_b) / (h_total - hl_b + reg_lambda)),
                )
        if best is None:
            best = Stump(
                feature=-1,
                threshold=0.0,
                left=learning_rate * leaf_weight,
                right=learning_rate * leaf_weight,
            )
        stumps.append(best)
        if best.feature < 0:
            raw += best.left
        else:
            raw += np.where(X[:, best.feature] < best.threshold, best.left, best.right)
    return StumpModel(n_features=n_features, stumps=tuple(stumps))


def predict_raw(model: StumpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise TrainError(f"X must have {model.n_features} columns")
    raw = np.zeros(X.shape[0])
    for stump in model.stumps:
        if stump.feature < 0:
            raw += stump.left
        else:
            raw += np.where(X[:, stump.feature] < stump.threshold, stump.left, stump.right)
    return raw


def predict_scores(model: StumpModel, X: np.ndarray) -> np.ndarray:
    """Probability-like scores in [0, 1] (sigmoid of the boosted sum)."""
    return _sigmoid(predict_raw(model, X))
