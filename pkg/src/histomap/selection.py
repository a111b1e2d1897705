"""Cross-validated feature selection and scoring.

Two deterministic rankers (greedy relevance/redundancy quotient and
Mann-Whitney p-value ordering), a stratified feature-count sweep that finds
the count with the best mean validation balanced accuracy, and rank-score
aggregation across folds.

Everything here is exactly reproducible: seeded shuffles, registry-order
tie-breaks, fixed reduction orders. Null feature values are imputed with
training-split medians only, so validation data never leaks into ranking
or imputation.
"""

from __future__ import annotations

import csv
import io as std_io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .boosting import predict_scores, train_stump_booster
from .errors import (
    MetricError,
    ParseError,
    SelectionError,
    StratificationError,
)

RANK_METHODS = ("mrmr", "mannwhitney")


@dataclass(frozen=True)
class Cohort:
    """Sample matrix with binary labels. NaN entries are missing values."""

    X: np.ndarray
    y: np.ndarray
    sample_ids: tuple
    feature_names: tuple

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise SelectionError("cohort matrix must be 2-D")
        if len(y) != X.shape[0] or len(self.sample_ids) != X.shape[0]:
            raise SelectionError("labels and sample ids must match the row count")
        if len(self.feature_names) != X.shape[1]:
            raise SelectionError("feature names must match the column count")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SelectionError("feature names must be unique")
        if not np.isin(y, (0, 1)).all():
            raise SelectionError("labels must be 0 or 1")


@dataclass(frozen=True)
class MannWhitneyScore:
    index: int
    u: float
    p: float


@dataclass(frozen=True)
class FoldSelection:
    fold: int
    ranking: tuple  # feature names, rank 1..F
    accuracy_per_n: tuple  # validation balanced accuracy for N = 1..F


@dataclass(frozen=True)
class FeatureScore:
    name: str
    c: int
    s: Optional[float]


@dataclass(frozen=True)
class SweepResult:
    n_best: int
    mean_curve: tuple
    fold_selections: tuple
    auc_at_best: tuple
    ba_at_best: tuple
    feature_names: tuple


# ---------------------------------------------------------------------------
# imputation


def impute_median(X: np.ndarray, reference: Optional[np.ndarray] = None) -> np.ndarray:
    """Fill NaNs with per-column medians of ``reference`` (default: X itself).

    An all-NaN reference column has no median; those cells become 0.
    """
    X = np.array(X, dtype=np.float64, copy=True)
    ref = X if reference is None else np.asarray(reference, dtype=np.float64)
    for j in range(X.shape[1]):
        col = ref[:, j]
        finite = col[~np.isnan(col)]
        fill = float(np.median(finite)) if finite.size else 0.0
        X[np.isnan(X[:, j]), j] = fill
    return X


def _require_finite(X: np.ndarray, who: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SelectionError(f"{who}: matrix must be 2-D")
    if not np.isfinite(X).all():
        raise SelectionError(f"{who}: matrix contains NaN or infinity; impute first")
    return X


def _require_two_classes(y: np.ndarray, who: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if set(np.unique(y)) != {0, 1}:
        raise SelectionError(f"{who}: both classes must be present")
    return y


# ---------------------------------------------------------------------------
# rankers


def _f_statistic(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """One-way two-group F statistic per column; constant columns score 0."""
    n = len(y)
    masks = [y == 0, y == 1]
    grand = X.mean(axis=0)
    ssb = np.zeros(X.shape[1])
    ssw = np.zeros(X.shape[1])
    for m in masks:
        grp = X[m]
        mean_g = grp.mean(axis=0)
        ssb += m.sum() * (mean_g - grand) ** 2
        ssw += ((grp - mean_g) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ssb / (ssw / (n - 2))
    f[ssb == 0.0] = 0.0  # covers constant columns (0/0) and equal group means
    f[(ssw == 0.0) & (ssb > 0.0)] = np.inf
    return f


def mrmr_rank(X: np.ndarray, y: np.ndarray, n: Optional[int] = None) -> list[int]:
    """Greedy relevance/redundancy ranking; returns column indices.

    Relevance is the two-group F statistic; redundancy the mean absolute
    Pearson correlation against the already-picked columns. Each step takes
    argmax of relevance / (redundancy + 1e-12), ties to the lowest index.
    """
    X = _require_finite(X, "mrmr_rank")
    y = _require_two_classes(y, "mrmr_rank")
    n_features = X.shape[1]
    if n is None:
        n = n_features
    if not 1 <= n <= n_features:
        raise SelectionError(f"mrmr_rank: n must be in 1..{n_features}")

    std = X.std(axis=0)
    if (std == 0.0).all():
        raise SelectionError("mrmr_rank: every feature is constant")
    relevance = _f_statistic(X, y)

    centered = X - X.mean(axis=0)
    denom = np.where(std == 0.0, 1.0, std)
    zscored = centered / denom  # constant columns become 0 -> correlation 0

    selected: list[int] = []
    redundancy_sum = np.zeros(n_features)
    remaining = np.ones(n_features, dtype=bool)
    for _ in range(n):
        if selected:
            score = relevance / (redundancy_sum / len(selected) + 1e-12)
        else:
            score = relevance.copy()
        score[~remaining] = -np.inf
        pick = int(np.argmax(score))  # argmax takes the first max: lowest index
        selected.append(pick)
        remaining[pick] = False
        corr = np.abs(zscored.T @ zscored[:, pick]) / X.shape[0]
        redundancy_sum += np.minimum(corr, 1.0)
    return selected


def mann_whitney_u(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float, float]:
    """Two-sided Mann-Whitney test of two samples.

    Returns (u_a, u_b, u, p): the U statistic of each sample, their minimum,
    and the p-value from the tie-corrected normal approximation with
    continuity correction. Zero variance (all pooled values tied) gives p=1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise SelectionError("mann_whitney_u: both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled, method="average")
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1
    u = min(u1, u2)

    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts.astype(np.float64) ** 3 - counts).sum())
    sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0.0:
        return u1, u2, u, 1.0
    z = (u - n1 * n2 / 2.0 + 0.5) / math.sqrt(sigma_sq)
    p = min(1.0, 2.0 * (0.5 * math.erfc(-z / math.sqrt(2.0))))
    return u1, u2, u, p


def mannwhitney_rank(X: np.ndarray, y: np.ndarray) -> list[MannWhitneyScore]:
    """Per-feature two-sided tests, ordered by ascending p (ties: column order)."""
    X = _require_finite(X, "mannwhitney_rank")
    y = _require_two_classes(y, "mannwhitney_rank")
    scores = []
    for j in range(X.shape[1]):
        _, _, u, p = mann_whitney_u(X[y == 1, j], X[y == 0, j])
        scores.append(MannWhitneyScore(index=j, u=u, p=p))
    scores.sort(key=lambda s: (s.p, s.index))
    return scores


def _rank_indices(X: np.ndarray, y: np.ndarray, method: str) -> list[int]:
    if method == "mrmr":
        return mrmr_rank(X, y)
    if method == "mannwhitney":
        return [s.index for s in mannwhitney_rank(X, y)]
    raise SelectionError(f"unknown ranking method {method!r}; use one of {RANK_METHODS}")


# ---------------------------------------------------------------------------
# accuracy metrics


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean of per-class recalls over classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise MetricError("balanced_accuracy: shapes must match and be non-empty")
    recalls = []
    for cls in np.unique(y_true):
        m = y_true == cls
        recalls.append(float((y_pred[m] == cls).sum()) / int(m.sum()))
    return float(sum(recalls) / len(recalls))


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve; tied scores contribute by mid-rank."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.shape != scores.shape:
        raise MetricError("roc_auc: shapes must match")
    n1 = int((y_true == 1).sum())
    n0 = int((y_true == 0).sum())
    if n1 == 0 or n0 == 0:
        raise MetricError("roc_auc: both classes must be present")
    ranks = rankdata(scores, method="average")
    r1 = float(ranks[y_true == 1].sum())
    return (r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0)


# ---------------------------------------------------------------------------
# cross-validation sweep


def stratified_folds(
    y: np.ndarray, folds: int, seed: int, sample_ids: Optional[Sequence] = None
) -> list[np.ndarray]:
    """Seeded stratified partition; returns sorted validation index arrays.

    Per class, indices are put in sample-id order, shuffled with the seeded
    generator, and dealt round-robin. Keying the shuffle on sample ids makes
    fold membership a function of (ids, labels, seed) alone, so reordering
    cohort rows cannot change which samples share a fold.
    """
    y = np.asarray(y)
    if folds < 2:
        raise StratificationError("need at least 2 folds")
    if folds > len(y):
        raise StratificationError("more folds than samples")
    order_key = (
        list(range(len(y)))
        if sample_ids is None
        else sorted(range(len(y)), key=lambda i: str(sample_ids[i]))
    )
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(folds)]
    for cls in (0, 1):
        members = [i for i in order_key if y[i] == cls]
        perm = rng.permutation(len(members))
        for pos, which in enumerate(perm):
            buckets[pos % folds].append(members[which])
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def cv_sweep(cohort: Cohort, folds: int = 3, method: str = "mrmr", seed: int = 0) -> SweepResult:
    """Feature-count sweep under stratified cross-validation.

    Per fold: impute with training medians, rank features once on the
    training split, then for every count N train the stump booster on the
    top N and record validation balanced accuracy. The best count is the
    argmax of the mean accuracy curve, smallest N on ties. Per-fold AUC and
    balanced accuracy at that count are reported alongside.
    """
    if method not in RANK_METHODS:
        raise SelectionError(f"unknown ranking method {method!r}; use one of {RANK_METHODS}")
    X, y = cohort.X, cohort.y
    n_features = X.shape[1]
    if n_features == 0:
        raise SelectionError("cv_sweep: cohort has no features")
    fold_val = stratified_folds(y, folds, seed, cohort.sample_ids)

    fold_selections: list[FoldSelection] = []
    curves = np.zeros((folds, n_features))
    split_cache = []
    for k, val_idx in enumerate(fold_val):
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[val_idx] = False
        train_idx = np.flatnonzero(train_mask)
        y_tr, y_val = y[train_idx], y[val_idx]
        if len(set(y_tr.tolist())) < 2:
            raise StratificationError(f"fold {k}: training split lacks a class")
        X_tr = impute_median(X[train_idx])
        X_val = impute_median(X[val_idx], reference=X[train_idx])

        ranking = _rank_indices(X_tr, y_tr, method)
        for n in range(1, n_features + 1):
            cols = ranking[:n]
            model = train_stump_booster(X_tr[:, cols], y_tr)
            scores = predict_scores(model, X_val[:, cols])
            curves[k, n - 1] = balanced_accuracy(y_val, (scores >= 0.5).astype(np.int64))
        fold_selections.append(
            FoldSelection(
                fold=k,
                ranking=tuple(cohort.feature_names[j] for j in ranking),
                accuracy_per_n=tuple(float(v) for v in curves[k]),
            )
        )
        split_cache.append((X_tr, y_tr, X_val, y_val, ranking))

    mean_curve = curves.mean(axis=0)
    n_best = int(np.argmax(mean_curve)) + 1  # argmax returns the smallest tied N

    auc_at_best: list[Optional[float]] = []
    ba_at_best: list[float] = []
    for X_tr, y_tr, X_val, y_val, ranking in split_cache:
        cols = ranking[:n_best]
        model = train_stump_booster(X_tr[:, cols], y_tr)
        scores = predict_scores(model, X_val[:, cols])
        ba_at_best.append(balanced_accuracy(y_val, (scores >= 0.5).astype(np.int64)))
        if len(set(y_val.tolist())) == 2:
            auc_at_best.append(roc_auc(y_val, scores))
        else:
            auc_at_best.append(None)

    return SweepResult(
        n_best=n_best,
        mean_curve=tuple(float(v) for v in mean_curve),
        fold_selections=tuple(fold_selections),
        auc_at_best=tuple(auc_at_best),
        ba_at_best=tuple(ba_at_best),
        feature_names=tuple(cohort.feature_names),
    )


# ---------------------------------------------------------------------------
# rank-score aggregation


def aggregate_scores(
    rankings: Sequence[Sequence[str]],
    n_best: int,
    all_names: Optional[Sequence[str]] = None,
) -> list[FeatureScore]:
    """Cross-fold consensus: occurrence count c, then rank score s.

    Each fold contributes its top ``n_best`` features. For a feature picked
    by at least one fold, s = log10 of the sum over picking folds of
    10^(n_best - rank). Unpicked features get c = 0, s = null, and sort
    last. Order: c descending, s descending, name ascending; addends are
    summed in sorted order so fold order never matters.
    """
    if n_best < 1:
        raise SelectionError("n_best must be at least 1")
    truncated = []
    for r, ranking in enumerate(rankings):
        ranking = list(ranking)
        if len(ranking) < n_best:
            raise SelectionError(f"fold {r} supplies {len(ranking)} features, needs {n_best}")
        if len(set(ranking[:n_best])) != n_best:
            raise SelectionError(f"fold {r} ranking contains duplicates")
        truncated.append(ranking[:n_best])

    exponents: dict[str, list[int]] = {}
    for ranking in truncated:
        for rank, name in enumerate(ranking, start=1):
            exponents.setdefault(name, []).append(n_best - rank)

    names = list(all_names) if all_names is not None else sorted(exponents)
    missing = [n for n in exponents if n not in set(names)]
    if missing:
        raise SelectionError(f"ranked features absent from the universe: {sorted(missing)}")

    scores = []
    for name in names:
        exps = exponents.get(name)
        if not exps:
            scores.append(FeatureScore(name=name, c=0, s=None))
            continue
        top = max(exps)
        # shift by the largest exponent, add smallest first: exact for the
        # magnitudes here and independent of fold order
        acc = 0.0
        for e in sorted(exps):
            acc += 10.0 ** (e - top)
        scores.append(FeatureScore(name=name, c=len(exps), s=top + math.log10(acc)))
    scores.sort(key=lambda fs: (-fs.c, -(fs.s if fs.s is not None else -math.inf), fs.name))
    return scores


# ---------------------------------------------------------------------------
# cohort CSV


def read_cohort_csv(data: bytes) -> Cohort:
    """CSV with a sample_id column, a 0/1 label column, and feature columns.

    Empty cells and the literal ``null`` are missing values.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("cohort CSV must be UTF-8") from exc
    rows = list(csv.reader(std_io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("cohort CSV is empty")
    header = rows[0]
    if "sample_id" not in header or "label" not in header:
        raise ParseError("cohort CSV needs sample_id and label columns")
    id_col = header.index("sample_id")
    label_col = header.index("label")
    feat_cols = [j for j in range(len(header)) if j not in (id_col, label_col)]
    feature_names = tuple(header[j] for j in feat_cols)

    ids: list[str] = []
    labels: list[int] = []
    matrix: list[list[float]] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[id_col])
        if row[label_col] not in ("0", "1"):
            raise ParseError(f"line {line_no}: label must be 0 or 1")
        labels.append(int(row[label_col]))
        vals = []
        for j in feat_cols:
            cell = row[j].strip()
            if cell in ("", "null"):
                vals.append(math.nan)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"line {line_no}: bad number {cell!r}") from None
        matrix.append(vals)
    if not matrix:
        raise ParseError("cohort CSV has no data rows")
    return Cohort(
        X=np.array(matrix, dtype=np.float64),
        y=np.array(labels, dtype=np.int64),
        sample_ids=tuple(ids),
        feature_names=feature_names,
    )


def write_cohort_csv(cohort: Cohort) -> bytes:
    from .io import format_number

    out = std_io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sample_id", "label", *cohort.feature_names])
    for i, sid in enumerate(cohort.sample_ids):
        row = [str(sid), str(int(cohort.y[i]))]
        for v in cohort.X[i]:
            row.append("" if math.isnan(v) else format_number(float(v)))
        writer.writerow(row)
    return out.getvalue().encode("utf-8")
