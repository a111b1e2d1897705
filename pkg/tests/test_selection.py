"""Feature selection: rankers, folds, the CV sweep, and rank aggregation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histomap.errors import MetricError, ParseError, SelectionError, StratificationError
from histomap.selection import (
    Cohort,
    FeatureScore,
    aggregate_scores,
    balanced_accuracy,
    cv_sweep,
    impute_median,
    mann_whitney_u,
    mannwhitney_rank,
    mrmr_rank,
    read_cohort_csv,
    roc_auc,
    stratified_folds,
    write_cohort_csv,
)


def _mw_u_bruteforce(a, b):
    """U of sample a by direct pair counting: wins + half the ties."""
    u = 0.0
    for x in a:
        for v in b:
            if x > v:
                u += 1.0
            elif x == v:
                u += 0.5
    return u


class TestMannWhitneyU:
    def test_hand_example_fully_separated(self):
        u1, u2, u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
        assert (u1, u2, u) == (0.0, 9.0, 0.0)
        assert 0.0 < p < 1.0

    def test_all_tied_gives_p_one(self):
        u1, u2, u, p = mann_whitney_u([1.0, 1.0], [1.0, 1.0])
        assert p == 1.0
        assert u1 == u2 == u == 2.0

    def test_swap_symmetry(self):
        a = [0.3, 1.2, 5.0, 5.0]
        b = [0.9, 2.0, 2.0]
        u1, u2, u, p = mann_whitney_u(a, b)
        v1, v2, v, q = mann_whitney_u(b, a)
        assert (u1, u2) == (v2, v1)
        assert u == v
        assert p == q

    def test_empty_sample_rejected(self):
        with pytest.raises(SelectionError):
            mann_whitney_u([], [1.0])

    @given(
        a=st.lists(st.integers(-3, 3), min_size=1, max_size=8),
        b=st.lists(st.integers(-3, 3), min_size=1, max_size=8),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_pair_counting_oracle(self, a, b):
        # small integer grids force plenty of ties
        u1, u2, u, p = mann_whitney_u(a, b)
        assert u1 == _mw_u_bruteforce(a, b)
        assert u2 == _mw_u_bruteforce(b, a)
        assert u1 + u2 == len(a) * len(b)
        assert u == min(u1, u2)
        assert 0.0 <= p <= 1.0


class TestMannWhitneyRank:
    def test_orders_by_p_then_column(self, planted_cohort):
        scores = mannwhitney_rank(planted_cohort.X, planted_cohort.y)
        # the two signals and the duplicate share the same tiny p and fall
        # back to column order; the constants trail at p = 1
        assert [s.index for s in scores] == [0, 1, 2, 3, 4]
        assert scores[0].p == scores[2].p < scores[3].p == 1.0

    def test_rejects_nan(self):
        X = np.array([[1.0, np.nan], [0.0, 2.0]])
        with pytest.raises(SelectionError):
            mannwhitney_rank(X, np.array([0, 1]))

    def test_rejects_single_class(self):
        X = np.zeros((4, 2))
        with pytest.raises(SelectionError):
            mannwhitney_rank(X, np.array([1, 1, 1, 1]))


class TestMrmrRank:
    def test_planted_signals_come_first(self, planted_cohort):
        # sig_a ties its affine duplicate on relevance but wins on index;
        # the duplicate's unit correlation then defers it behind sig_b
        assert mrmr_rank(planted_cohort.X, planted_cohort.y) == [0, 1, 2, 3, 4]

    def test_prefix_stability(self, planted_cohort):
        full = mrmr_rank(planted_cohort.X, planted_cohort.y)
        for k in range(1, len(full) + 1):
            assert mrmr_rank(planted_cohort.X, planted_cohort.y, n=k) == full[:k]

    def test_all_constant_rejected(self):
        X = np.ones((6, 3))
        y = np.array([0, 1, 0, 1, 0, 1])
        with pytest.raises(SelectionError):
            mrmr_rank(X, y)

    def test_n_out_of_range(self, planted_cohort):
        with pytest.raises(SelectionError):
            mrmr_rank(planted_cohort.X, planted_cohort.y, n=0)
        with pytest.raises(SelectionError):
            mrmr_rank(planted_cohort.X, planted_cohort.y, n=6)

    def test_rejects_nan(self):
        X = np.array([[np.nan, 1.0], [0.0, 2.0], [1.0, 0.0], [0.5, 3.0]])
        with pytest.raises(SelectionError):
            mrmr_rank(X, np.array([0, 1, 0, 1]))


class TestAccuracyMetrics:
    def test_balanced_accuracy_hand_example(self):
        # class 0 recall 1/2, class 1 recall 1 -> 0.75
        assert balanced_accuracy([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75

    def test_balanced_accuracy_extremes(self):
        assert balanced_accuracy([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0
        assert balanced_accuracy([0, 1, 0, 1], [1, 0, 1, 0]) == 0.0

    def test_balanced_accuracy_shape_mismatch(self):
        with pytest.raises(MetricError):
            balanced_accuracy([0, 1], [0, 1, 1])

    def test_roc_auc_hand_example(self):
        assert roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75

    def test_roc_auc_is_normalized_u(self):
        rng = np.random.default_rng(9)
        y = np.array([1] * 6 + [0] * 9)
        scores = rng.integers(0, 5, size=15).astype(float)  # force ties
        u1, _, _, _ = mann_whitney_u(scores[y == 1], scores[y == 0])
        assert roc_auc(y, scores) == u1 / (6 * 9)

    def test_roc_auc_inversion(self):
        y = [0, 1, 0, 1, 1]
        s = [0.2, 0.9, 0.1, 0.7, 0.4]
        assert math.isclose(roc_auc(y, s) + roc_auc(y, [-v for v in s]), 1.0, rel_tol=1e-12)

    def test_roc_auc_all_tied_is_half(self):
        assert roc_auc([0, 1, 0, 1], [3.0, 3.0, 3.0, 3.0]) == 0.5

    def test_roc_auc_single_class_rejected(self):
        with pytest.raises(MetricError):
            roc_auc([1, 1, 1], [0.1, 0.2, 0.3])


class TestImputeMedian:
    def test_fills_with_column_median(self):
        X = np.array([[1.0, np.nan], [3.0, 4.0], [np.nan, 8.0]])
        out = impute_median(X)
        assert out[2, 0] == 2.0  # median of 1, 3
        assert out[0, 1] == 6.0  # median of 4, 8

    def test_reference_medians_win(self):
        train = np.array([[10.0], [20.0], [30.0]])
        val = np.array([[np.nan]])
        assert impute_median(val, reference=train)[0, 0] == 20.0

    def test_all_nan_column_becomes_zero(self):
        X = np.array([[np.nan], [np.nan]])
        assert (impute_median(X) == 0.0).all()

    def test_input_not_mutated(self):
        X = np.array([[np.nan, 1.0]])
        impute_median(X)
        assert np.isnan(X[0, 0])


class TestStratifiedFolds:
    def test_partition_and_balance(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 30)
        ids = [f"s{i:02d}" for i in range(30)]
        folds = stratified_folds(y, 3, seed=5, sample_ids=ids)
        flat = np.concatenate(folds)
        assert sorted(flat.tolist()) == list(range(30))
        for cls in (0, 1):
            counts = [int((y[f] == cls).sum()) for f in folds]
            assert max(counts) - min(counts) <= 1

    def test_row_permutation_invariance(self):
        # fold membership is a function of (ids, labels, seed), not row order
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 30)
        ids = [f"s{i:02d}" for i in range(30)]
        base = stratified_folds(y, 3, seed=5, sample_ids=ids)
        base_sets = sorted(frozenset(ids[i] for i in f) for f in base)
        perm = rng.permutation(30)
        shuffled = stratified_folds(y[perm], 3, seed=5, sample_ids=[ids[i] for i in perm])
        shuffled_sets = sorted(frozenset(ids[perm[i]] for i in f) for f in shuffled)
        assert base_sets == shuffled_sets

    def test_deterministic_per_seed(self):
        y = np.array([0, 1] * 10)
        a = stratified_folds(y, 4, seed=7)
        b = stratified_folds(y, 4, seed=7)
        assert all((x == z).all() for x, z in zip(a, b))

    def test_validation(self):
        y = np.array([0, 1, 0, 1])
        with pytest.raises(StratificationError):
            stratified_folds(y, 1, seed=0)
        with pytest.raises(StratificationError):
            stratified_folds(y, 5, seed=0)


class TestCvSweep:
    def test_planted_cohort_best_is_two(self, planted_cohort):
        result = cv_sweep(planted_cohort, folds=3, method="mrmr", seed=0)
        assert result.n_best == 2
        assert result.mean_curve[0] < 1.0
        assert all(v == 1.0 for v in result.mean_curve[1:])
        assert all(v == 1.0 for v in result.ba_at_best)
        assert all(v == 1.0 for v in result.auc_at_best)

    def test_fold_details_shape(self, planted_cohort):
        result = cv_sweep(planted_cohort, folds=3, seed=0)
        assert len(result.fold_selections) == 3
        for k, sel in enumerate(result.fold_selections):
            assert sel.fold == k
            assert sorted(sel.ranking) == sorted(planted_cohort.feature_names)
            assert len(sel.accuracy_per_n) == 5

    def test_deterministic(self, planted_cohort):
        a = cv_sweep(planted_cohort, folds=3, seed=42)
        b = cv_sweep(planted_cohort, folds=3, seed=42)
        assert a == b

    def test_mannwhitney_method_runs(self, planted_cohort):
        result = cv_sweep(planted_cohort, folds=3, method="mannwhitney", seed=0)
        # tied p-values may admit the duplicate early, so only argmax
        # semantics are promised: n_best marks the first maximum
        assert result.mean_curve[result.n_best - 1] == max(result.mean_curve)
        assert all(v < max(result.mean_curve) for v in result.mean_curve[: result.n_best - 1])
        assert result.mean_curve[-1] == 1.0

    def test_smallest_tied_count_wins(self, planted_cohort):
        result = cv_sweep(planted_cohort, folds=3, seed=0)
        peak = max(result.mean_curve)
        first = next(i for i, v in enumerate(result.mean_curve) if v == peak)
        assert result.n_best == first + 1

    def test_unknown_method_rejected(self, planted_cohort):
        with pytest.raises(SelectionError):
            cv_sweep(planted_cohort, folds=3, method="anova")

    def test_too_few_folds_rejected(self, planted_cohort):
        with pytest.raises(StratificationError):
            cv_sweep(planted_cohort, folds=1)


class TestAggregateScores:
    def test_unanimous_rank_one(self):
        # picked first by all 3 folds at n_best 19: c = 3, s = log10(3e18)
        rankings = [
            ["f"] + [f"a{i}" for i in range(18)],
            ["f"] + [f"b{i}" for i in range(18)],
            ["f"] + [f"c{i}" for i in range(18)],
        ]
        top = aggregate_scores(rankings, 19)[0]
        assert top.name == "f"
        assert top.c == 3
        assert top.s == 18.477121254719663

    def test_occurrence_beats_score(self):
        # one first-place pick loses to two second-place picks
        rankings = [["solo", "steady"], ["zfill", "steady"]]
        scores = aggregate_scores(rankings, 2)
        assert [s.name for s in scores][:2] == ["steady", "solo"]
        by_name = {s.name: s for s in scores}
        assert by_name["steady"].c == 2
        assert by_name["solo"].c == 1
        assert by_name["solo"].s > by_name["steady"].s

    def test_fold_order_invariance(self):
        rankings = [["a", "b", "c"], ["b", "c", "a"], ["c", "a", "b"]]
        fwd = aggregate_scores(rankings, 3)
        rev = aggregate_scores(rankings[::-1], 3)
        assert fwd == rev

    def test_unpicked_features_sort_last_with_null_score(self):
        scores = aggregate_scores([["a", "b"]], 2, all_names=["a", "b", "z", "q"])
        assert [s.name for s in scores] == ["a", "b", "q", "z"]
        assert scores[-1] == FeatureScore(name="z", c=0, s=None)
        assert scores[-2].s is None

    def test_name_breaks_full_ties(self):
        scores = aggregate_scores([["b"], ["a"]], 1)
        assert [s.name for s in scores] == ["a", "b"]
        assert scores[0].c == scores[1].c == 1
        assert scores[0].s == scores[1].s

    def test_validation(self):
        with pytest.raises(SelectionError):
            aggregate_scores([["a"]], 0)
        with pytest.raises(SelectionError):
            aggregate_scores([["a"]], 2)  # ranking shorter than n_best
        with pytest.raises(SelectionError):
            aggregate_scores([["a", "a"]], 2)  # duplicate within a fold
        with pytest.raises(SelectionError):
            aggregate_scores([["a"]], 1, all_names=["b"])  # outside universe


class TestCohortCsv:
    def _cohort(self):
        X = np.array([[1.5, np.nan], [0.0, -2.25], [3.0, 0.1]])
        return Cohort(
            X=X,
            y=np.array([1, 0, 1]),
            sample_ids=("p1", "p2", "p3"),
            feature_names=("f_one", "f_two"),
        )

    def test_round_trip(self):
        cohort = self._cohort()
        data = write_cohort_csv(cohort)
        back = read_cohort_csv(data)
        assert back.sample_ids == cohort.sample_ids
        assert back.feature_names == cohort.feature_names
        assert (back.y == cohort.y).all()
        assert np.array_equal(back.X, cohort.X, equal_nan=True)
        assert write_cohort_csv(back) == data

    def test_null_literal_is_missing(self):
        data = b"sample_id,label,f\np1,0,null\np2,1,2.5\n"
        cohort = read_cohort_csv(data)
        assert math.isnan(cohort.X[0, 0])
        assert cohort.X[1, 0] == 2.5

    def test_column_order_free(self):
        data = b"f,label,sample_id\n7,1,p1\n8,0,p2\n"
        cohort = read_cohort_csv(data)
        assert cohort.sample_ids == ("p1", "p2")
        assert cohort.X[0, 0] == 7.0

    @pytest.mark.parametrize(
        "data",
        [
            b"",
            b"sample_id,f\np1,1\n",  # no label column
            b"sample_id,label,f\np1,2,1\n",  # label not 0/1
            b"sample_id,label,f\np1,1,abc\n",  # bad number
            b"sample_id,label,f\np1,1\n",  # ragged row
            b"sample_id,label,f\n",  # header only
            b"\xff\xfe",  # not UTF-8
        ],
    )
    def test_malformed_rejected(self, data):
        with pytest.raises(ParseError):
            read_cohort_csv(data)

    def test_cohort_validation(self):
        with pytest.raises(SelectionError):
            Cohort(
                X=np.zeros((2, 2)),
                y=np.array([0, 2]),
                sample_ids=("a", "b"),
                feature_names=("f", "g"),
            )
        with pytest.raises(SelectionError):
            Cohort(
                X=np.zeros((2, 2)),
                y=np.array([0, 1]),
                sample_ids=("a", "b"),
                feature_names=("f", "f"),
            )
