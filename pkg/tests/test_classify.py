import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moofs.classify import (
    CLASSIFIERS,
    ConfusionMatrix,
    DecisionTree,
    MetricsReport,
    class_metrics,
    confusion,
    cross_validate,
    holdout_evaluate,
    knn_predict,
    make_classifier,
    metrics,
    one_vs_rest,
    predict_tree,
    project,
    register_classifier,
    t_test,
    weighted_average,
)
from moofs.dataset import ColumnSpec, FeatureSchema, NumericDataset, load_schema

TABLE5_SUBSET = [0, 1, 2, 3, 4, 5, 6, 7, 9, 12, 14, 15, 16, 21, 22, 23, 28, 29, 36, 37, 39]


def make_ds(X, y):
    X = np.asarray(X, dtype=float)
    cols = tuple(ColumnSpec(f"x{i}", "continuous") for i in range(X.shape[1]))
    schema = FeatureSchema("t", cols + (ColumnSpec("y", "label"),), {"a": 1, "b": 2, "c": 3})
    return NumericDataset(X, y, schema)


def separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([1, 2, 3], n // 3)
    X = np.column_stack([y * 10 + rng.uniform(-1, 1, len(y)), rng.normal(size=len(y))])
    return make_ds(X, y)


# -- projection ----------------------------------------------------------------

def test_project_examples():
    rng = np.random.default_rng(0)
    kdd = load_schema("kdd99")
    ds = NumericDataset(rng.normal(size=(5, 41)), np.ones(5, int), kdd)
    sub = project(ds, TABLE5_SUBSET)
    assert sub.n_features == 21
    assert sub.feature_names[:2] == ["duration", "protocol_type"]
    assert np.array_equal(project(ds, range(41)).values, ds.values)
    assert project(ds, [0]).n_features == 1
    with pytest.raises(IndexError):
        project(ds, [41])


# -- tree ----------------------------------------------------------------------

def test_tree_one_split():
    t = DecisionTree().fit([[1], [2], [8], [9]], [0, 0, 1, 1])
    assert t.n_nodes == 3
    assert 2 < t.threshold_[0] < 8
    assert t.predict([[1], [2], [8], [9]]).tolist() == [0, 0, 1, 1]


def test_tree_single_class_is_leaf():
    t = DecisionTree().fit([[1], [5]], [3, 3])
    assert t.n_nodes == 1 and t.predict([[100]]).tolist() == [3]


def test_tree_xor():
    X, y = [[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 1, 0]
    assert DecisionTree().fit(X, y).predict(X).tolist() == y
    shallow = DecisionTree(max_depth=1).fit(X, y).predict(X)
    assert (shallow == y).mean() <= 0.75


def test_tree_threshold_goes_left():
    t = DecisionTree().fit([[0.0], [2.0]], [1, 2])
    thr = t.threshold_[0]
    assert t.predict([[thr]]).tolist() == [1]


def test_tree_empty_rows():
    t = DecisionTree().fit([[0.0], [2.0]], [1, 2])
    assert predict_tree(t, np.empty((0, 1))).size == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_tree_fits_distinct_rows(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(40, 3)).astype(float)
    X = np.unique(X, axis=0)
    y = rng.integers(1, 4, len(X))
    assert np.array_equal(DecisionTree().fit(X, y).predict(X), y)


# -- kNN -----------------------------------------------------------------------

def test_knn_examples():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [10.0]])
    y = np.array([1, 2, 2, 1, 2, 1])
    assert knn_predict(X, y, [[2.0]], k=1).tolist() == [2]
    assert knn_predict(X, y, [[0.0], [10.0]], k=6).tolist() == [1, 1]  # 3-3 tie -> smaller id
    # nearest five to 1.6: 2.0, 1.0, 3.0, 0.0, 4.0 -> votes {2: 3, 1: 2}
    assert knn_predict(X, y, [[1.6]], k=5).tolist() == [2]


def test_knn_distance_tie_prefers_lower_index():
    X = np.array([[0.0], [2.0]])
    assert knn_predict(X, np.array([5, 3]), [[1.0]], k=1).tolist() == [5]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_knn_k1_reproduces_training(seed):
    rng = np.random.default_rng(seed)
    X = np.unique(rng.normal(size=(50, 3)), axis=0)
    y = rng.integers(1, 4, len(X))
    assert np.array_equal(knn_predict(X, y, X, k=1), y)


def test_classifier_registry():
    assert set(CLASSIFIERS) >= {"dtree", "knn5"}
    with pytest.raises(ValueError):
        make_classifier("svm")
    register_classifier("tree2", lambda: DecisionTree(max_depth=2))
    try:
        res = cross_validate(separable(), None, "tree2", 3, 0)
        assert res.mean_accuracy == 1.0
    finally:
        del CLASSIFIERS["tree2"]


# -- confusion and metrics -----------------------------------------------------

def test_confusion_examples():
    cm = confusion([1, 2, 3], [1, 2, 3])
    assert np.array_equal(cm.counts, np.eye(3, dtype=int))
    cm = confusion([1, 1, 2], [1, 2, 2])
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    with pytest.raises(ValueError):
        confusion([1, 2], [1, 3], classes=[1, 2])


def test_probe_detection_rate_from_figure_row():
    counts = np.array([[100, 0, 0, 0, 0],
                       [0, 100, 0, 0, 0],
                       [4, 4, 2369, 0, 0],
                       [0, 0, 0, 10, 0],
                       [0, 0, 0, 0, 10]])
    rep = metrics(ConfusionMatrix(counts, (1, 2, 3, 4, 5)))
    assert rep.per_class[3].detection_rate == pytest.approx(2369 / 2377)
    assert round(100 * rep.per_class[3].detection_rate, 2) == 99.66


def test_class_metric_examples():
    m = class_metrics(tp=90, fp=0, fn=10, tn=100)
    assert m.detection_rate == pytest.approx(0.90)
    m = class_metrics(tp=0, fp=0, fn=5, tn=5)
    assert m.precision == 0.0 and "no_positive_predictions" in m.flags
    m = class_metrics(tp=30, fp=10, fn=10, tn=50)  # precision = recall = 0.75
    assert m.f_measure == pytest.approx(0.75)


def test_weighted_accuracy_table_values():
    acc = [99.32, 99.91, 99.87, 99.98, 99.43]
    supports = [60593, 222200, 2377, 39, 5993]
    assert weighted_average(acc, supports) == pytest.approx(99.78, abs=0.01)


random_cms = st.integers(2, 5).flatmap(
    lambda k: st.lists(st.integers(0, 50), min_size=k * k, max_size=k * k).map(
        lambda v: np.array(v).reshape(k, k))).filter(lambda c: c.sum() > 0)


@settings(max_examples=200, deadline=None)
@given(random_cms)
def test_metric_identities(counts):
    k = len(counts)
    cm = ConfusionMatrix(counts, tuple(range(1, k + 1)))
    rep = metrics(cm)
    n = counts.sum()
    for i in range(k):
        tp, fp, fn, tn = cm.one_vs_rest(i)
        assert tp + fn == counts[i].sum()
        assert fp + tn == n - counts[i].sum()
        row_err = counts[i].sum() - counts[i, i]
        col_err = counts[:, i].sum() - counts[i, i]
        assert rep.per_class[i + 1].accuracy == pytest.approx((n - row_err - col_err) / n, abs=0)


@settings(max_examples=100, deadline=None)
@given(random_cms, st.randoms(use_true_random=False))
def test_metrics_relabel_invariant(counts, rnd):
    k = len(counts)
    ids = list(range(1, k + 1))
    perm = ids[:]
    rnd.shuffle(perm)
    a = metrics(ConfusionMatrix(counts, tuple(ids)))
    order = np.argsort(perm)
    b = metrics(ConfusionMatrix(counts[np.ix_(order, order)], tuple(sorted(perm))))
    for old, new in zip(ids, perm):
        assert a.per_class[old] == b.per_class[new]
    for f in ("accuracy", "detection_rate", "precision", "false_alarm_rate", "f_measure"):
        assert getattr(a.weighted, f) == pytest.approx(getattr(b.weighted, f), abs=1e-12)


def test_equal_supports_weighted_is_mean():
    counts = np.array([[8, 2, 0], [1, 7, 2], [0, 3, 7]])
    rep = metrics(ConfusionMatrix(counts, (1, 2, 3)))
    mean = np.mean([m.accuracy for m in rep.per_class.values()])
    assert rep.weighted.accuracy == pytest.approx(mean, abs=1e-15)


def test_report_roundtrip_and_table():
    rep = metrics(confusion([1, 1, 2, 3], [1, 2, 2, 3]), class_names={1: "normal", 2: "dos"})
    again = MetricsReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()
    text = rep.table("title")
    assert "Weighted average" in text and "False alarm rate" in text and "normal" in text
    assert "Actual" in rep.confusion_table()


# -- CV and t-test ---------------------------------------------------------------

def test_cv_separable_and_deterministic():
    ds = separable()
    for clf in ("dtree", "knn5"):
        res = cross_validate(ds, [0], clf, 10, seed=3)
        assert res.fold_accuracies == [1.0] * 10
        again = cross_validate(ds, [0], clf, 10, seed=3)
        assert res.to_dict() == again.to_dict()


def test_cv_min_not_above_mean():
    rng = np.random.default_rng(0)
    ds = make_ds(rng.normal(size=(80, 2)), rng.integers(1, 3, 80))
    res = cross_validate(ds, None, "dtree", 5, 0)
    assert res.min_accuracy <= res.mean_accuracy
    assert res.pooled.confusion.total == 80


def test_holdout_and_binary():
    train, test = separable(seed=1), separable(seed=2)
    rep = holdout_evaluate(train, test, [0], "knn5")
    assert rep.overall_accuracy == 1.0
    per_class = one_vs_rest(train, [0], "dtree", 5, 0)
    assert sorted(per_class) == [1, 2, 3]
    assert all(m.detection_rate == 1.0 for m in per_class.values())


def test_t_test_examples():
    r = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.t_value == 0.0 and not r.significant
    rng = np.random.default_rng(0)
    r = t_test(1 + rng.normal(0, 1e-3, 4), rng.normal(0, 1e-3, 4))
    assert abs(r.t_value) > 100 and r.significant
    assert t_test([2, 4], [4, 2]).t_value == 0.0
    with pytest.raises(ValueError):
        t_test([1, 1], [1, 1])
