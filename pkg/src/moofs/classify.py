"""Validate feature subsets: classifiers, confusion-matrix metrics, CV and t-test.

Two classifiers ship with the package, a CART decision tree (``dtree``) and a
5-nearest-neighbour vote on min-max scaled features (``knn5``).  Anything with
``fit(X, y)`` / ``predict(X)`` can be added through :func:`register_classifier`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .dataset import NumericDataset, apply_minmax, binarize_labels, kfold_indices

logger = logging.getLogger(__name__)


def project(ds: NumericDataset, selected: Sequence[int]) -> NumericDataset:
    """Keep only the selected feature columns, in ascending original order."""
    idx = sorted(set(int(i) for i in selected))
    if not idx:
        raise ValueError("empty feature subset")
    if idx[0] < 0 or idx[-1] >= ds.n_features:
        raise IndexError(f"feature index out of range 0..{ds.n_features - 1}")
    return NumericDataset(ds.values[:, idx], ds.labels, ds.schema.restrict(idx),
                          ds.encodings, ds.class_names)


# -- decision tree ----------------------------------------------------------

class DecisionTree:
    """Binary CART tree grown greedily on Gini impurity.

    Candidate thresholds are midpoints between consecutive distinct values;
    a row goes left when ``x <= threshold``.  Growth stops at ``max_depth``,
    at pure nodes, below ``min_samples_split`` samples, or when every row in
    the node is identical.  Leaves predict their majority class (smallest id
    on ties).
    """

    def __init__(self, max_depth: int | None = None, min_samples_split: int = 2):
        self.max_depth = max_depth
        self.min_samples_split = max(int(min_samples_split), 2)

    def fit(self, X, y) -> DecisionTree:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise ValueError("X must be N x M with N matching y and N >= 1")
        self.n_features_ = X.shape[1]
        self.classes_, yc = np.unique(y, return_inverse=True)
        n_cls = len(self.classes_)
        onehot = np.eye(n_cls, dtype=np.int64)[yc]

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0)):
                lst.append(v)
            return len(feature) - 1

        # each node carries, per feature, its sample indices sorted by that feature
        root_orders = [np.argsort(X[:, f], kind="stable") for f in range(self.n_features_)]
        stack = [(new_node(), np.arange(len(y)), root_orders, 0)]
        while stack:
            node, rows, orders, depth = stack.pop()
            counts = onehot[rows].sum(axis=0)
            value[node] = int(np.argmax(counts))
            if (np.count_nonzero(counts) <= 1 or len(rows) < self.min_samples_split
                    or (self.max_depth is not None and depth >= self.max_depth)):
                continue
            split = self._best_split(X, onehot, counts, orders)
            if split is None:
                continue
            f, thr = split
            go_left = np.zeros(len(y), dtype=bool)
            go_left[rows[X[rows, f] <= thr]] = True
            l_orders = [o[go_left[o]] for o in orders]
            r_orders = [o[~go_left[o]] for o in orders]
            feature[node], threshold[node] = f, thr
            left[node], right[node] = new_node(), new_node()
            stack.append((right[node], r_orders[0], r_orders, depth + 1))
            stack.append((left[node], l_orders[0], l_orders, depth + 1))

        self.feature_ = np.array(feature, dtype=np.int64)
        self.threshold_ = np.array(threshold, dtype=np.float64)
        self.left_ = np.array(left, dtype=np.int64)
        self.right_ = np.array(right, dtype=np.int64)
        self.value_ = self.classes_[np.array(value, dtype=np.int64)]
        return self

    @staticmethod
    def _best_split(X, onehot, counts, orders):
        n = int(counts.sum())
        n_left = np.arange(1, n, dtype=np.float64)
        n_right = n - n_left
        best, best_split = np.inf, None
        for f, order in enumerate(orders):
            xs = X[order, f]
            valid = xs[1:] > xs[:-1]
            if not valid.any():
                continue
            lc = np.cumsum(onehot[order], axis=0)[:-1]
            rc = counts - lc
            g_left = n_left - (lc * lc).sum(axis=1) / n_left
            g_right = n_right - (rc * rc).sum(axis=1) / n_right
            score = np.where(valid, g_left + g_right, np.inf)
            i = int(np.argmin(score))
            if score[i] < best:
                thr = (xs[i] + xs[i + 1]) / 2.0
                if not xs[i] <= thr < xs[i + 1]:
                    thr = xs[i]
                best, best_split = score[i], (f, float(thr))
        return best_split

    def _leaf_of(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature_[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            goes_left = X[idx, self.feature_[cur]] <= self.threshold_[cur]
            node[idx] = np.where(goes_left, self.left_[cur], self.right_[cur])
            active = self.feature_[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            return np.empty(0, dtype=self.value_.dtype)
        if X.ndim != 2 or X.shape[1] != self.n_features_:
            raise ValueError(f"expected {self.n_features_} columns, got {X.shape[1]}")
        return self.value_[self._leaf_of(X)]

    @property
    def n_nodes(self) -> int:
        return len(self.feature_)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature_[node] >= 0:
                depth[self.left_[node]] = depth[self.right_[node]] = depth[node] + 1
        return int(depth.max())


def train_tree(train: NumericDataset, max_depth: int | None = None,
               min_samples_split: int = 2) -> DecisionTree:
    return DecisionTree(max_depth, min_samples_split).fit(train.values, train.labels)


def predict_tree(model: DecisionTree, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.size == 0:
        return np.empty(0, dtype=model.value_.dtype)
    if rows.ndim != 2 or rows.shape[1] != model.n_features_:
        raise ValueError(f"rows must have {model.n_features_} columns")
    return model.predict(rows)


# -- nearest neighbours -----------------------------------------------------

def knn_predict(train_values, train_labels, rows, k: int = 5, batch: int = 512) -> np.ndarray:
    """Majority vote of the ``k`` Euclidean-nearest training rows.

    Equal distances favour the lower training index; a tied vote goes to the
    smallest class id.  Inputs are used as given (scale them beforehand).
    """
    train_values = np.asarray(train_values, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.float64)
    n = len(train_labels)
    if n == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    if rows.size == 0:
        return np.empty(0, dtype=np.int64)
    classes, codes = np.unique(train_labels, return_inverse=True)
    out = np.empty(len(rows), dtype=np.int64)
    for start in range(0, len(rows), batch):
        D = cdist(rows[start:start + batch], train_values, metric="sqeuclidean")
        kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        for r in range(len(D)):
            cand = np.flatnonzero(D[r] <= kth[r])
            nearest = cand[np.lexsort((cand, D[r, cand]))[:k]]
            votes = np.bincount(codes[nearest], minlength=len(classes))
            out[start + r] = classes[int(np.argmax(votes))]
    return out


class KNNClassifier:
    """kNN on features min-max scaled with the training range (test values clamped)."""

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y) -> KNNClassifier:
        X = np.asarray(X, dtype=np.float64)
        self.mins_ = X.min(axis=0)
        self.maxs_ = X.max(axis=0)
        self.X_ = apply_minmax(X, self.mins_, self.maxs_)
        self.y_ = np.asarray(y, dtype=np.int64)
        return self

    def predict(self, X) -> np.ndarray:
        X = apply_minmax(np.asarray(X, dtype=np.float64), self.mins_, self.maxs_)
        return knn_predict(self.X_, self.y_, X, min(self.k, len(self.y_)))


CLASSIFIERS: dict[str, Callable[[], object]] = {
    "dtree": DecisionTree,
    "knn5": lambda: KNNClassifier(5),
}


def register_classifier(token: str, factory: Callable[[], object]) -> None:
    """Add a classifier factory; instances need ``fit(X, y)`` and ``predict(X)``."""
    CLASSIFIERS[token] = factory


def make_classifier(token: str):
    try:
        return CLASSIFIERS[token]()
    except KeyError:
        raise ValueError(f"unknown classifier {token!r}; choose from {', '.join(CLASSIFIERS)}") from None


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes, both in ``classes`` order."""

    counts: np.ndarray
    classes: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def one_vs_rest(self, i: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) treating class position ``i`` as positive."""
        c = self.counts
        tp = int(c[i, i])
        fn = int(c[i].sum()) - tp
        fp = int(c[:, i].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if self.classes != other.classes:
            raise ValueError("class sets differ")
        return ConfusionMatrix(self.counts + other.counts, self.classes)

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def confusion(actual, predicted, classes: Sequence[int] | None = None) -> ConfusionMatrix:
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise ValueError("actual and predicted differ in length")
    if classes is None:
        classes = np.union1d(actual, predicted)
    classes = tuple(int(c) for c in classes)
    pos = {c: i for i, c in enumerate(classes)}
    stray = set(np.unique(actual).tolist()) | set(np.unique(predicted).tolist())
    stray -= pos.keys()
    if stray:
        raise ValueError(f"labels outside the class set: {sorted(stray)}")
    a = np.array([pos[v] for v in actual.tolist()], dtype=np.int64)
    p = np.array([pos[v] for v in predicted.tolist()], dtype=np.int64)
    k = len(classes)
    counts = np.bincount(a * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, classes)


METRIC_FIELDS = ("accuracy", "detection_rate", "precision", "false_alarm_rate", "f_measure")
METRIC_TITLES = ("Accuracy", "Detection rate", "Precision", "False alarm rate", "F-measure")


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    detection_rate: float
    precision: float
    false_alarm_rate: float
    f_measure: float
    support: int = 0
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in METRIC_FIELDS}
        d["support"] = self.support
        if self.flags:
            d["flags"] = list(self.flags)
        return d


def _ratio(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def class_metrics(tp: int, fp: int, fn: int, tn: int) -> ClassMetrics:
    flags: list[str] = []
    dr = _ratio(tp, tp + fn, "no_positives", flags)
    prec = _ratio(tp, tp + fp, "no_positive_predictions", flags)
    far = _ratio(fp, fp + tn, "no_negatives", flags)
    acc = _ratio(tp + tn, tp + fp + fn + tn, "empty", flags)
    f1 = _ratio(2 * prec * dr, prec + dr, "f_measure_undefined", flags)
    return ClassMetrics(acc, dr, prec, far, f1, tp + fn, tuple(flags))


def weighted_average(values, supports) -> float:
    """Support-weighted mean: sum(N_i * v_i) / sum(N_i)."""
    values = np.asarray(values, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    total = supports.sum()
    if total <= 0:
        raise ValueError("supports must sum to a positive number")
    return float((values * supports).sum() / total)


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[int, ClassMetrics]
    weighted: ClassMetrics
    overall_accuracy: float
    confusion: ConfusionMatrix
    class_names: Mapping[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class": {str(c): m.to_dict() for c, m in self.per_class.items()},
            "weighted": self.weighted.to_dict(),
            "confusion": self.confusion.to_dict(),
            "class_names": {str(k): v for k, v in sorted(self.class_names.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricsReport:
        def cm(m):
            return ClassMetrics(*(m[f] for f in METRIC_FIELDS), m.get("support", 0),
                                tuple(m.get("flags", ())))
        conf = ConfusionMatrix(np.array(d["confusion"]["counts"], dtype=np.int64),
                               tuple(d["confusion"]["classes"]))
        return cls({int(k): cm(v) for k, v in d["per_class"].items()}, cm(d["weighted"]),
                   d["overall_accuracy"], conf,
                   {int(k): v for k, v in d.get("class_names", {}).items()})

    def table(self, title: str = "") -> str:
        """Aligned text table of percentages, one row per class plus the weighted row."""
        head = ["Class", *METRIC_TITLES, "Support"]
        rows = []
        for c, m in self.per_class.items():
            rows.append([self.class_names.get(c, str(c))]
                        + [f"{100 * getattr(m, f):.2f}" for f in METRIC_FIELDS] + [str(m.support)])
        w = self.weighted
        rows.append(["Weighted average"] + [f"{100 * getattr(w, f):.2f}" for f in METRIC_FIELDS]
                    + [str(w.support)])
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(s.ljust(widths[0]) if i == 0 else s.rjust(widths[i])
                                  for i, s in enumerate(r))
        lines = ([title] if title else []) + [fmt(head), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"

    def confusion_table(self) -> str:
        names = [self.class_names.get(c, str(c)) for c in self.confusion.classes]
        head = ["Actual \\ Predicted", *names]
        rows = [[n, *(str(v) for v in row)] for n, row in zip(names, self.confusion.counts.tolist())]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        return "\n".join("  ".join(s.ljust(widths[0]) if i == 0 else s.rjust(widths[i])
                                   for i, s in enumerate(r)) for r in [head] + rows) + "\n"


def metrics(cm: ConfusionMatrix, supports=None, class_names: Mapping[int, str] | None = None
            ) -> MetricsReport:
    """One-vs-rest metrics per class and their support-weighted averages."""
    if cm.total <= 0:
        raise ValueError("empty confusion matrix")
    supports = cm.supports if supports is None else np.asarray(supports)
    per_class = {}
    for i, c in enumerate(cm.classes):
        per_class[c] = class_metrics(*cm.one_vs_rest(i))
    rows = list(per_class.values())
    weighted = ClassMetrics(
        *(weighted_average([getattr(m, f) for m in rows], supports) for f in METRIC_FIELDS),
        support=int(np.sum(supports)),
    )
    overall = float(np.trace(cm.counts) / cm.total)
    return MetricsReport(per_class, weighted, overall, cm, dict(class_names or {}))


# -- cross-validation and significance ----------------------------------------

@dataclass
class CVResult:
    folds: list[MetricsReport]
    pooled: MetricsReport
    single_class_folds: list[int] = field(default_factory=list)

    @property
    def fold_accuracies(self) -> list[float]:
        return [r.overall_accuracy for r in self.folds]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def min_accuracy(self) -> float:
        return float(np.min(self.fold_accuracies))

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": self.fold_accuracies,
            "mean_accuracy": self.mean_accuracy,
            "min_accuracy": self.min_accuracy,
            "single_class_folds": self.single_class_folds,
            "pooled": self.pooled.to_dict(),
        }


def fit_predict(classifier: str, train_X, train_y, test_X) -> np.ndarray:
    model = make_classifier(classifier)
    model.fit(train_X, train_y)
    return np.asarray(model.predict(test_X), dtype=np.int64)


def cross_validate(ds: NumericDataset, selected: Sequence[int] | None = None,
                   classifier: str = "dtree", k: int = 10, seed: int = 0) -> CVResult:
    """Stratified k-fold evaluation of one feature subset.

    Every fold gets its own report; ``pooled`` is computed from the sum of
    the fold confusion matrices.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    data = ds if selected is None else project(ds, selected)
    classes = tuple(int(c) for c in np.unique(data.labels))
    reports, odd = [], []
    total = None
    for f, (tr, va) in enumerate(kfold_indices(data.labels, k, seed)):
        if len(np.unique(data.labels[tr])) < 2:
            odd.append(f)
            logger.warning("fold %d trains on a single class", f)
        pred = fit_predict(classifier, data.values[tr], data.labels[tr], data.values[va])
        cm = confusion(data.labels[va], pred, classes)
        reports.append(metrics(cm, class_names=data.class_names))
        total = cm if total is None else total + cm
    return CVResult(reports, metrics(total, class_names=data.class_names), odd)


def holdout_evaluate(train: NumericDataset, test: NumericDataset, selected: Sequence[int],
                     classifier: str = "dtree") -> MetricsReport:
    tr, te = project(train, selected), project(test, selected)
    pred = fit_predict(classifier, tr.values, tr.labels, te.values)
    classes = np.union1d(np.union1d(tr.labels, te.labels), pred)
    return metrics(confusion(te.labels, pred, classes), class_names=train.class_names)


def one_vs_rest(ds: NumericDataset, selected: Sequence[int], classifier: str = "dtree",
                k: int = 10, seed: int = 0) -> dict[int, ClassMetrics]:
    """Binary CV per class: metrics of the positive side of each binarized problem."""
    out = {}
    for c in np.unique(ds.labels).tolist():
        res = cross_validate(binarize_labels(ds, c), selected, classifier, k, seed)
        out[c] = res.pooled.per_class.get(1, class_metrics(0, 0, 0, 0))
    return out


class TTestResult(NamedTuple):
    t_value: float
    p_value: float
    df: float
    significant: bool


def t_test(sample_a, sample_b, alpha: float = 0.05) -> TTestResult:
    """Welch two-sample t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        raise ValueError("both samples have zero variance")
    t = float((a.mean() - b.mean()) / np.sqrt(se2))
    df = float(se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1)))
    p = float(2 * stats.t.sf(abs(t), df))
    return TTestResult(t, p, df, p < alpha)
