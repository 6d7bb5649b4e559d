"""Binary gradient-boosted decision trees with logistic loss and exact greedy splits."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import TrainError

MODEL_FORMAT = "gaitstream-gbdt"
MODEL_VERSION = 1


@numba.njit(cache=True)
def _grow_tree(xt, order, g, h, in_fit, max_depth, min_leaf, lam):
    """Grow one tree level by level with exact greedy splits.

    ``xt`` is the feature-major data (``xt[f, r]``) and ``order[f]`` the rows
    sorted by feature ``f``. Each node's rows occupy the same contiguous slice
    of every feature's order, maintained by stable partitioning after each
    split. Ties prefer the lowest feature index, then the lowest threshold.

    Returns (feature, threshold, left, right, gain, leaf_sum_g, leaf_sum_h,
    leaf_of_row, n_nodes); ``leaf_of_row`` is -1 for rows outside ``in_fit``.
    """
    n_feat, n_all = xt.shape
    gh = np.empty((n_all, 2))
    gh[:, 0] = g
    gh[:, 1] = h
    m = 0
    for r in range(n_all):
        if in_fit[r]:
            m += 1
    if m == n_all:
        od = order.copy()
    else:
        od = np.empty((n_feat, m), np.int32)
        for f in range(n_feat):
            k2 = 0
            for k in range(n_all):
                r = order[f, k]
                if in_fit[r]:
                    od[f, k2] = r
                    k2 += 1

    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    gain = np.zeros(max_nodes)
    start = np.zeros(max_nodes, np.int64)
    stop = np.zeros(max_nodes, np.int64)
    stop[0] = m
    n_nodes = 1
    frontier = np.zeros(max_nodes, np.int64)
    n_front = 1
    goes_left = np.zeros(n_all, np.bool_)
    buf = np.empty(m, np.int32)

    for depth in range(max_depth):
        new_front = np.zeros(max_nodes, np.int64)
        n_new = 0
        for q in range(n_front):
            j = frontier[q]
            s = start[j]
            e = stop[j]
            if e - s < 2 * min_leaf:
                continue
            gt = 0.0
            ht = 0.0
            for k in range(s, e):
                r = od[0, k]
                gt += gh[r, 0]
                ht += gh[r, 1]
            parent = gt * gt / (ht + lam)
            best = 0.0
            bf = -1
            bt = 0.0
            for f in range(n_feat):
                col = xt[f]
                gl = 0.0
                hl = 0.0
                r = od[f, s]
                v0 = col[r]
                for k in range(s, e - min_leaf):
                    gl += gh[r, 0]
                    hl += gh[r, 1]
                    r = od[f, k + 1]
                    v1 = col[r]
                    if k - s + 1 >= min_leaf and v1 != v0:
                        gr = gt - gl
                        cand = 0.5 * (gl * gl / (hl + lam) + gr * gr / (ht - hl + lam) - parent)
                        if cand > best:
                            best = cand
                            bf = f
                            thr = v0 + 0.5 * (v1 - v0)
                            if thr >= v1:
                                thr = v0
                            bt = thr
                    v0 = v1
            if bf < 0:
                continue
            li = n_nodes
            ri = n_nodes + 1
            n_nodes += 2
            feature[j] = bf
            threshold[j] = bt
            left[j] = li
            right[j] = ri
            gain[j] = best
            n_left = 0
            col = xt[bf]
            for k in range(s, e):
                r = od[bf, k]
                go = col[r] <= bt
                goes_left[r] = go
                if go:
                    n_left += 1
            # children below the last level are leaves: feature 0's order
            # alone is enough to collect their rows
            n_part = n_feat if depth < max_depth - 1 else 1
            for f in range(n_part):
                a = s
                b = 0
                for k in range(s, e):
                    r = od[f, k]
                    go = goes_left[r]
                    od[f, a] = r
                    buf[b] = r
                    a += go
                    b += 1 - go
                for k in range(b):
                    od[f, a + k] = buf[k]
            start[li] = s
            stop[li] = s + n_left
            start[ri] = s + n_left
            stop[ri] = e
            new_front[n_new] = li
            new_front[n_new + 1] = ri
            n_new += 2
        if n_new == 0:
            break
        frontier = new_front
        n_front = n_new

    leaf_g = np.zeros(max_nodes)
    leaf_h = np.zeros(max_nodes)
    leaf_of_row = np.full(n_all, -1, np.int64)
    for j in range(n_nodes):
        if feature[j] < 0:
            for k in range(start[j], stop[j]):
                r = od[0, k]
                leaf_g[j] += g[r]
                leaf_h[j] += h[r]
                leaf_of_row[r] = j
    return feature, threshold, left, right, gain, leaf_g, leaf_h, leaf_of_row, n_nodes


@dataclass
class Tree:
    """Flat binary tree; leaves have ``feature == -1``. Leaf values include the learning rate."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(len(self.feature)):
            f = self.feature[idx]
            internal = f >= 0
            if not internal.any():
                break
            fi = np.where(internal, f, 0)
            go_left = X[rows, fi] <= self.threshold[idx]
            idx = np.where(internal, np.where(go_left, self.left[idx], self.right[idx]), idx)
        return idx

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64), np.asarray(d["gain"], dtype=np.float64),
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_loss(y, raw):
    # log(1 + e^-|z|) + max(z, 0) - y z
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


class GBDTClassifier(ClassifierMixin, BaseEstimator):
    """Gradient-boosted trees for two-class problems.

    Trees are grown level-wise with second-order (Newton) split gains and L2
    leaf regularisation. A step that would raise the training log-loss is
    halved until it does not, so the loss is non-increasing per round.

    Parameters
    ----------
    n_trees, max_depth, learning_rate, min_samples_leaf
        Usual boosting controls.
    reg_lambda : float
        L2 penalty on leaf values.
    subsample : float
        Row fraction drawn (without replacement, from ``seed``) per tree.
    seed : int
        Only used when ``subsample < 1``.
    """

    def __init__(self, n_trees=100, max_depth=4, learning_rate=0.1, min_samples_leaf=5, reg_lambda=1.0,
                 subsample=1.0, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.reg_lambda = reg_lambda
        self.subsample = subsample
        self.seed = seed

    # -- training -------------------------------------------------------

    def fit(self, X, y, feature_names=None):
        X = check_array(X, dtype=np.float64, order="C", ensure_all_finite=True)
        y = np.asarray(y)
        if len(y) != len(X):
            raise TrainError(f"X has {len(X)} rows but y has {len(y)}")
        classes = np.unique(y)
        if len(classes) < 2:
            raise TrainError("training data contains a single class")
        if len(classes) > 2:
            raise TrainError(f"binary classifier got {len(classes)} classes")
        if len(X) < 2 * self.min_samples_leaf:
            raise TrainError(f"need at least {2 * self.min_samples_leaf} rows, got {len(X)}")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = (
            tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
        )
        if len(self.feature_names_) != X.shape[1]:
            raise TrainError("feature_names length does not match X")

        target = (y == classes[1]).astype(np.float64)
        prior = float(np.clip(target.mean(), 1e-6, 1 - 1e-6))
        self.base_score_ = float(np.log(prior / (1 - prior)))
        xt = np.ascontiguousarray(X.T)
        order_full = np.argsort(xt, axis=1, kind="stable").astype(np.int32)
        rng = np.random.default_rng(self.seed)

        raw = np.full(len(X), self.base_score_)
        self.trees_ = []
        self.train_loss_ = [_log_loss(target, raw)]
        for _ in range(self.n_trees):
            p = _sigmoid(raw)
            g = p - target
            h = p * (1 - p)
            if self.subsample < 1.0:
                keep = np.zeros(len(X), dtype=bool)
                keep[rng.choice(len(X), max(2 * self.min_samples_leaf, int(self.subsample * len(X))),
                                replace=False)] = True
            else:
                keep = None
            tree, leaf_of_row = self._grow(X, xt, order_full, g, h, keep)
            step = tree.value[leaf_of_row]
            loss = _log_loss(target, raw + step)
            for _ in range(30):
                if loss <= self.train_loss_[-1]:
                    break
                tree.value *= 0.5
                step = tree.value[leaf_of_row]
                loss = _log_loss(target, raw + step)
            else:
                tree.value[:] = 0.0
                step = tree.value[leaf_of_row]
                loss = self.train_loss_[-1]
            raw = raw + step
            self.trees_.append(tree)
            self.train_loss_.append(loss)
        return self

    def _grow(self, X, xt, order, g, h, keep):
        in_fit = np.ones(len(X), dtype=np.bool_) if keep is None else keep
        feature, threshold, left, right, gain, lg, lh, leaf_of_row, k = _grow_tree(
            xt, order, g, h, in_fit, int(self.max_depth), int(self.min_samples_leaf), float(self.reg_lambda)
        )
        value = np.where(feature[:k] < 0, -lg[:k] / (lh[:k] + self.reg_lambda), 0.0) * self.learning_rate
        tree = Tree(feature[:k].copy(), threshold[:k].copy(), left[:k].copy(), right[:k].copy(), value,
                    gain[:k].copy())
        if keep is not None:
            leaf_of_row = tree.apply(X)
        return tree, leaf_of_row

    # -- inference ------------------------------------------------------

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        raw = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            raw = raw + tree.predict(X)
        return raw

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    # -- introspection / persistence --------------------------------------

    @property
    def feature_importances_(self) -> np.ndarray:
        check_is_fitted(self, "trees_")
        total = np.zeros(self.n_features_in_)
        for tree in self.trees_:
            internal = tree.feature >= 0
            np.add.at(total, tree.feature[internal], tree.gain[internal])
        s = total.sum()
        return total / s if s > 0 else total

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "hyperparameters": self.get_params(),
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "feature_names": list(self.feature_names_),
            "base_score": self.base_score_,
            "train_loss": list(self.train_loss_),
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBDTClassifier":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        m = cls(**d["hyperparameters"])
        m.classes_ = np.array(d["classes"])
        m.feature_names_ = tuple(d["feature_names"])
        m.n_features_in_ = len(m.feature_names_)
        m.base_score_ = float(d["base_score"])
        m.train_loss_ = list(d.get("train_loss", []))
        m.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        return m


def train(table, hp: dict | None = None) -> GBDTClassifier:
    """Fit a classifier to a :class:`FeatureTable`."""
    model = GBDTClassifier(**(hp or {}))
    return model.fit(table.X, table.y, feature_names=table.feature_names)


def save_model(model: GBDTClassifier, path, extra: dict | None = None) -> Path:
    d = model.to_dict()
    if extra:
        d["provenance"] = extra
    path = Path(path)
    path.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
    return path


def load_model(path) -> GBDTClassifier:
    return GBDTClassifier.from_dict(json.loads(Path(path).read_text()))
