"""Model and dataset analyses: importance ranking, PCA projection, trends over rounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import ProjectionError, TrendError


def feature_importance(model) -> list:
    """[(feature_name, share of total split gain), ...] sorted descending, ties by name."""
    imp = model.feature_importances_
    pairs = list(zip(model.feature_names_, imp.tolist()))
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


class PCAProjector(TransformerMixin, BaseEstimator):
    """Standardise, drop constant columns and project on the leading principal axes.

    Each component's sign is chosen so its largest-magnitude loading is positive.
    """

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if len(X) < self.n_components:
            raise ProjectionError(f"need at least {self.n_components} rows, got {len(X)}")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        keep = std > 0
        if not keep.any():
            raise ProjectionError("all features are constant")
        Z = (X[:, keep] - mean[keep]) / std[keep]
        _, s, vt = np.linalg.svd(Z, full_matrices=False)
        k = min(self.n_components, vt.shape[0])
        comps = vt[:k].copy()
        for i in range(k):
            j = np.argmax(np.abs(comps[i]))
            if comps[i, j] < 0:
                comps[i] = -comps[i]
        var = s ** 2 / len(X)
        self.mean_, self.scale_, self.kept_ = mean[keep], std[keep], keep
        self.components_ = comps
        self.explained_variance_ = var[:k]
        self.explained_variance_ratio_ = var[:k] / var.sum()
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        Z = (X[:, self.kept_] - self.mean_) / self.scale_
        return Z @ self.components_.T


def pca_project(table, dims: int = 2) -> np.ndarray:
    return PCAProjector(dims).fit_transform(table.X)


def class_separation(coords: np.ndarray, labels) -> float:
    """Centroid distance over the mean within-class spread (two classes)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError("class separation needs exactly two classes")
    cents, spreads = [], []
    for c in classes:
        pts = coords[labels == c]
        cent = pts.mean(axis=0)
        cents.append(cent)
        spreads.append(np.mean(np.linalg.norm(pts - cent, axis=1)))
    return float(np.linalg.norm(cents[0] - cents[1]) / np.mean(spreads))


@dataclass
class Trend:
    rounds: np.ndarray
    means: np.ndarray
    slope: float
    correlation: float

    def to_dict(self) -> dict:
        return {"rounds": self.rounds.tolist(), "means": self.means.tolist(), "slope": self.slope,
                "correlation": self.correlation}


def trend_from_means(rounds, means) -> Trend:
    rounds = np.asarray(rounds, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    if len(rounds) < 4:
        raise TrendError(f"need at least 4 rounds, got {len(rounds)}")
    if np.ptp(means) == 0:
        return Trend(rounds, means, 0.0, 0.0)
    dr = rounds - rounds.mean()
    dm = means - means.mean()
    slope = float(np.sum(dr * dm) / np.sum(dr * dr))
    corr = float(np.sum(dr * dm) / np.sqrt(np.sum(dr * dr) * np.sum(dm * dm)))
    return Trend(rounds, means, slope, corr)


def trend_over_rounds(table, feature_name: str) -> Trend:
    """Per-round mean of one feature, its OLS slope over round index and Pearson r.

    ``table`` should hold a single subject and scenario.
    """
    if len(set(table.subject_id.tolist())) > 1 or len(set(table.scenario.tolist())) > 1:
        raise TrendError("trend_over_rounds expects one subject and one scenario")
    col = table.feature_names.index(feature_name)
    rounds = np.array(sorted(set(table.round_index.tolist())))
    means = np.array([table.X[table.round_index == r, col].mean() for r in rounds])
    return trend_from_means(rounds, means)
