from .analysis import PCAProjector, Trend, class_separation, feature_importance, pca_project, trend_over_rounds
from .gbdt import GBDTClassifier, load_model, save_model, train
from .validation import CVReport, adapt_model, adaptation_split, cross_validate, evaluate_adaptation

__all__ = [
    "CVReport", "GBDTClassifier", "PCAProjector", "Trend", "adapt_model", "adaptation_split", "class_separation",
    "cross_validate", "evaluate_adaptation", "feature_importance", "load_model", "pca_project", "save_model",
    "train", "trend_over_rounds",
]
