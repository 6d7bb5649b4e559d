"""Session preprocessing and featurization as scikit-learn style transformers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import dsp
from .errors import InterpolationError
from .features import build_dataset
from .session import Session


@dataclass(frozen=True)
class PreprocessConfig:
    filter_mode: str = "zero_phase"
    emg_low_hz: float = 20.0
    emg_high_hz: float = 450.0
    filter_order: int = dsp.DEFAULT_ORDER
    interp_order: int = 3
    max_gap: int = 200
    # robust z threshold for IMU spikes; None disables outlier removal
    outlier_sigma: float | None = 5.0
    outlier_baseline: int = 11
    imu_lowpass_hz: float | None = None

    @classmethod
    def causal(cls, **kw) -> "PreprocessConfig":
        """Configuration reproducible sample-by-sample by the streaming service."""
        return cls(filter_mode="causal", outlier_sigma=None, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def preprocess_channel(c, cfg: PreprocessConfig):
    x = np.asarray(c.samples, dtype=np.float64)
    if c.gap_mask.any():
        x = dsp.interpolate_gaps(np.where(c.gap_mask, 0.0, x), c.gap_mask, cfg.interp_order, cfg.max_gap)
        if np.isnan(x).any():
            raise InterpolationError(f"channel {c.channel_id}: gap longer than {cfg.max_gap} samples")
    if c.modality == "EMG":
        coeffs = dsp.design_bandpass(cfg.emg_low_hz, cfg.emg_high_hz, cfg.filter_order, c.rate_hz)
        x = dsp.apply_filter(x, coeffs, cfg.filter_mode)
    else:
        if cfg.outlier_sigma is not None:
            # spikes are judged against a short running median so sustained
            # turning rates are not mistaken for outliers
            resid = x - dsp.running_median(x, cfg.outlier_baseline)
            _, mask = dsp.remove_outliers(resid, cfg.outlier_sigma)
            if mask.any():
                x = dsp.interpolate_gaps(x, mask, poly_order=1, max_gap=len(x))
        if cfg.imu_lowpass_hz is not None:
            coeffs = dsp.design_lowpass(cfg.imu_lowpass_hz, cfg.filter_order, c.rate_hz)
            x = dsp.apply_filter(x, coeffs, cfg.filter_mode)
    return c.replace(samples=x, gap_mask=np.zeros(len(x), dtype=bool))


def preprocess_session(s: Session, cfg: PreprocessConfig | None = None) -> Session:
    cfg = cfg or PreprocessConfig()
    return s.replace_channels([preprocess_channel(c, cfg) for c in s.channels])


class SessionPreprocessor(TransformerMixin, BaseEstimator):
    """Interpolate gaps, remove IMU spikes and band-pass EMG for each session."""

    def __init__(self, filter_mode="zero_phase", filter_order=dsp.DEFAULT_ORDER, interp_order=3,
                 max_gap=200, outlier_sigma=5.0, imu_lowpass_hz=None):
        self.filter_mode = filter_mode
        self.filter_order = filter_order
        self.interp_order = interp_order
        self.max_gap = max_gap
        self.outlier_sigma = outlier_sigma
        self.imu_lowpass_hz = imu_lowpass_hz

    def fit(self, sessions=None, y=None):
        return self

    @property
    def config(self) -> PreprocessConfig:
        return replace(
            PreprocessConfig(), filter_mode=self.filter_mode, filter_order=self.filter_order,
            interp_order=self.interp_order, max_gap=self.max_gap, outlier_sigma=self.outlier_sigma,
            imu_lowpass_hz=self.imu_lowpass_hz,
        )

    def transform(self, sessions):
        cfg = self.config
        return [preprocess_session(s, cfg) for s in sessions]


class WindowFeaturizer(TransformerMixin, BaseEstimator):
    """Turn preprocessed sessions into a :class:`FeatureTable` for one task."""

    def __init__(self, task="suit", modalities=None, window_ms=200, hop_ms=100, ssc_threshold=0.0):
        self.task = task
        self.modalities = modalities
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.ssc_threshold = ssc_threshold

    def fit(self, sessions=None, y=None):
        return self

    def transform(self, sessions):
        return build_dataset(sessions, self.task, self.modalities, self.window_ms, self.hop_ms,
                             self.ssc_threshold)
