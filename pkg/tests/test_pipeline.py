import numpy as np
import pytest
from sklearn.base import clone

from gaitstream import dsp
from gaitstream.errors import InterpolationError
from gaitstream.pipeline import (
    PreprocessConfig,
    SessionPreprocessor,
    WindowFeaturizer,
    preprocess_channel,
    preprocess_session,
)
from gaitstream.session import ChannelSeries


def test_emg_is_bandpassed(walking_session):
    out = preprocess_session(walking_session)
    c = walking_session.channel("emg_es")
    ref = dsp.apply_filter(c.samples, dsp.design_bandpass(20, 450, 4, 2000.0))
    assert np.array_equal(out.channel("emg_es").samples, ref)


def test_causal_config(walking_session):
    out = preprocess_session(walking_session, PreprocessConfig.causal())
    c = walking_session.channel("emg_es")
    assert np.array_equal(out.channel("emg_es").samples,
                          dsp.apply_filter(c.samples, dsp.design_bandpass(20, 450, 4, 2000.0), "causal"))


def test_imu_spike_removed_but_turns_kept(rollator_session):
    c = rollator_session.channel("rol_l_gyro_z")
    x = c.samples.copy()
    x[500] += 400.0
    out = preprocess_channel(c.replace(samples=x), PreprocessConfig())
    assert abs(out.samples[500] - c.samples[500]) < 20
    # sustained turning rates survive
    assert np.max(np.abs(out.samples)) > 0.9 * np.max(np.abs(c.samples))


def test_gaps_interpolated():
    t = np.arange(4000) / 2000.0
    x = np.sin(2 * np.pi * 3 * t)
    mask = np.zeros(4000, bool)
    mask[1000:1010] = True
    c = ChannelSeries("e", "EMG", "back", "none", 2000.0, np.where(mask, np.nan, x), mask)
    out = preprocess_channel(c, PreprocessConfig(filter_mode="causal"))
    assert np.isfinite(out.samples).all() and not out.gap_mask.any()
    mask[1000:1300] = True
    c = ChannelSeries("e", "EMG", "back", "none", 2000.0, np.where(mask, np.nan, x), mask)
    with pytest.raises(InterpolationError):
        preprocess_channel(c, PreprocessConfig())


def test_transformers(walking_session, rollator_session):
    pre = SessionPreprocessor()
    assert clone(pre).get_params() == pre.get_params()
    sessions = pre.fit_transform([walking_session, rollator_session])
    table = WindowFeaturizer(task="rollator").fit_transform(sessions)
    assert set(table.y.tolist()) == {False, True}
    assert WindowFeaturizer(task="movement").get_params()["task"] == "movement"
