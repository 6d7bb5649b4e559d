import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitstream import features as F
from gaitstream.errors import AlignmentError, LabelError
from gaitstream.session import ChannelSeries, MovementSegment


# naive per-sample oracles
def emg_oracle(x, thr=0.0):
    n = len(x)
    rms = math.sqrt(sum(v * v for v in x) / n)
    mean = sum(x) / n
    var = sum((v - mean) ** 2 for v in x) / n
    mav = sum(abs(v) for v in x) / n
    ssc = sum(1 for i in range(1, n - 1) if (x[i] - x[i - 1]) * (x[i] - x[i + 1]) > thr)
    return {"rms": rms, "variance": var, "mav": mav, "ssc": float(ssc)}


def imu_oracle(xs, rate):
    out = {}
    for axis, x in zip("xyz", xs):
        n = len(x)
        mean = sum(x) / n
        out[f"rms_{axis}"] = math.sqrt(sum(v * v for v in x) / n)
        out[f"mean_{axis}"] = mean
        out[f"std_{axis}"] = math.sqrt(sum((v - mean) ** 2 for v in x) / n)
        d = [(x[i + 1] - x[i]) * rate for i in range(n - 1)]
        out[f"jerk_{axis}"] = math.sqrt(sum(v * v for v in d) / len(d))
    out["sma"] = sum(abs(a) + abs(b) + abs(c) for a, b, c in zip(*xs)) / len(xs[0])
    return out


def _close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def test_emg_features_match_oracle(rng):
    for _ in range(100):
        x = rng.standard_normal(400) * rng.uniform(0.01, 2)
        thr = float(rng.choice([0.0, 1e-3]))
        got = F.extract_emg_features(F.Window("c", 0.0, x, 2000.0), thr)
        want = emg_oracle(x.tolist(), thr)
        assert all(_close(got[k], want[k]) for k in want)


def test_imu_features_match_oracle(rng):
    for _ in range(100):
        xs = [rng.standard_normal(40) * 10 + rng.uniform(-5, 5) for _ in range(3)]
        got = F.extract_imu_features(xs, 200.0)
        want = imu_oracle([x.tolist() for x in xs], 200.0)
        assert set(got) == set(want)
        assert all(_close(got[k], want[k]) for k in want)


def test_feature_edge_cases():
    assert F.extract_emg_features(F.Window("c", 0, np.zeros(400), 2000.0)) == {
        "rms": 0.0, "variance": 0.0, "mav": 0.0, "ssc": 0.0}
    alt = np.array([1.0, -1.0] * 200)
    assert F.extract_emg_features(F.Window("c", 0, alt, 2000.0))["ssc"] == 398
    const = [np.full(40, 2.0)] * 3
    got = F.extract_imu_features(const, 200.0)
    assert got["std_x"] == 0.0 and got["jerk_y"] == 0.0 and got["sma"] == 6.0


def test_imu_alignment_errors():
    with pytest.raises(AlignmentError):
        F.extract_imu_features([np.zeros(40), np.zeros(40), np.zeros(39)], 200.0)
    ws = [F.Window(a, s, np.zeros(40), 200.0) for a, s in (("x", 0.0), ("y", 0.0), ("z", 0.1))]
    with pytest.raises(AlignmentError):
        F.extract_imu_features(ws, 200.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([(400, 200), (40, 20)]))
def test_window_count_formula(extra, ws):
    w, s = ws
    length = w + extra
    m = F.window_matrix(np.arange(length, dtype=float), w, s)
    assert len(m) == (length - w) // s + 1
    assert np.array_equal(m[:, 0], np.arange(len(m)) * s)


def test_window_lengths():
    assert F.window_length(200, 2000.0) == 400 and F.window_length(100, 2000.0) == 200
    assert F.window_length(200, 200.0) == 40 and F.window_length(100, 200.0) == 20
    assert F.n_windows(399, 400, 200) == 0


def test_emg_imu_start_times_align(rollator_session):
    emg = F.segment_windows(rollator_session.channel("emg_es"))
    imu = F.segment_windows(rollator_session.channel("rol_l_gyro_z"))
    k = min(len(emg), len(imu))
    assert [w.start_s for w in emg[:k]] == [w.start_s for w in imu[:k]]
    assert emg[3].start_s == pytest.approx(0.3)


def test_movement_labels_majority_and_ties(rollator_session):
    from dataclasses import replace

    s = replace(rollator_session, movements=(MovementSegment(0.0, 0.1, "forward"),
                                             MovementSegment(0.1, 0.25, "turning")))
    starts = np.array([0.0, 0.05, 0.1, 0.3])
    labels = F.movement_labels(s, starts, 0.2)
    # [0,0.2]: 0.1 vs 0.1 tie -> turning; [0.05,0.25]: forward 0.05 vs 0.15; [0.3,0.5]: no overlap
    assert labels.tolist() == ["turning", "turning", "turning", ""]
    s2 = replace(s, movements=(MovementSegment(0.0, 0.15, "forward"), MovementSegment(0.15, 0.3, "turning")))
    assert F.movement_labels(s2, np.array([0.0]), 0.2).tolist() == ["forward"]


def test_build_dataset_movement(rollator_session):
    t = F.build_dataset([rollator_session], "movement")
    assert set(t.y.tolist()) == {"forward", "turning"}
    assert len(t.feature_names) == 2 * (3 * 4 * 2 + 2)
    assert all(n.split(".")[0].startswith("rol_") for n in t.feature_names)
    assert t.dropped == 0


def test_build_dataset_suit_labels(rollator_session, walking_session):
    t = F.build_dataset([rollator_session, walking_session], "suit")
    assert t.X.shape[1] == 13 * 4
    assert set(t.y[t.scenario == 4].tolist()) == {True}
    assert set(t.y[t.scenario == 1].tolist()) == {False}


def test_movement_requires_segments(walking_session):
    from dataclasses import replace

    with pytest.raises(LabelError):
        F.build_dataset([replace(walking_session, movements=())], "movement", modalities="emg")


def test_table_csv_round_trip(rollator_session, tmp_path):
    t = F.build_dataset([rollator_session], "suit")
    t.to_csv(tmp_path / "f.csv", ["provenance line"])
    back = F.FeatureTable.from_csv(tmp_path / "f.csv")
    assert back.feature_names == t.feature_names
    assert np.array_equal(back.X, t.X)
    assert back.y.tolist() == t.y.tolist()
    assert (tmp_path / "f.csv").read_text().startswith("# provenance line\n")


def test_table_rejects_nan():
    with pytest.raises(ValueError):
        F.FeatureTable(np.array([[np.nan]]), ["a"], np.array([0]), np.array(["S"]), np.array([1]),
                       np.array([1]), np.array([""]), np.array([0.0]))


def test_segment_intensity(rollator_session):
    inten = F.segment_intensity(rollator_session)
    assert set(inten) == {"back", "left_wrist", "right_wrist", "left_leg", "right_leg"}
    back = [c for c in rollator_session.channels if c.placement == "back"]
    assert len(back) == 3
    rms = [np.sqrt((F.window_matrix(c.samples, 400, 200) ** 2).mean(axis=1)) for c in back]
    assert np.allclose(inten["back"], np.mean(rms, axis=0), rtol=1e-12)


def test_segment_intensity_missing_placement(rollator_session):
    chans = [c for c in rollator_session.channels if c.placement != "back"]
    s = rollator_session.replace_channels(chans)
    with pytest.warns(UserWarning, match="back"):
        inten = F.segment_intensity(s)
    assert "back" not in inten


def test_feature_block_accepts_prewindowed(rollator_session):
    chans = rollator_session.channels_of("ACC", "GYRO")
    X = F.feature_block(chans, 10, "imu")

    class View:
        def __init__(self, c):
            self.channel_id, self.modality, self.placement = c.channel_id, c.modality, c.placement
            self.axis, self.rate_hz = c.axis, c.rate_hz
            self.matrix = F.window_matrix(c.samples, 40, 20)[:10]

    assert np.array_equal(F.feature_block([View(c) for c in chans], 10, "imu"), X)


def test_imu_groups_require_triples(rollator_session):
    chans = [c for c in rollator_session.channels_of("ACC", "GYRO") if c.channel_id != "rol_l_acc_z"]
    with pytest.raises(AlignmentError):
        F.imu_groups(chans)


def test_channel_series_windows_reject_gaps():
    c = ChannelSeries("e", "EMG", "back", "none", 2000.0, np.zeros(800), np.r_[np.ones(1), np.zeros(799)])
    with pytest.raises(ValueError):
        F.segment_windows(c)
