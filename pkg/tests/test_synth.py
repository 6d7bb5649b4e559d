import numpy as np
import pytest

from gaitstream import synth
from gaitstream.features import build_dataset
from gaitstream.pipeline import preprocess_session
from gaitstream.session import ScenarioTag, validate_session
from conftest import make_session


def test_sessions_valid_for_all_scenarios(subject):
    for k in (1, 2, 3, 4):
        s = make_session(subject, k, 2)
        assert validate_session(s).ok
        assert bool(s.channels_of("ACC", "GYRO")) == s.scenario.rollator


def test_deterministic(subject):
    a, b = make_session(subject, 4, 3), make_session(subject, 4, 3)
    assert a == b
    c = make_session(subject, 4, 4)
    assert not np.array_equal(a.channels[0].samples[:100], c.channels[0].samples[:100])


def test_study_subjects_distinct_and_alternating():
    subs = synth.study_subjects(4, 0)
    assert [s for s, _ in subs] == ["S01", "S02", "S03", "S04"]
    assert [p.suit_side for _, p in subs] == ["left", "right", "left", "right"]
    assert len({p.seed for _, p in subs}) == 4
    assert synth.study_subjects(4, 0) == subs
    assert synth.study_subjects(4, 1) != subs


def test_turning_gyro_contrast(subject):
    for r in (1, 5):
        s = make_session(subject, 3, r)
        for ch in ("rol_l_gyro_z", "rol_r_gyro_z"):
            x = s.channel(ch).samples
            t = np.arange(len(x)) / 200.0
            turn = np.zeros(len(x), bool)
            for m in s.movements:
                if m.label == "turning":
                    turn |= (t >= m.start_s) & (t < m.end_s)
            assert np.abs(x[turn]).mean() >= 3 * np.abs(x[~turn]).mean()


def test_turn_within_first_tenth(subject):
    s = make_session(subject, 3, 1)
    first = [m for m in s.movements if m.label == "turning"][0]
    assert first.start_s < 0.1 * s.duration_s


def test_suit_effect_on_restricted_leg(subject):
    sid, p = subject
    side = p.suit_side[0]
    ssc = {}
    for k in (1, 2):
        t = build_dataset([preprocess_session(make_session(subject, k, 1))], "suit")
        cols = [t.feature_names.index(f"emg_{m}_{side}.ssc") for m in ("rf", "bf")]
        ssc[k] = t.X[:, cols].mean()
    assert ssc[2] > ssc[1]


def test_drift_scales_amplitude():
    sid, p = synth.study_subjects(2, 0, drift_per_round=0.05)[0]
    tag = ScenarioTag(False, False)
    r1 = synth.generate_session(p, tag, 1, synth.round_plan(p, 1), sid)
    r9 = synth.generate_session(p, tag, 9, synth.round_plan(p, 9), sid)
    assert np.std(r9.channels[0].samples) > 1.2 * np.std(r1.channels[0].samples)


def test_path_plan_validation():
    with pytest.raises(ValueError):
        synth.PathPlan([synth.PathSegment("hop", 1.0)])
    with pytest.raises(ValueError):
        synth.PathPlan([synth.PathSegment("turn90", 1.0, 0.0)])
    plan = synth.PathPlan.l_path(45.0)
    turns = [s for s in plan.segments if s.kind != "forward"]
    # total heading change 90 + 180 - 90 degrees
    assert sum(s.yaw_rate_dps * s.duration_s for s in turns) == pytest.approx(180.0)


def test_yaw_profile_preserves_turn_angle():
    plan = synth.PathPlan.l_path(40.0)
    t = np.arange(int(plan.total_s * 200)) / 200.0
    yaw = synth.yaw_profile(plan, t)
    assert yaw.sum() / 200.0 == pytest.approx(180.0, abs=1.0)


def test_subject_params_validation():
    with pytest.raises(ValueError):
        synth.SubjectParams(seed=1, suit_abruptness_gain=0.5)
    with pytest.raises(ValueError):
        synth.SubjectParams(seed=1, amplitude_scale=(1.0,) * 3)
    assert synth.SubjectParams.random(5) == synth.SubjectParams.random(5)


def test_iter_study_limits():
    with pytest.raises(ValueError):
        next(synth.iter_study(1, 2))
    with pytest.raises(ValueError):
        next(synth.iter_study(2, 11))
