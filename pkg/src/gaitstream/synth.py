"""Deterministic synthetic gait sessions (sEMG + rollator IMU).

The generator stands in for recorded study data. Effects it encodes, each
behind a parameter:

* simulation suit: attenuated and more abrupt activity on the restricted side
  (transient rate multiplied by ``suit_abruptness_gain``) and stronger
  contralateral leg activity (``compensation_gain``);
* rollator: tonic grip activation on the wrists and populated handle IMUs;
* turning: handle gyro z follows the planned yaw rate.

Everything is a pure function of the subject seed, scenario and round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from . import dsp
from .session import (
    EMG_RATE_HZ,
    IMU_RATE_HZ,
    SCENARIOS,
    ChannelSeries,
    MovementSegment,
    ScenarioTag,
    Session,
    SubjectProfile,
    save_session,
)

# (channel_id, placement, muscle, side, burst phases within the stride)
EMG_LAYOUT = (
    ("emg_es", "back", "erector spinae", None, (0.10,)),
    ("emg_trap_l", "back", "trapezius", "left", (0.30,)),
    ("emg_trap_r", "back", "trapezius", "right", (0.80,)),
    ("emg_br_l", "left_wrist", "brachioradialis", "left", (0.25,)),
    ("emg_fds_l", "left_wrist", "flexor digitorum superficialis", "left", (0.30,)),
    ("emg_ecu_l", "left_wrist", "extensor carpi ulnaris", "left", (0.20,)),
    ("emg_br_r", "right_wrist", "brachioradialis", "right", (0.75,)),
    ("emg_fds_r", "right_wrist", "flexor digitorum superficialis", "right", (0.80,)),
    ("emg_ecu_r", "right_wrist", "extensor carpi ulnaris", "right", (0.70,)),
    ("emg_rf_l", "left_leg", "rectus femoris", "left", (0.00, 0.55)),
    ("emg_bf_l", "left_leg", "biceps femoris", "left", (0.85, 0.35)),
    ("emg_rf_r", "right_leg", "rectus femoris", "right", (0.50, 0.05)),
    ("emg_bf_r", "right_leg", "biceps femoris", "right", (0.35, 0.85)),
)
IMU_SENSORS = (("rol_l", "rollator_left"), ("rol_r", "rollator_right"))

LEG_BURST_WIDTH = 0.07  # stride fraction
ARM_BURST_WIDTH = 0.12
TRANSIENT_HZ = 380.0
TRANSIENT_WIDTH_S = 0.006
RAMP_S = 0.25
WALK_SPEED_MS = 0.8
G = 9.81


@dataclass(frozen=True)
class PathSegment:
    kind: str  # forward | turn90 | turn180
    duration_s: float
    yaw_rate_dps: float = 0.0

    @property
    def label(self) -> str:
        return "forward" if self.kind == "forward" else "turning"


@dataclass(frozen=True)
class PathPlan:
    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments or self.total_s <= 0:
            raise ValueError("path plan needs positive total duration")
        for s in self.segments:
            if s.kind not in ("forward", "turn90", "turn180"):
                raise ValueError(f"unknown segment kind {s.kind!r}")
            if s.kind != "forward" and s.yaw_rate_dps == 0:
                raise ValueError("turn segments need a non-zero yaw rate")
            if s.duration_s <= 0:
                raise ValueError("segment durations must be positive")

    @property
    def total_s(self) -> float:
        return float(sum(s.duration_s for s in self.segments))

    @classmethod
    def l_path(cls, yaw_rate_dps: float = 45.0, first_leg_s: float = 1.2, long_leg_s: float = 4.0,
               stretch: float = 1.0) -> "PathPlan":
        """Out along an L (short leg, left turn, long leg), turn around, and back."""
        w = abs(yaw_rate_dps)
        t90 = 90.0 / w
        return cls((
            PathSegment("forward", first_leg_s * stretch),
            PathSegment("turn90", t90, +w),
            PathSegment("forward", long_leg_s * stretch),
            PathSegment("turn180", 2 * t90, +w),
            PathSegment("forward", long_leg_s * stretch),
            PathSegment("turn90", t90, -w),
            PathSegment("forward", first_leg_s * stretch),
        ))


@dataclass(frozen=True)
class SubjectParams:
    seed: int
    stride_hz: float = 0.95
    amplitude_scale: tuple = (1.0,) * len(EMG_LAYOUT)
    noise_floor: float = 0.004  # mV
    suit_side: str = "left"
    suit_abruptness_gain: float = 2.0
    compensation_gain: float = 1.3
    suit_attenuation: float = 0.6
    transient_rate_hz: float = 3.0
    emg_amplitude_mv: float = 0.2
    yaw_rate_dps: float = 45.0
    sway_dps: float = 4.0
    gyro_bias_dps: tuple = (0.0,) * 6  # rol_l x,y,z then rol_r x,y,z
    handle_tilt_deg: tuple = (0.0, 0.0)  # pitch, roll of the handle sensors
    imu_noise: tuple = (0.04, 1.0)  # acc g (handle vibration), gyro dps
    height_m: float = 1.72
    mass_kg: float = 70.0
    drift_per_round: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "amplitude_scale", tuple(float(v) for v in self.amplitude_scale))
        object.__setattr__(self, "gyro_bias_dps", tuple(float(v) for v in self.gyro_bias_dps))
        vals = (self.stride_hz, self.noise_floor, self.suit_abruptness_gain, self.compensation_gain,
                *self.amplitude_scale)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("subject parameters must be finite")
        if len(self.amplitude_scale) != len(EMG_LAYOUT) or min(self.amplitude_scale) <= 0:
            raise ValueError(f"need {len(EMG_LAYOUT)} positive amplitude scales")
        if self.suit_abruptness_gain < 1 or self.compensation_gain < 1:
            raise ValueError("suit gains must be >= 1")
        if self.suit_side not in ("left", "right"):
            raise ValueError("suit_side must be left or right")

    @classmethod
    def random(cls, seed: int, suit_side: str = "left", **overrides) -> "SubjectParams":
        """Draw an individual subject; identical seeds give identical parameters."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        # overall briskness of rotational movement: turn rate and weaving scale together
        vigor = float(np.exp(rng.uniform(np.log(0.6), np.log(1.45))))
        params = dict(
            seed=int(seed),
            stride_hz=float(rng.uniform(0.8, 1.1)),
            amplitude_scale=tuple(rng.uniform(0.85, 1.15, len(EMG_LAYOUT)).tolist()),
            noise_floor=float(rng.uniform(0.003, 0.006)),
            suit_side=suit_side,
            yaw_rate_dps=45.0 * vigor,
            # side-to-side weaving while walking straight, relative to the turn rate
            sway_dps=45.0 * vigor * float(rng.uniform(0.3, 0.45)),
            gyro_bias_dps=tuple(rng.uniform(-2.0, 2.0, 6).tolist()),
            handle_tilt_deg=tuple(rng.uniform(-12.0, 12.0, 2).tolist()),
            height_m=float(rng.uniform(1.55, 1.90)),
            mass_kg=float(rng.uniform(50.0, 95.0)),
        )
        params.update(overrides)
        return cls(**params)

    def profile(self, subject_id: str) -> SubjectProfile:
        return SubjectProfile(subject_id, self.height_m, self.mass_kg, self.suit_side)


# ---------------------------------------------------------------------------
# signal pieces


def _burst_envelope(phase: np.ndarray, centres, width: float) -> np.ndarray:
    env = np.zeros_like(phase)
    for c in centres:
        d = (phase - c + 0.5) % 1.0 - 0.5
        env += np.exp(-0.5 * (d / width) ** 2)
    return env


def _carrier(rng, n: int) -> np.ndarray:
    bp = dsp.design_bandpass(20.0, 450.0, 4, EMG_RATE_HZ)
    shape = dsp.design_lowpass(150.0, 2, EMG_RATE_HZ)
    x = rng.standard_normal(n + 2000)
    x = signal.lfilter(shape.b, shape.a, signal.lfilter(bp.b, bp.a, x))[2000:]
    return x / np.std(x)


def _transients(rng, t: np.ndarray, rate_hz: float, amplitude: np.ndarray) -> np.ndarray:
    """Short high-frequency wavelets at Poisson times (abrupt activations)."""
    out = np.zeros_like(t)
    duration = t[-1] + 1.0 / EMG_RATE_HZ
    k = rng.poisson(rate_hz * duration)
    if k == 0:
        return out
    times = np.sort(rng.uniform(0.0, duration, k))
    phases = rng.uniform(0, 2 * np.pi, k)
    half = int(4 * TRANSIENT_WIDTH_S * EMG_RATE_HZ)
    for tc, ph in zip(times, phases):
        i = int(tc * EMG_RATE_HZ)
        lo, hi = max(0, i - half), min(len(t), i + half + 1)
        tt = t[lo:hi] - tc
        out[lo:hi] += (amplitude[lo:hi] * np.exp(-0.5 * (tt / TRANSIENT_WIDTH_S) ** 2)
                       * np.sin(2 * np.pi * TRANSIENT_HZ * tt + ph))
    return out


def yaw_profile(plan: PathPlan, t: np.ndarray) -> np.ndarray:
    """Planned yaw rate with raised-cosine on/off ramps inside each turn."""
    out = np.zeros_like(t)
    start = 0.0
    for seg in plan.segments:
        end = start + seg.duration_s
        if seg.kind != "forward":
            ramp = min(RAMP_S, seg.duration_s / 2)
            inside = (t >= start) & (t < end)
            tt = t[inside]
            w = np.ones_like(tt)
            up = tt < start + ramp
            w[up] = 0.5 - 0.5 * np.cos(np.pi * (tt[up] - start) / ramp)
            down = tt > end - ramp
            w[down] = 0.5 - 0.5 * np.cos(np.pi * (end - tt[down]) / ramp)
            # keep the turn's integrated angle despite the ramps
            out[inside] = seg.yaw_rate_dps * w * seg.duration_s / (seg.duration_s - ramp)
        start = end
    return out


def _segments(plan: PathPlan, duration_s: float) -> tuple:
    out, start = [], 0.0
    for seg in plan.segments:
        end = min(start + seg.duration_s, duration_s)
        if end > start:
            if out and out[-1].label == seg.label:
                out[-1] = MovementSegment(out[-1].start_s, end, seg.label)
            else:
                out.append(MovementSegment(start, end, seg.label))
        start = end
    return tuple(out)


def _session_rng(p: SubjectParams, scenario: ScenarioTag, round_index: int, stream: int):
    return np.random.default_rng(np.random.SeedSequence([p.seed, scenario.scenario_id, round_index, stream]))


# ---------------------------------------------------------------------------
# generation


def generate_session(p: SubjectParams, scenario: ScenarioTag, round_index: int, plan: PathPlan | None = None,
                     subject_id: str | None = None) -> Session:
    plan = plan or PathPlan.l_path(p.yaw_rate_dps)
    subject_id = subject_id or f"S{p.seed:02d}"
    n_imu = int(round(plan.total_s * IMU_RATE_HZ))
    duration = n_imu / IMU_RATE_HZ
    n_emg = int(round(duration * EMG_RATE_HZ))
    rng = _session_rng(p, scenario, round_index, 1)

    stride = p.stride_hz * (0.9 if scenario.suit else 1.0) * rng.uniform(0.97, 1.03)
    t = np.arange(n_emg) / EMG_RATE_HZ
    phase = (stride * t + rng.uniform()) % 1.0
    level = p.emg_amplitude_mv * (1.0 + p.drift_per_round * (round_index - 1)) * rng.uniform(0.99, 1.01)
    restricted = p.suit_side
    contralateral = "right" if restricted == "left" else "left"

    channels = []
    for (cid, placement, _muscle, side, centres), scale in zip(EMG_LAYOUT, p.amplitude_scale):
        is_leg = placement.endswith("_leg")
        is_wrist = placement.endswith("_wrist")
        width = LEG_BURST_WIDTH if is_leg else ARM_BURST_WIDTH
        env = 0.15 + _burst_envelope(phase, centres, width)
        if scenario.rollator and is_wrist:
            env = 0.6 + 0.4 * env  # tonic grip on the handles
        elif scenario.rollator and is_leg:
            env = 0.85 * env
        amp = level * scale
        transient_rate = p.transient_rate_hz
        if scenario.suit and side == restricted:
            amp *= p.suit_attenuation
            transient_rate *= p.suit_abruptness_gain
        if scenario.suit and is_leg and side == contralateral:
            amp *= p.compensation_gain
        envelope = amp * env
        x = envelope * _carrier(rng, n_emg)
        x += _transients(rng, t, transient_rate, 1.5 * envelope)
        x += p.noise_floor * rng.standard_normal(n_emg)
        channels.append(ChannelSeries(cid, "EMG", placement, "none", EMG_RATE_HZ, x))

    if scenario.rollator:
        channels += _imu_channels(p, plan, n_imu, stride, _session_rng(p, scenario, round_index, 2))

    return Session(
        p.profile(subject_id), scenario, round_index, tuple(channels), _segments(plan, duration), duration,
        meta={"plan": [s.kind for s in plan.segments], "seed": p.seed},
    )


def _imu_channels(p: SubjectParams, plan: PathPlan, n: int, stride: float, rng) -> list:
    t = np.arange(n) / IMU_RATE_HZ
    yaw = yaw_profile(plan, t)
    sway_phase = rng.uniform(0, 2 * np.pi)
    sway = p.sway_dps * np.sin(2 * np.pi * stride * t + sway_phase)
    bounce = np.sin(4 * np.pi * stride * t + sway_phase)
    pitch, roll = np.deg2rad(p.handle_tilt_deg)
    heading_rate = yaw + sway
    centripetal = WALK_SPEED_MS * np.deg2rad(heading_rate) / G
    acc_noise, gyro_noise = p.imu_noise
    out = []
    for k, (prefix, placement) in enumerate(IMU_SENSORS):
        bias = p.gyro_bias_dps[3 * k:3 * k + 3]
        gyro = {
            "x": bias[0] + 0.15 * heading_rate + 1.5 * bounce + gyro_noise * rng.standard_normal(n),
            "y": bias[1] + 2.0 * np.cos(2 * np.pi * stride * t + sway_phase) + gyro_noise * rng.standard_normal(n),
            "z": bias[2] + heading_rate + gyro_noise * rng.standard_normal(n),
        }
        acc = {
            "x": -math.sin(pitch) + 0.03 * bounce + acc_noise * rng.standard_normal(n),
            "y": math.sin(roll) * math.cos(pitch) + centripetal + acc_noise * rng.standard_normal(n),
            "z": math.cos(roll) * math.cos(pitch) + 0.02 * bounce + acc_noise * rng.standard_normal(n),
        }
        for axis in "xyz":
            out.append(ChannelSeries(f"{prefix}_acc_{axis}", "ACC", placement, axis, IMU_RATE_HZ, acc[axis]))
        for axis in "xyz":
            out.append(ChannelSeries(f"{prefix}_gyro_{axis}", "GYRO", placement, axis, IMU_RATE_HZ, gyro[axis]))
    return out


def round_plan(p: SubjectParams, round_index: int) -> PathPlan:
    """Per-round path with the leg lengths jittered by up to +-10%."""
    rng = np.random.default_rng(np.random.SeedSequence([p.seed, round_index, 0xB1A9]))
    return PathPlan.l_path(p.yaw_rate_dps, stretch=float(rng.uniform(0.9, 1.1)))


def subject_id_for(index: int) -> str:
    return f"S{index + 1:02d}"


def study_subjects(n_subjects: int, master_seed: int, drift_per_round: float = 0.0, **overrides) -> list:
    """Subject ids and parameters; suit side alternates left/right."""
    root = np.random.SeedSequence(int(master_seed))
    seeds = [int(s.generate_state(1)[0]) for s in root.spawn(n_subjects)]
    out = []
    for i, seed in enumerate(seeds):
        side = "left" if i % 2 == 0 else "right"
        params = SubjectParams.random(seed, side, drift_per_round=drift_per_round, **overrides)
        out.append((subject_id_for(i), params))
    return out


def iter_study(n_subjects: int = 11, rounds: int = 10, master_seed: int = 0, drift_per_round: float = 0.0,
               scenarios=(1, 2, 3, 4), **overrides):
    """Yield sessions subject by subject (scenario, then round order)."""
    if n_subjects < 2 or rounds < 2:
        raise ValueError("need at least 2 subjects and 2 rounds")
    if rounds > 10:
        raise ValueError("at most 10 rounds per scenario")
    for sid, params in study_subjects(n_subjects, master_seed, drift_per_round, **overrides):
        for scen in scenarios:
            tag = ScenarioTag(*SCENARIOS[scen])
            for r in range(1, rounds + 1):
                yield generate_session(params, tag, r, round_plan(params, r), subject_id=sid)


def generate_study(n_subjects: int = 11, rounds: int = 10, master_seed: int = 0, drift_per_round: float = 0.0,
                   **overrides) -> list:
    """All sessions of a study in memory. Use :func:`iter_study` for the full-size study."""
    return list(iter_study(n_subjects, rounds, master_seed, drift_per_round, **overrides))


def write_study(sessions, root, provenance: dict | None = None) -> list:
    root = Path(root)
    paths = []
    for s in sessions:
        paths.append(save_session(s, root / session_dirname(s), provenance))
    return paths


def session_dirname(s: Session) -> str:
    return f"{s.subject.subject_id}_sc{s.scenario.scenario_id}_r{s.round_index:02d}"
