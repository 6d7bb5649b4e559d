"""Recorded/synthetic gait sessions: data model, validation and on-disk format.

A session directory holds ``manifest.json`` plus one CSV per channel with
header ``t,value,gap``. Samples are written with 17 significant digits so a
save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MODALITIES = ("EMG", "ACC", "GYRO")
PLACEMENTS = (
    "back",
    "left_wrist",
    "right_wrist",
    "left_leg",
    "right_leg",
    "rollator_left",
    "rollator_right",
)
BODY_SEGMENTS = PLACEMENTS[:5]
AXES = ("none", "x", "y", "z")
MOVEMENT_LABELS = ("forward", "turning")

EMG_RATE_HZ = 2000.0
IMU_RATE_HZ = 200.0
N_EMG_CHANNELS = 13
N_ROLLATOR_IMU_CHANNELS = 12
MAX_ROUNDS = 10

# scenario id <-> (rollator, suit)
SCENARIOS = {1: (False, False), 2: (False, True), 3: (True, False), 4: (True, True)}


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    height_m: float
    mass_kg: float
    suit_side: str  # "left" | "right"


@dataclass(frozen=True)
class ScenarioTag:
    rollator: bool
    suit: bool

    @property
    def scenario_id(self) -> int:
        for sid, combo in SCENARIOS.items():
            if combo == (self.rollator, self.suit):
                return sid
        raise AssertionError("unreachable")

    @classmethod
    def from_id(cls, scenario_id: int) -> "ScenarioTag":
        try:
            rollator, suit = SCENARIOS[int(scenario_id)]
        except KeyError:
            raise ValidationError(f"scenario id must be 1..4, got {scenario_id!r}") from None
        return cls(rollator=rollator, suit=suit)


class ChannelSeries:
    """Uniformly sampled samples of one sensor channel.

    ``samples`` and ``gap_mask`` are stored as read-only numpy arrays.
    """

    __slots__ = ("channel_id", "modality", "placement", "axis", "rate_hz", "samples", "gap_mask")

    def __init__(self, channel_id, modality, placement, axis, rate_hz, samples, gap_mask=None):
        samples = np.array(samples, dtype=np.float64)
        if gap_mask is None:
            gap_mask = np.zeros(samples.shape, dtype=bool)
        else:
            gap_mask = np.array(gap_mask, dtype=bool)
        samples.flags.writeable = False
        gap_mask.flags.writeable = False
        self.channel_id = str(channel_id)
        self.modality = modality
        self.placement = placement
        self.axis = axis
        self.rate_hz = float(rate_hz)
        self.samples = samples
        self.gap_mask = gap_mask

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate_hz

    def replace(self, samples=None, gap_mask=None) -> "ChannelSeries":
        return ChannelSeries(
            self.channel_id,
            self.modality,
            self.placement,
            self.axis,
            self.rate_hz,
            self.samples if samples is None else samples,
            self.gap_mask if gap_mask is None else gap_mask,
        )

    def __eq__(self, other):
        if not isinstance(other, ChannelSeries):
            return NotImplemented
        return (
            (self.channel_id, self.modality, self.placement, self.axis, self.rate_hz)
            == (other.channel_id, other.modality, other.placement, other.axis, other.rate_hz)
            and np.array_equal(self.samples, other.samples, equal_nan=True)
            and np.array_equal(self.gap_mask, other.gap_mask)
        )

    def __repr__(self):
        return (
            f"ChannelSeries({self.channel_id!r}, {self.modality}, {self.placement}, "
            f"axis={self.axis}, rate_hz={self.rate_hz:g}, n={len(self.samples)})"
        )


@dataclass(frozen=True)
class MovementSegment:
    start_s: float
    end_s: float
    label: str  # "forward" | "turning"


@dataclass(frozen=True, eq=True)
class Session:
    subject: SubjectProfile
    scenario: ScenarioTag
    round_index: int
    channels: tuple
    movements: tuple
    duration_s: float
    # free-form provenance (e.g. generator movement kinds); not persisted
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "movements", tuple(self.movements))

    def channel(self, channel_id: str) -> ChannelSeries:
        for c in self.channels:
            if c.channel_id == channel_id:
                return c
        raise KeyError(channel_id)

    def channels_of(self, *modalities: str) -> list:
        return [c for c in self.channels if c.modality in modalities]

    def replace_channels(self, channels) -> "Session":
        return Session(
            self.subject, self.scenario, self.round_index, tuple(channels),
            self.movements, self.duration_s, dict(self.meta),
        )

    @property
    def key(self) -> tuple:
        return (self.subject.subject_id, self.scenario.scenario_id, self.round_index)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


class ValidationReport(list):
    """List of :class:`Violation`; empty means valid."""

    @property
    def ok(self) -> bool:
        return not self

    def __str__(self):
        return "\n".join(str(v) for v in self) if self else "valid"


def _validate_channel(c: ChannelSeries, duration_s: float, report: ValidationReport) -> None:
    where = f"channel {c.channel_id}"
    if c.modality not in MODALITIES:
        report.append(Violation(where, f"unknown modality {c.modality!r}"))
    if c.placement not in PLACEMENTS:
        report.append(Violation(where, f"unknown placement {c.placement!r}"))
    if c.axis not in AXES:
        report.append(Violation(where, f"unknown axis {c.axis!r}"))
    if not (c.rate_hz > 0 and math.isfinite(c.rate_hz)):
        report.append(Violation(where, "rate_hz must be positive"))
        return
    if c.modality == "EMG":
        if c.rate_hz != EMG_RATE_HZ:
            report.append(Violation(where, "EMG rate must be 2000"))
        if c.axis != "none":
            report.append(Violation(where, "EMG axis must be none"))
    elif c.modality in ("ACC", "GYRO"):
        if c.rate_hz != IMU_RATE_HZ:
            report.append(Violation(where, f"{c.modality} rate must be 200"))
        if c.axis not in ("x", "y", "z"):
            report.append(Violation(where, f"{c.modality} axis must be x, y or z"))
    if c.samples.shape != c.gap_mask.shape:
        report.append(Violation(where, "samples and gap_mask lengths differ"))
    if abs(len(c.samples) / c.rate_hz - duration_s) > 1.0 / c.rate_hz + 1e-12:
        report.append(
            Violation(where, f"duration {len(c.samples) / c.rate_hz:g}s differs from session {duration_s:g}s")
        )
    present = ~c.gap_mask if c.samples.shape == c.gap_mask.shape else np.ones(c.samples.shape, bool)
    if not np.all(np.isfinite(c.samples[present])):
        report.append(Violation(where, "non-finite sample outside gap_mask"))


def validate_session(s: Session) -> ValidationReport:
    """Check every structural invariant of a session. Never raises."""
    report = ValidationReport()
    subj = s.subject
    if not subj.subject_id:
        report.append(Violation("subject", "subject_id must be non-empty"))
    if not (0.5 < subj.height_m < 2.5):
        report.append(Violation("subject", f"height_m {subj.height_m} outside (0.5, 2.5)"))
    if not (20 < subj.mass_kg < 250):
        report.append(Violation("subject", f"mass_kg {subj.mass_kg} outside (20, 250)"))
    if subj.suit_side not in ("left", "right"):
        report.append(Violation("subject", f"suit_side must be left or right, got {subj.suit_side!r}"))
    if not (isinstance(s.round_index, (int, np.integer)) and 1 <= s.round_index <= MAX_ROUNDS):
        report.append(Violation("session", f"round_index {s.round_index!r} outside 1..{MAX_ROUNDS}"))
    if not (s.duration_s > 0):
        report.append(Violation("session", "duration_s must be positive"))

    seen = set()
    for c in s.channels:
        if c.channel_id in seen:
            report.append(Violation(f"channel {c.channel_id}", "duplicate channel_id"))
        seen.add(c.channel_id)
        _validate_channel(c, s.duration_s, report)

    n_emg = sum(c.modality == "EMG" for c in s.channels)
    n_imu = sum(c.modality in ("ACC", "GYRO") for c in s.channels)
    if n_emg != N_EMG_CHANNELS:
        report.append(Violation("session", f"expected {N_EMG_CHANNELS} EMG channels, found {n_emg}"))
    expected_imu = N_ROLLATOR_IMU_CHANNELS if s.scenario.rollator else 0
    if n_imu != expected_imu:
        report.append(
            Violation("session", f"expected {expected_imu} rollator IMU channels, found {n_imu}")
        )

    for i, m in enumerate(s.movements):
        where = f"movement[{i}]"
        if m.label not in MOVEMENT_LABELS:
            report.append(Violation(where, f"unknown label {m.label!r}"))
        if not (m.start_s < m.end_s):
            report.append(Violation(where, "start_s must be < end_s"))
        if m.start_s < 0 or m.end_s > s.duration_s + 1e-9:
            report.append(Violation(where, f"outside [0, {s.duration_s:g}]"))
    for i in range(1, len(s.movements)):
        prev, cur = s.movements[i - 1], s.movements[i]
        if cur.start_s < prev.start_s:
            report.append(Violation(f"movement[{i - 1}]/movement[{i}]", "segments not sorted"))
        elif cur.start_s < prev.end_s:
            report.append(Violation(f"movement[{i - 1}]/movement[{i}]", "segments overlap"))
    return report


# ---------------------------------------------------------------------------
# disk format


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_session(s: Session, path, provenance: dict | None = None) -> Path:
    """Write ``s`` as a session directory; ``provenance`` is stored verbatim in the manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    channels = []
    for c in s.channels:
        fname = f"{c.channel_id}.csv"
        channels.append(
            {
                "channel_id": c.channel_id,
                "modality": c.modality,
                "placement": c.placement,
                "axis": c.axis,
                "rate_hz": c.rate_hz,
                "file": fname,
            }
        )
        t = np.arange(len(c.samples)) / c.rate_hz
        table = np.column_stack([t, c.samples, c.gap_mask.astype(np.float64)])
        np.savetxt(path / fname, table, fmt=("%.17g", "%.17g", "%d"), delimiter=",",
                   header="t,value,gap", comments="")
    manifest = {
        "subject_id": s.subject.subject_id,
        "height_m": s.subject.height_m,
        "mass_kg": s.subject.mass_kg,
        "suit_side": s.subject.suit_side,
        "scenario": {"rollator": s.scenario.rollator, "suit": s.scenario.suit},
        "round_index": int(s.round_index),
        "duration_s": s.duration_s,
        "channels": channels,
        "movements": [
            {"start_s": m.start_s, "end_s": m.end_s, "label": m.label} for m in s.movements
        ],
    }
    if provenance is not None:
        manifest["provenance"] = provenance
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _read_channel_csv(file: Path) -> np.ndarray:
    try:
        with open(file) as fh:
            header = fh.readline().strip()
            if header != "t,value,gap":
                raise FormatError(f"{file}: expected header 't,value,gap', got {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as e:
        raise FormatError(f"cannot read channel file {file}: {e}") from e
    except ValueError as e:
        raise FormatError(f"{file}: malformed CSV ({e})") from e
    if data.size == 0:
        return np.empty((0, 3))
    if data.shape[1] != 3:
        raise FormatError(f"{file}: expected 3 columns, got {data.shape[1]}")
    return data


def load_session(path) -> Session:
    """Load and validate a session directory.

    Raises FormatError for missing/malformed files and ValidationError when
    the content violates a session invariant.
    """
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise FormatError(f"{path}: missing manifest.json")
    try:
        m = json.loads(mpath.read_text())
        subject = SubjectProfile(
            subject_id=str(m["subject_id"]),
            height_m=float(m["height_m"]),
            mass_kg=float(m["mass_kg"]),
            suit_side=m["suit_side"],
        )
        scenario = ScenarioTag(rollator=bool(m["scenario"]["rollator"]), suit=bool(m["scenario"]["suit"]))
        round_index = m["round_index"]
        duration_s = float(m["duration_s"])
        chan_specs = m["channels"]
        movements = tuple(
            MovementSegment(float(x["start_s"]), float(x["end_s"]), x["label"]) for x in m["movements"]
        )
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{mpath}: malformed manifest ({e!r})") from e

    channels = []
    for spec in chan_specs:
        try:
            cid, modality, placement, axis = spec["channel_id"], spec["modality"], spec["placement"], spec["axis"]
            rate_hz, fname = float(spec["rate_hz"]), spec["file"]
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{mpath}: malformed channel entry {spec!r}") from e
        if modality not in MODALITIES:
            raise ValidationError(f"channel {cid}: unknown modality {modality!r}")
        if placement not in PLACEMENTS:
            raise ValidationError(f"channel {cid}: unknown placement {placement!r}")
        file = path / fname
        if not file.is_file():
            raise FormatError(f"{mpath}: channel {cid} references missing file {fname}")
        data = _read_channel_csv(file)
        t, values, gap = data[:, 0], data[:, 1], data[:, 2]
        expected_t = np.arange(len(t)) / rate_hz
        if len(t) and not np.allclose(t, expected_t, rtol=0, atol=0.5 / rate_hz):
            raise ValidationError(f"channel {cid}: timestamps inconsistent with rate_hz={rate_hz:g}")
        channels.append(ChannelSeries(cid, modality, placement, axis, rate_hz, values, gap != 0))

    s = Session(subject, scenario, round_index, tuple(channels), movements, duration_s)
    report = validate_session(s)
    if report:
        raise ValidationError(f"{path}: invalid session\n{report}")
    return s
