"""Sliding-window segmentation and per-window EMG/IMU features.

Feature kernels operate on C-contiguous ``(n_windows, n_samples)`` matrices so
the offline dataset builder and the streaming service share one code path and
produce bit-identical values.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, LabelError
from .session import BODY_SEGMENTS, ChannelSeries, Session

log = logging.getLogger(__name__)

EMG_FEATURES = ("rms", "variance", "mav", "ssc")
IMU_AXIS_FEATURES = ("rms", "mean", "std", "jerk")
TASKS = ("suit", "rollator", "movement")
LABEL_COLUMNS = ("subject_id", "scenario", "round_index", "movement_label", "window_start_s", "label")


def window_length(window_ms: float, rate_hz: float) -> int:
    return int(round(window_ms * rate_hz / 1000.0))


def n_windows(n_samples: int, width: int, step: int) -> int:
    return 0 if n_samples < width else (n_samples - width) // step + 1


@dataclass(frozen=True)
class Window:
    channel_id: str
    start_s: float
    samples: np.ndarray
    rate_hz: float


def window_matrix(x, width: int, step: int) -> np.ndarray:
    """Contiguous ``(n_windows, width)`` copy of the strided windows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    k = n_windows(len(x), width, step)
    if k == 0:
        return np.empty((0, width))
    view = np.lib.stride_tricks.sliding_window_view(x, width)[::step][:k]
    return np.ascontiguousarray(view)


def window_starts(k: int, step: int, rate_hz: float) -> np.ndarray:
    return np.arange(k) * step / rate_hz


def segment_windows(c: ChannelSeries, window_ms: float = 200, hop_ms: float = 100) -> list:
    width = window_length(window_ms, c.rate_hz)
    step = window_length(hop_ms, c.rate_hz)
    if width < 4:
        raise ValueError(f"window of {window_ms} ms at {c.rate_hz} Hz is shorter than 4 samples")
    if c.gap_mask.any():
        raise ValueError(f"channel {c.channel_id} has gaps; interpolate first")
    mat = window_matrix(c.samples, width, step)
    starts = window_starts(len(mat), step, c.rate_hz)
    return [Window(c.channel_id, float(t), row, c.rate_hz) for t, row in zip(starts, mat)]


# ---------------------------------------------------------------------------
# feature kernels


def emg_feature_matrix(m: np.ndarray, ssc_threshold: float = 0.0) -> np.ndarray:
    """Columns: rms, variance, mav, ssc."""
    rms = np.sqrt(np.mean(m * m, axis=1))
    var = np.var(m, axis=1)
    mav = np.mean(np.abs(m), axis=1)
    mid = m[:, 1:-1]
    ssc = np.count_nonzero((mid - m[:, :-2]) * (mid - m[:, 2:]) > ssc_threshold, axis=1)
    return np.column_stack([rms, var, mav, ssc.astype(np.float64)])


def imu_axis_feature_matrix(m: np.ndarray, rate_hz: float) -> np.ndarray:
    """Columns: rms, mean, std, jerk."""
    rms = np.sqrt(np.mean(m * m, axis=1))
    mean = np.mean(m, axis=1)
    std = np.std(m, axis=1)
    d = np.diff(m, axis=1) * rate_hz
    jerk = np.sqrt(np.mean(d * d, axis=1))
    return np.column_stack([rms, mean, std, jerk])


def sma_vector(mx: np.ndarray, my: np.ndarray, mz: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(mx) + np.abs(my) + np.abs(mz), axis=1)


def extract_emg_features(w: Window, ssc_threshold: float = 0.0) -> dict:
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < 3:
        raise ValueError("EMG window needs at least 3 samples")
    row = emg_feature_matrix(x[None, :], ssc_threshold)[0]
    return dict(zip(EMG_FEATURES, row.tolist()))


def extract_imu_features(ws, rate_hz: float) -> dict:
    """``ws`` is an (x, y, z) triple of windows or arrays."""
    if len(ws) != 3:
        raise AlignmentError("expected three axis windows")
    arrs = [np.asarray(getattr(w, "samples", w), dtype=np.float64) for w in ws]
    if len({len(a) for a in arrs}) != 1:
        raise AlignmentError(f"axis window lengths differ: {[len(a) for a in arrs]}")
    starts = {getattr(w, "start_s", None) for w in ws}
    if len(starts) > 1:
        raise AlignmentError(f"axis windows not time-aligned: {sorted(starts)}")
    out = {}
    for axis, a in zip("xyz", arrs):
        row = imu_axis_feature_matrix(a[None, :], rate_hz)[0]
        for name, v in zip(IMU_AXIS_FEATURES, row.tolist()):
            out[f"{name}_{axis}"] = v
    out["sma"] = float(sma_vector(*(a[None, :] for a in arrs))[0])
    return out


# ---------------------------------------------------------------------------
# channel layout


def imu_groups(channels) -> list:
    """Group ACC/GYRO channels into (group_id, rate_hz, [x, y, z] channels)."""
    groups: dict = {}
    for c in channels:
        if c.modality not in ("ACC", "GYRO"):
            continue
        gid = c.channel_id[:-2] if c.channel_id.endswith(("_x", "_y", "_z")) else f"{c.placement}_{c.modality.lower()}"
        groups.setdefault((gid, c.placement, c.modality), {})[c.axis] = c
    out = []
    for (gid, _, _), axes in groups.items():
        if set(axes) != {"x", "y", "z"}:
            raise AlignmentError(f"IMU group {gid} lacks a full x/y/z triple: {sorted(axes)}")
        trio = [axes["x"], axes["y"], axes["z"]]
        if len({c.rate_hz for c in trio}) != 1:
            raise AlignmentError(f"IMU group {gid} mixes sample rates")
        out.append((gid, trio[0].rate_hz, trio))
    return out


def feature_names(channels, modalities: str = "emg") -> list:
    names = []
    if modalities in ("emg", "fused"):
        for c in channels:
            if c.modality == "EMG":
                names += [f"{c.channel_id}.{f}" for f in EMG_FEATURES]
    if modalities in ("imu", "fused"):
        for gid, _, trio in imu_groups(channels):
            for c in trio:
                names += [f"{c.channel_id}.{f}" for f in IMU_AXIS_FEATURES]
            names.append(f"{gid}.sma")
    return names


def feature_block(channels, n_rows: int, modalities: str, window_ms=200, hop_ms=100, ssc_threshold=0.0):
    """Feature matrix for the first ``n_rows`` aligned windows of ``channels``.

    ``channels`` maps onto a sequence of objects exposing ``channel_id``,
    ``modality``, ``placement``, ``axis``, ``rate_hz`` and either ``samples``
    (a full series) or ``matrix`` (pre-windowed rows).
    """
    cols = []

    def mat(c):
        m = getattr(c, "matrix", None)
        if m is None:
            m = window_matrix(c.samples, window_length(window_ms, c.rate_hz), window_length(hop_ms, c.rate_hz))
        return m[:n_rows]

    if modalities in ("emg", "fused"):
        for c in channels:
            if c.modality == "EMG":
                cols.append(emg_feature_matrix(mat(c), ssc_threshold))
    if modalities in ("imu", "fused"):
        for _, rate, trio in imu_groups(channels):
            ms = [mat(c) for c in trio]
            for m in ms:
                cols.append(imu_axis_feature_matrix(m, rate))
            cols.append(sma_vector(*ms)[:, None])
    if not cols:
        return np.empty((n_rows, 0))
    return np.hstack(cols)


# ---------------------------------------------------------------------------
# feature table


@dataclass
class FeatureVector:
    names: tuple
    values: np.ndarray
    subject_id: str
    scenario: int
    round_index: int
    movement_label: str
    window_start_s: float
    label: object


@dataclass
class FeatureTable:
    """Column-oriented table of window features with per-row labels and provenance."""

    X: np.ndarray
    feature_names: tuple
    y: np.ndarray
    subject_id: np.ndarray
    scenario: np.ndarray
    round_index: np.ndarray
    movement_label: np.ndarray
    window_start_s: np.ndarray
    task: str = ""
    dropped: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.y), len(self.feature_names))
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature table contains NaN/Inf")

    def __len__(self):
        return len(self.y)

    @property
    def schema(self) -> tuple:
        return self.feature_names

    @property
    def rows(self) -> list:
        return [
            FeatureVector(self.feature_names, self.X[i], str(self.subject_id[i]), int(self.scenario[i]),
                          int(self.round_index[i]), str(self.movement_label[i]),
                          float(self.window_start_s[i]), self.y[i].item())
            for i in range(len(self))
        ]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)

    def subset(self, index) -> "FeatureTable":
        index = np.asarray(index)
        return FeatureTable(
            self.X[index], self.feature_names, self.y[index], self.subject_id[index], self.scenario[index],
            self.round_index[index], self.movement_label[index], self.window_start_s[index], self.task, 0,
            dict(self.provenance),
        )

    def select_features(self, names) -> "FeatureTable":
        pos = {n: i for i, n in enumerate(self.feature_names)}
        idx = [pos[n] for n in names]
        t = self.subset(np.arange(len(self)))
        t.X = np.ascontiguousarray(self.X[:, idx])
        t.feature_names = tuple(names)
        return t

    @classmethod
    def concat(cls, tables) -> "FeatureTable":
        tables = list(tables)
        if not tables:
            raise ValueError("nothing to concatenate")
        names = tables[0].feature_names
        for t in tables[1:]:
            if t.feature_names != names:
                raise ValueError("feature tables have different schemas")
        return cls(
            np.vstack([t.X for t in tables]), names,
            np.concatenate([t.y for t in tables]),
            np.concatenate([t.subject_id for t in tables]),
            np.concatenate([t.scenario for t in tables]),
            np.concatenate([t.round_index for t in tables]),
            np.concatenate([t.movement_label for t in tables]),
            np.concatenate([t.window_start_s for t in tables]),
            tables[0].task, sum(t.dropped for t in tables), dict(tables[0].provenance),
        )

    def to_csv(self, path=None, header_comments=()) -> str:
        """Write features then label columns; ``#`` comment lines carry provenance."""
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.feature_names) + list(LABEL_COLUMNS))
        for i in range(len(self)):
            w.writerow(
                [format(v, ".17g") for v in self.X[i].tolist()]
                + [self.subject_id[i], int(self.scenario[i]), int(self.round_index[i]),
                   self.movement_label[i], format(float(self.window_start_s[i]), ".17g"), _label_str(self.y[i])]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, task: str = "") -> "FeatureTable":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        nf = len(header) - len(LABEL_COLUMNS)
        if nf < 0 or tuple(header[nf:]) != LABEL_COLUMNS:
            raise ValueError(f"{path}: label columns must be last: {LABEL_COLUMNS}")
        rows = list(reader)
        X = np.array([[float(v) for v in r[:nf]] for r in rows], dtype=np.float64).reshape(len(rows), nf)
        labels = [_parse_label(r[-1]) for r in rows]
        return cls(
            X, header[:nf], np.array(labels),
            np.array([r[nf] for r in rows]), np.array([int(r[nf + 1]) for r in rows]),
            np.array([int(r[nf + 2]) for r in rows]), np.array([r[nf + 3] for r in rows]),
            np.array([float(r[nf + 4]) for r in rows]), task,
        )


def _label_str(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def _parse_label(s: str):
    return {"true": True, "false": False}.get(s, s)


# ---------------------------------------------------------------------------
# dataset assembly


def default_modalities(task: str) -> str:
    return "imu" if task == "movement" else "emg"


def movement_labels(session: Session, starts: np.ndarray, window_s: float) -> np.ndarray:
    """Majority time-overlap label per window; ties go to turning, no overlap to ''."""
    if not session.movements:
        raise LabelError(f"session {session.key} has no movement segments")
    fwd = np.zeros(len(starts))
    turn = np.zeros(len(starts))
    ends = starts + window_s
    for m in session.movements:
        ov = np.clip(np.minimum(ends, m.end_s) - np.maximum(starts, m.start_s), 0.0, None)
        if m.label == "turning":
            turn += ov
        else:
            fwd += ov
    labels = np.where(turn >= fwd, "turning", "forward").astype("<U7")
    labels[(turn + fwd) <= 0] = ""
    return labels


def session_features(session: Session, modalities: str, window_ms=200, hop_ms=100, ssc_threshold=0.0):
    """Features and window start times for one session."""
    chans = [c for c in session.channels
             if (c.modality == "EMG" and modalities in ("emg", "fused"))
             or (c.modality != "EMG" and modalities in ("imu", "fused"))]
    if not chans:
        raise ValueError(f"session {session.key} has no channels for modality set {modalities!r}")
    for c in chans:
        if c.gap_mask.any():
            raise ValueError(f"session {session.key}: channel {c.channel_id} has gaps; preprocess first")
    counts = [n_windows(len(c.samples), window_length(window_ms, c.rate_hz), window_length(hop_ms, c.rate_hz))
              for c in chans]
    k = min(counts)
    X = feature_block(chans, k, modalities, window_ms, hop_ms, ssc_threshold)
    ref = chans[0]
    starts = window_starts(k, window_length(hop_ms, ref.rate_hz), ref.rate_hz)
    return X, feature_names(chans, modalities), starts


def build_dataset(sessions, task: str, modalities: str | None = None, window_ms=200, hop_ms=100,
                  ssc_threshold=0.0) -> FeatureTable:
    """One row per aligned window across ``sessions``, labelled for ``task``.

    Movement windows that overlap no segment are dropped and counted in
    ``FeatureTable.dropped``.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    modalities = modalities or default_modalities(task)
    parts = []
    names = None
    dropped = 0
    for s in sessions:
        X, nm, starts = session_features(s, modalities, window_ms, hop_ms, ssc_threshold)
        if names is None:
            names = nm
        elif nm != names:
            raise ValueError(f"session {s.key} yields a different feature schema")
        k = len(starts)
        if s.movements:
            mv = movement_labels(s, starts, window_ms / 1000.0)
        elif task == "movement":
            raise LabelError(f"session {s.key} has no movement segments")
        else:
            mv = np.full(k, "", dtype="<U7")
        keep = np.ones(k, dtype=bool)
        if task == "movement":
            keep = mv != ""
            dropped += int(k - keep.sum())
            y = mv
        elif task == "suit":
            y = np.full(k, s.scenario.suit)
        else:
            y = np.full(k, s.scenario.rollator)
        parts.append((X[keep], y[keep], s, mv[keep], starts[keep]))
    if names is None:
        raise ValueError("no sessions given")
    if dropped:
        log.info("dropped %d window(s) overlapping no movement segment", dropped)
    return FeatureTable(
        np.vstack([p[0] for p in parts]) if parts else np.empty((0, len(names))),
        names,
        np.concatenate([p[1] for p in parts]),
        np.concatenate([np.full(len(p[1]), p[2].subject.subject_id, dtype=object) for p in parts]).astype(str),
        np.concatenate([np.full(len(p[1]), p[2].scenario.scenario_id) for p in parts]),
        np.concatenate([np.full(len(p[1]), p[2].round_index) for p in parts]),
        np.concatenate([p[3] for p in parts]),
        np.concatenate([p[4] for p in parts]),
        task,
        dropped,
    )


def segment_intensity(s: Session, window_ms=200, hop_ms=100) -> dict:
    """Mean windowed EMG RMS per body segment, as a time series per placement."""
    out = {}
    for placement in BODY_SEGMENTS:
        chans = [c for c in s.channels if c.modality == "EMG" and c.placement == placement]
        if not chans:
            warnings.warn(f"no EMG channels at placement {placement!r}; omitted", stacklevel=2)
            continue
        series = []
        for c in chans:
            m = window_matrix(c.samples, window_length(window_ms, c.rate_hz), window_length(hop_ms, c.rate_hz))
            series.append(np.sqrt(np.mean(m * m, axis=1)))
        k = min(len(r) for r in series)
        out[placement] = np.mean([r[:k] for r in series], axis=0)
    return out
