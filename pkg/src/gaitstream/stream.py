"""Real-time data layer: framed sensor ingestion, causal featurization, alerts.

Wire format is one JSON object per line. The first line is a handshake::

    {"channels": [{"ch": "rol_r_gyro_z", "modality": "GYRO", "rate_hz": 200}, ...], "model": "model.json"}

followed by frames::

    {"seq": 17, "t": 0.35, "ch": "rol_r_gyro_z", "v": [0.1, 0.2], "prox": 2.4}

``t`` is the time of the first sample in ``v``. Alerts are written one per
line as ``{"t": ..., "kind": "collision_risk", "conf": ...}``.
"""
from __future__ import annotations

import json
import logging
import math
import socketserver
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import ConfigError, ProtocolError, RejectedFrame
from .features import feature_block, feature_names, window_length
from .pipeline import PreprocessConfig
from .session import MODALITIES, Session

log = logging.getLogger(__name__)

MAX_PENDING_GROUPS = 64


@dataclass(frozen=True)
class StreamFrame:
    seq: int
    t_s: float
    channel_id: str
    values: tuple
    proximity_m: float | None = None

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "t": self.t_s, "ch": self.channel_id, "v": list(self.values),
                           "prox": self.proximity_m})

    @classmethod
    def from_json(cls, line: str) -> "StreamFrame":
        try:
            d = json.loads(line)
            prox = d.get("prox")
            return cls(int(d["seq"]), float(d["t"]), str(d["ch"]), tuple(float(v) for v in d["v"]),
                       None if prox is None else float(prox))
        except (ValueError, KeyError, TypeError) as e:
            raise ProtocolError(f"malformed frame: {e}") from e


@dataclass(frozen=True)
class AlertEvent:
    t_s: float
    kind: str
    confidence: float
    window_span: tuple

    def to_json(self) -> str:
        return json.dumps({"t": self.t_s, "kind": self.kind, "conf": self.confidence})


@dataclass(frozen=True)
class ChannelSpec:
    channel_id: str
    modality: str
    rate_hz: float
    placement: str = "unspecified"
    axis: str = "none"

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        try:
            cid, modality, rate = str(d["ch"]), str(d["modality"]), float(d["rate_hz"])
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad channel declaration {d!r}") from e
        if modality not in MODALITIES:
            raise ProtocolError(f"channel {cid}: unknown modality {modality!r}")
        if not rate > 0:
            raise ProtocolError(f"channel {cid}: rate must be positive")
        axis = d.get("axis")
        if axis is None:
            axis = cid[-1] if modality != "EMG" and cid[-2:] in ("_x", "_y", "_z") else "none"
        return cls(cid, modality, rate, str(d.get("placement", "unspecified")), str(axis))

    def to_dict(self) -> dict:
        return {"ch": self.channel_id, "modality": self.modality, "rate_hz": self.rate_hz,
                "placement": self.placement, "axis": self.axis}


@dataclass
class StreamWindow:
    """One completed window of one channel; ``index`` k starts at k * hop."""
    channel_id: str
    index: int
    start_s: float
    samples: np.ndarray


class ChannelBuffer:
    """Causal filter plus a window-length ring buffer for one channel."""

    def __init__(self, spec: ChannelSpec, cfg: PreprocessConfig, window_ms=200, hop_ms=100):
        self.spec = spec
        self.width = window_length(window_ms, spec.rate_hz)
        self.step = window_length(hop_ms, spec.rate_hz)
        coeffs = None
        if spec.modality == "EMG":
            coeffs = dsp.design_bandpass(cfg.emg_low_hz, cfg.emg_high_hz, cfg.filter_order, spec.rate_hz)
        elif cfg.imu_lowpass_hz is not None:
            coeffs = dsp.design_lowpass(cfg.imu_lowpass_hz, cfg.filter_order, spec.rate_hz)
        self.filter = dsp.FilterState(coeffs) if coeffs is not None else None
        self.ring = np.zeros(self.width)
        self.last_seq: int | None = None
        self.next_index: int | None = None  # absolute sample index expected next
        self.filled = 0  # contiguous samples since the last reset
        self.origin = 0
        self.resets = 0

    def reset(self) -> None:
        self.filled = 0
        self.resets += 1
        if self.filter is not None:
            self.filter.reset()

    def push(self, first_index: int, values: np.ndarray) -> list:
        if self.next_index is not None and first_index != self.next_index:
            log.info("channel %s: gap at sample %d, window accumulator reset", self.spec.channel_id, first_index)
            self.reset()
        if self.filled == 0:
            self.origin = first_index
        y = self.filter.process(values) if self.filter is not None else values
        n = len(y)
        # windows ending in this frame whose start is on the hop grid and after the last reset
        lo = max(first_index + 1 - self.width, self.origin)
        out = []
        for start in range(_ceil_to(lo, self.step), first_index + n + 1 - self.width, self.step):
            idx = np.arange(start, start + self.width)
            w = self.ring[idx % self.width]
            new = idx >= first_index
            w[new] = y[idx[new] - first_index]
            out.append(StreamWindow(self.spec.channel_id, start // self.step, start / self.spec.rate_hz, w))
        tail = np.arange(max(first_index, first_index + n - self.width), first_index + n)
        self.ring[tail % self.width] = y[tail - first_index]
        self.filled += n
        self.next_index = first_index + n
        return out


def _ceil_to(x: int, step: int) -> int:
    return -(-x // step) * step


@dataclass
class Prediction:
    index: int
    start_s: float
    end_s: float
    label: str
    confidence: float
    features: np.ndarray = field(repr=False)


@dataclass
class AlertPolicy:
    """Warn when the user keeps walking straight towards a close obstacle.

    An alert fires when the last ``k_consecutive`` predictions are "forward"
    with confidence >= ``min_confidence`` and the latest proximity is below
    ``proximity_threshold_m``. After firing, the policy is disarmed until a
    non-forward prediction arrives or the proximity recovers.
    """
    k_consecutive: int = 5
    min_confidence: float = 0.7
    proximity_threshold_m: float = 1.0
    streak: int = 0
    armed: bool = True
    span_start: float | None = None

    def update(self, label: str, confidence: float, proximity_m: float | None, t_s: float,
               window_start_s: float | None = None) -> AlertEvent | None:
        if label != "forward":
            self.streak, self.armed = 0, True
            return None
        if proximity_m is not None and proximity_m >= self.proximity_threshold_m:
            self.armed = True
        if confidence >= self.min_confidence:
            if self.streak == 0:
                self.span_start = window_start_s if window_start_s is not None else t_s
            self.streak += 1
        else:
            self.streak = 0
        close = proximity_m is not None and proximity_m < self.proximity_threshold_m
        if self.armed and close and self.streak >= self.k_consecutive:
            self.armed = False
            return AlertEvent(t_s, "collision_risk", float(confidence), (self.span_start, t_s))
        return None


def evaluate_alert(policy: AlertPolicy, predictions, proximities) -> list:
    """Run ``policy`` over scripted (label, confidence) pairs and proximities."""
    alerts = []
    for i, ((label, conf), prox) in enumerate(zip(predictions, proximities)):
        ev = policy.update(label, conf, prox, t_s=float(i))
        if ev is not None:
            alerts.append(ev)
    return alerts


class StreamState:
    """All per-connection state: channel buffers, pending window groups, policy."""

    def __init__(self, channels, model=None, cfg: PreprocessConfig | None = None, policy: AlertPolicy | None = None,
                 window_ms=200, hop_ms=100, ssc_threshold=0.0):
        cfg = cfg or PreprocessConfig.causal()
        if cfg.filter_mode != "causal":
            raise ConfigError("streaming requires the causal filter mode")
        if cfg.outlier_sigma is not None:
            raise ConfigError("outlier removal needs the whole series and is not available online")
        specs = [c if isinstance(c, ChannelSpec) else ChannelSpec.from_dict(c) for c in channels]
        if len({s.channel_id for s in specs}) != len(specs):
            raise ConfigError("duplicate channel ids in handshake")
        self.cfg = cfg
        self.window_ms, self.hop_ms, self.ssc_threshold = window_ms, hop_ms, ssc_threshold
        self.buffers = {s.channel_id: ChannelBuffer(s, cfg, window_ms, hop_ms) for s in specs}
        self.policy = policy or AlertPolicy()
        self.model = model
        self.rejected = 0
        self.proximity_m: float | None = None
        self.pending: dict = {}
        self.predictions: list = []
        self.alerts: list = []
        self._needed = list(self.buffers)
        self._columns = None
        self._modalities = "fused"
        if model is not None:
            self._bind_model(model)

    def _bind_model(self, model) -> None:
        specs = {cid: b.spec for cid, b in self.buffers.items()}
        wanted = list(model.feature_names_)
        needed = []
        for name in wanted:
            prefix = name.rsplit(".", 1)[0]
            if prefix in specs:
                ids = [prefix]
            else:
                ids = [f"{prefix}_{a}" for a in "xyz"]
            for cid in ids:
                if cid not in specs:
                    raise ConfigError(f"model feature {name!r} needs channel {cid!r}, which the stream lacks")
                if cid not in needed:
                    needed.append(cid)
        self._needed = [cid for cid in specs if cid in needed]
        names = feature_names([specs[c] for c in self._needed], "fused")
        try:
            self._columns = np.array([names.index(n) for n in wanted])
        except ValueError as e:
            raise ConfigError(f"model features not computable from stream channels: {e}") from e

    def ingest_frame(self, f: StreamFrame) -> list:
        """Filter and buffer one frame; returns the channel windows it completed."""
        buf = self.buffers.get(f.channel_id)
        if buf is None:
            raise ProtocolError(f"unknown channel {f.channel_id!r}")
        if buf.last_seq is not None and f.seq <= buf.last_seq:
            self.rejected += 1
            raise RejectedFrame(f"channel {f.channel_id}: seq {f.seq} not after {buf.last_seq}")
        values = np.asarray(f.values, dtype=np.float64)
        if len(values) == 0 or not np.all(np.isfinite(values)) or not math.isfinite(f.t_s):
            self.rejected += 1
            raise RejectedFrame(f"channel {f.channel_id}: empty or non-finite frame {f.seq}")
        first = int(round(f.t_s * buf.spec.rate_hz))
        if buf.next_index is not None and first < buf.next_index:
            self.rejected += 1
            raise RejectedFrame(f"channel {f.channel_id}: frame {f.seq} overlaps earlier samples")
        buf.last_seq = f.seq
        if f.proximity_m is not None:
            self.proximity_m = f.proximity_m
        return buf.push(first, values)

    def offer(self, f: StreamFrame) -> list:
        """Ingest a frame and classify every window group it completes."""
        done = []
        for w in self.ingest_frame(f):
            if w.channel_id not in self._needed:
                continue
            group = self.pending.setdefault(w.index, {})
            group[w.channel_id] = w
            if len(group) == len(self._needed):
                del self.pending[w.index]
                done.append(self.classify_online(group))
        if len(self.pending) > MAX_PENDING_GROUPS:
            for k in sorted(self.pending)[:-MAX_PENDING_GROUPS]:
                del self.pending[k]
        return done

    def features_for(self, group: dict) -> np.ndarray:
        chans = []
        for cid in self._needed:
            s = self.buffers[cid].spec
            chans.append(_WindowView(cid, s.modality, s.placement, s.axis, s.rate_hz, group[cid].samples[None, :]))
        row = feature_block(chans, 1, "fused", self.window_ms, self.hop_ms, self.ssc_threshold)[0]
        return row if self._columns is None else row[self._columns]

    def classify_online(self, group: dict) -> Prediction:
        w0 = next(iter(group.values()))
        x = self.features_for(group)
        end_s = w0.start_s + self.window_ms / 1000.0
        if self.model is None:
            pred = Prediction(w0.index, w0.start_s, end_s, "", float("nan"), x)
        else:
            proba = self.model.predict_proba(x[None, :])[0]
            j = int(np.argmax(proba))
            pred = Prediction(w0.index, w0.start_s, end_s, str(self.model.classes_[j]), float(proba[j]), x)
            ev = self.policy.update(pred.label, pred.confidence, self.proximity_m, end_s, w0.start_s)
            if ev is not None:
                self.alerts.append(ev)
        self.predictions.append(pred)
        return pred


@dataclass
class _WindowView:
    channel_id: str
    modality: str
    placement: str
    axis: str
    rate_hz: float
    matrix: np.ndarray


# ---------------------------------------------------------------------------
# replay and serving


def session_frames(session: Session, chunk: int = 256, channels=None, proximity=None):
    """Frames for a stored session, interleaved in time order.

    ``chunk`` is the number of samples per frame; ``proximity`` is an optional
    callable mapping a frame time to an obstacle distance.
    """
    if chunk < 1:
        raise ValueError("chunk must be at least one sample")
    chans = [c for c in session.channels if channels is None or c.channel_id in channels]
    pieces = []
    for order, c in enumerate(chans):
        for i in range(0, len(c.samples), chunk):
            pieces.append((i / c.rate_hz, order, c, i))
    pieces.sort(key=lambda p: (p[0], p[1]))
    for seq, (t, _, c, i) in enumerate(pieces):
        prox = None if proximity is None else proximity(t)
        yield StreamFrame(seq, t, c.channel_id, tuple(c.samples[i:i + chunk].tolist()), prox)


def handshake_for(session: Session, model_path=None, channels=None) -> dict:
    specs = [ChannelSpec(c.channel_id, c.modality, c.rate_hz, c.placement, c.axis).to_dict()
             for c in session.channels if channels is None or c.channel_id in channels]
    return {"channels": specs, "model": None if model_path is None else str(model_path)}


def replay(session: Session, sink, chunk: int = 256, speed: float = 0.0, model_path=None, proximity=None) -> int:
    """Write handshake and frames for ``session`` to the text sink ``sink``.

    ``speed`` 1.0 paces frames in real time, 10.0 ten times faster, 0 as fast
    as possible. Returns the number of frames written.
    """
    sink.write(json.dumps(handshake_for(session, model_path)) + "\n")
    t0 = time.monotonic()
    n = 0
    for f in session_frames(session, chunk, proximity=proximity):
        if speed > 0:
            delay = f.t_s / speed - (time.monotonic() - t0)
            if delay > 0:
                time.sleep(delay)
        sink.write(f.to_json() + "\n")
        n += 1
    sink.flush()
    return n


def serve_lines(lines, alert_sink, model_loader=None, cfg=None, policy=None, prediction_sink=None) -> StreamState:
    """Run one connection: handshake then frames, writing alerts to ``alert_sink``."""
    it = iter(lines)
    try:
        first = next(it)
    except StopIteration:
        raise ProtocolError("empty stream: handshake expected") from None
    try:
        hs = json.loads(first)
        chans = hs["channels"]
    except (ValueError, KeyError, TypeError) as e:
        raise ProtocolError(f"bad handshake: {e}") from e
    model = None
    if hs.get("model"):
        if model_loader is None:
            from .learn.gbdt import load_model as model_loader
        model = model_loader(hs["model"])
    state = StreamState(chans, model, cfg, policy)
    for line in it:
        if not line.strip():
            continue
        try:
            preds = state.offer(StreamFrame.from_json(line))
        except RejectedFrame as e:
            log.warning("%s", e)
            continue
        for p in preds:
            if prediction_sink is not None:
                prediction_sink.write(json.dumps({"t": p.end_s, "label": p.label, "conf": p.confidence}) + "\n")
        while state.alerts:
            alert_sink.write(state.alerts.pop(0).to_json() + "\n")
            alert_sink.flush()
    return state


def make_tcp_server(host: str, port: int, alert_sink, cfg=None, policy_factory=AlertPolicy):
    """Threaded TCP server; each connection gets its own :class:`StreamState`.

    Alerts go both back to the client and to ``alert_sink``.
    """

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            lines = (raw.decode("utf-8") for raw in self.rfile)
            out = _Tee(self.wfile, alert_sink)
            try:
                serve_lines(lines, out, cfg=cfg, policy=policy_factory())
            except (ProtocolError, ConfigError) as e:
                self.wfile.write((json.dumps({"error": str(e)}) + "\n").encode())

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    return Server((host, port), Handler)


class _Tee:
    def __init__(self, binary, text):
        self.binary, self.text = binary, text

    def write(self, s: str) -> None:
        self.binary.write(s.encode("utf-8"))
        if self.text is not None:
            self.text.write(s)

    def flush(self) -> None:
        self.binary.flush()
        if self.text is not None:
            self.text.flush()


def stream_session(session: Session, model=None, chunk: int = 256, cfg=None, policy=None, proximity=None,
                   model_channels_only: bool = False) -> StreamState:
    """Feed a session through a fresh :class:`StreamState` in memory."""
    specs = [ChannelSpec(c.channel_id, c.modality, c.rate_hz, c.placement, c.axis) for c in session.channels]
    state = StreamState(specs, model, cfg, policy)
    for f in session_frames(session, chunk, proximity=proximity):
        state.offer(f)
    return state


__all__ = [
    "AlertEvent", "AlertPolicy", "ChannelBuffer", "ChannelSpec", "Prediction", "StreamFrame", "StreamState",
    "StreamWindow", "evaluate_alert", "handshake_for", "make_tcp_server", "replay", "serve_lines",
    "session_frames", "stream_session",
]
