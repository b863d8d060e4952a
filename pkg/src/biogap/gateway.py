"""Host-side session service: runs a device over a simulated link, records
the delivered packet stream verbatim, reassembles per-stream statistics,
applies display-only filtering, and classifies EEG windows host-side.

Recordings are append-only and store packets exactly as delivered, so loss
and flag evidence survives and replay is a straight re-decode. Display
transforms (filters, scaling, decimation) never touch recorded bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import afe as afe_mod
from . import dsp, proto, ssvep
from .errors import ConfigurationError, ValidationError
from .runtime import TICK_HZ, DeviceSim

FILE_MAGIC = b"BGRC"
FILE_VERSION = 1

DISPLAY_MAX_RATE = 60.0  # points per second per channel sent to a viewer


# ---------------------------------------------------------------------------
# recording container

@dataclass
class Recording:
    """Session header plus the delivered packets, byte-for-byte."""

    header: dict
    packets: list = field(default_factory=list)

    def append(self, packet: bytes) -> None:
        self.packets.append(bytes(packet))

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header, sort_keys=True).encode()
        out = bytearray()
        out += FILE_MAGIC
        out += FILE_VERSION.to_bytes(2, "big")
        out += len(head).to_bytes(4, "big")
        out += head
        for pkt in self.packets:
            out += len(pkt).to_bytes(4, "big")
            out += pkt
        return bytes(out)

    @staticmethod
    def from_bytes(data: bytes) -> "Recording":
        if data[:4] != FILE_MAGIC:
            raise ConfigurationError("not a recording file (bad magic)")
        version = int.from_bytes(data[4:6], "big")
        if version != FILE_VERSION:
            raise ConfigurationError(f"unsupported recording version {version}")
        hlen = int.from_bytes(data[6:10], "big")
        header = json.loads(data[10:10 + hlen])
        packets = []
        pos = 10 + hlen
        while pos < len(data):
            if pos + 4 > len(data):
                raise ConfigurationError("truncated packet length field")
            plen = int.from_bytes(data[pos:pos + 4], "big")
            pos += 4
            if pos + plen > len(data):
                raise ConfigurationError("truncated packet body")
            packets.append(bytes(data[pos:pos + plen]))
            pos += plen
        return Recording(header=header, packets=packets)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @staticmethod
    def load(path: str) -> "Recording":
        with open(path, "rb") as fh:
            return Recording.from_bytes(fh.read())


def make_header(device: DeviceSim, link=None, seed: int | None = None,
                duration_s: float | None = None) -> dict:
    """Deterministic session header; no wall-clock fields so identical runs
    serialize identically."""
    cfg = device.afe
    header = {
        "magic": "biogap-recording",
        "version": FILE_VERSION,
        "preset": device.preset.name,
        "tick_hz": TICK_HZ,
        "start_time": 0.0,
        "afe": {"sample_rate": cfg.sample_rate, "gain": cfg.gain,
                "channels_enabled": cfg.channels_enabled,
                "resolution": cfg.resolution, "supply": cfg.supply,
                "noise_enabled": cfg.noise_enabled},
        "streams": {
            str(proto.STREAM_EXG): {"kind": device.preset.exg_modality,
                                    "rate": cfg.sample_rate,
                                    "channels": len(cfg.enabled_channels())},
        },
    }
    if device.preset.has_ppg:
        header["streams"][str(proto.STREAM_PPG)] = {"kind": "ppg", "rate": 100, "channels": 1}
    if device.preset.has_imu:
        header["streams"][str(proto.STREAM_IMU)] = {"kind": "acc", "rate": 400, "channels": 3}
    if seed is not None:
        header["seed"] = int(seed)
    if duration_s is not None:
        header["duration_s"] = float(duration_s)
    if link is not None:
        header["link"] = {"capacity_bps": link.capacity_bps,
                          "dropout_schedule": [list(w) for w in link.dropout_schedule],
                          "latency_ms": link.latency_ms}
    return header


# ---------------------------------------------------------------------------
# per-stream accounting

@dataclass
class StreamStats:
    packets: int = 0
    frames: int = 0
    gaps: int = 0             # missing seq numbers observed
    overflow_flags: int = 0   # packets carrying the buffer-overflow flag
    saturated: int = 0
    crc_errors: int = 0
    last_seq: int | None = None

    def ingest(self, pkt: proto.Packet) -> None:
        self.packets += 1
        self.frames += pkt.frame_count
        if pkt.flags & proto.FLAG_OVERFLOW:
            self.overflow_flags += 1
        if pkt.flags & proto.FLAG_SATURATION:
            self.saturated += 1
        if self.last_seq is not None:
            self.gaps += (pkt.seq - self.last_seq - 1) % 2 ** 32
        self.last_seq = pkt.seq


@dataclass
class Session:
    id: str
    preset: str
    start_tick: int
    recording_path: str | None
    stream_stats: dict
    link_stats: proto.LinkStats | None
    config: dict

    def stats(self, stream_id: int) -> StreamStats:
        return self.stream_stats.setdefault(stream_id, StreamStats())

    @property
    def total_gaps(self) -> int:
        return sum(s.gaps for s in self.stream_stats.values())


def ingest_packets(packets) -> dict:
    """Per-stream stats from an iterable of raw packets; corrupt ones are counted."""
    stats: dict = {}
    for raw in packets:
        try:
            pkt = proto.decode(raw)
        except proto.ProtocolError:
            stats.setdefault(-1, StreamStats()).crc_errors += 1
            continue
        stats.setdefault(pkt.stream_id, StreamStats()).ingest(pkt)
    return stats


# ---------------------------------------------------------------------------
# live session driver

def run_session(preset: str = "headband", link: proto.LinkModel | None = None,
                duration_s: float = 10.0, seed: int = 0, mode: str = "streaming",
                out_path: str | None = None, step_s: float = 0.05,
                commands: list | None = None, session_id: str = "s0",
                device_kwargs: dict | None = None, buffer_bits: int | None = None):
    """Drive one device for duration_s of simulated time over the link.

    commands is an optional [(t_s, name, kwargs)] schedule applied at step
    boundaries. Returns (Session, Recording); the recording holds every
    DELIVERED packet in delivery order.
    """
    link = link or proto.LinkModel()
    link.validate()
    if duration_s <= 0:
        raise ValidationError("duration_s", "must be > 0")
    device = DeviceSim(preset, seed=seed,
                       horizon_s=max(duration_s, 1.0),
                       **(device_kwargs or {}))
    start = device.command("set_mode", mode=mode)
    if not start.ok:
        raise ConfigurationError(f"cannot enter mode {mode!r}: {start.reason}")

    header = make_header(device, link=link, seed=seed, duration_s=duration_s)
    recording = Recording(header=header)
    session = Session(id=session_id, preset=preset, start_tick=device.tick,
                      recording_path=out_path, stream_stats={}, link_stats=None,
                      config=dict(header["afe"]))

    buffer = proto.DeviceBuffer(capacity_bits=buffer_bits) if buffer_bits else None
    lsession = proto.LinkSession(link, buffer=buffer)
    schedule = sorted(commands or [], key=lambda c: c[0])
    n_steps = int(round(duration_s / step_s))
    t = 0.0
    for _ in range(n_steps):
        while schedule and schedule[0][0] <= t:
            _, name, kwargs = schedule.pop(0)
            device.command(name, **(kwargs or {}))
        for pt, pkt in device.step(step_s):
            lsession.enqueue(pt, pkt)
        t += step_s
        for _dt, raw in lsession.poll(t):
            recording.append(raw)
    for pt, pkt in device.flush():
        lsession.enqueue(max(pt, t), pkt)
    for _dt, raw in lsession.drain():
        recording.append(raw)

    session.stream_stats = ingest_packets(recording.packets)
    session.link_stats = lsession.stats
    session.config = {"sample_rate": device.afe.sample_rate, "gain": device.afe.gain,
                      "channels_enabled": device.afe.channels_enabled}
    if out_path is not None:
        recording.save(out_path)
    return session, recording


def replay(recording: Recording):
    """Decode the stored packets in order; yields proto.Packet objects."""
    for raw in recording.packets:
        yield proto.decode(raw)


# ---------------------------------------------------------------------------
# display pipeline (never touches the recording)

class LiveView:
    """Causal display filtering, scaling, and decimation for one ExG stream."""

    def __init__(self, sample_rate: float, n_channels: int, gain: int = 6):
        self.sample_rate = float(sample_rate)
        self.n_channels = int(n_channels)
        self.gain = int(gain)
        self.scale = 1.0
        self.chain_spec: list = []
        self._states: list = []
        self.last_error: str | None = None
        self.decim = max(1, int(np.ceil(self.sample_rate / DISPLAY_MAX_RATE)))
        self._decim_phase = 0

    def set_scale(self, scale: float) -> bool:
        if not np.isfinite(scale) or scale <= 0:
            self.last_error = "scale must be a positive finite number"
            return False
        self.scale = float(scale)
        return True

    def set_chain(self, chain: list) -> bool:
        """Install a new filter chain; an invalid spec keeps the previous one."""
        try:
            cascades = [self._design_stage(stage) for stage in chain]
        except (ValidationError, dsp.DesignError, ConfigurationError,
                KeyError, TypeError, ValueError) as exc:
            self.last_error = str(exc)
            return False
        self.chain_spec = list(chain)
        self._states = [dsp.SosState(sos, self.n_channels) for sos in cascades]
        self.last_error = None
        return True

    def _design_stage(self, stage: dict):
        kind = stage["kind"]
        if kind == "notch":
            return dsp.design_notch(float(stage["freq"]), self.sample_rate,
                                    q=float(stage.get("q", 30.0)),
                                    order=int(stage.get("order", 2)))
        spec = dsp.FilterSpec(kind=kind, order=int(stage.get("order", 4)),
                              sample_rate=self.sample_rate,
                              f_lo=stage.get("f_lo"), f_hi=stage.get("f_hi"))
        return dsp.design_butterworth(spec)

    def process_codes(self, codes: np.ndarray) -> np.ndarray:
        """Codes (n_channels, n) -> display-ready uV frames, filtered and scaled."""
        x = afe_mod.codes_to_uv(codes, self.gain)
        for state in self._states:
            x = state.process(x)
        return x * self.scale

    def decimate(self, frames: np.ndarray):
        """Keep every decim-th column, phase-continuous across calls."""
        n = frames.shape[1]
        idx = np.arange(self._decim_phase, n, self.decim)
        self._decim_phase = (self._decim_phase - n) % self.decim
        return frames[:, idx]


# ---------------------------------------------------------------------------
# host-side classification

class HostClassifier:
    """Window the reconstructed EEG stream and classify each window.

    The same instance serves live use (feed packets as they arrive) and
    offline use (feed a whole recording); decisions depend only on packet
    content, so both paths agree bit-for-bit.
    """

    def __init__(self, sample_rate: float, n_channels: int, gain: int,
                 window_s: float = 3.0, hop_s: float = 0.5,
                 candidates=ssvep.DEFAULT_CANDIDATES,
                 threshold: float = ssvep.DECISION_THRESHOLD):
        self.sample_rate = float(sample_rate)
        self.n_channels = int(n_channels)
        self.gain = int(gain)
        self.window_n = int(round(window_s * sample_rate))
        self.hop_n = int(round(hop_s * sample_rate))
        self.candidates = tuple(candidates)
        self.threshold = threshold
        self._buf = np.empty((self.n_channels, 0))
        self._consumed = 0  # samples already dropped from the buffer head
        self._next_edge = self.window_n
        self.results: list = []

    def feed(self, packet: proto.Packet) -> list:
        """Ingest one ExG packet; returns any newly completed decisions."""
        if packet.stream_id != proto.STREAM_EXG or packet.frame_count == 0:
            return []
        codes = packet.codes(self.n_channels)
        self._buf = np.concatenate([self._buf, afe_mod.codes_to_uv(codes, self.gain)],
                                   axis=1)
        fresh = []
        while self._consumed + self._buf.shape[1] >= self._next_edge:
            s0 = self._next_edge - self.window_n - self._consumed
            window = self._buf[:, s0:s0 + self.window_n]
            result = ssvep.classify_window(window, self.sample_rate,
                                           candidates=self.candidates,
                                           threshold=self.threshold)
            t_s = self._next_edge / self.sample_rate
            fresh.append((t_s, result))
            self._next_edge += self.hop_n
            drop = self._next_edge - self.window_n - self._consumed
            if drop > 0:
                self._buf = self._buf[:, drop:]
                self._consumed += drop
        self.results.extend(fresh)
        return fresh


def host_classify(recording: Recording, window_s: float = 3.0, hop_s: float = 0.5,
                  candidates=ssvep.DEFAULT_CANDIDATES,
                  threshold: float = ssvep.DECISION_THRESHOLD) -> list:
    """Offline classification over a whole recording; [(t_s, NccaResult)].

    Uses the identical incremental path a live session uses.
    """
    afe_info = recording.header["afe"]
    n_ch = bin(afe_info["channels_enabled"]).count("1")
    clf = HostClassifier(afe_info["sample_rate"], n_ch, afe_info["gain"],
                         window_s=window_s, hop_s=hop_s,
                         candidates=candidates, threshold=threshold)
    for pkt in replay(recording):
        clf.feed(pkt)
    return clf.results


# ---------------------------------------------------------------------------
# alarms

@dataclass
class Alarm:
    t_s: float
    kind: str      # "low_battery" | "link_loss"
    detail: str


class AlarmMonitor:
    """Edge-triggered alarms: one event per condition episode."""

    def __init__(self, battery_threshold: float = 0.15, link_timeout_s: float = 1.5):
        self.battery_threshold = battery_threshold
        self.link_timeout_s = link_timeout_s
        self._battery_low = False
        self._link_lost = False
        self._last_packet_t: float | None = None
        self.alarms: list = []

    def saw_packet(self, t_s: float) -> None:
        self._last_packet_t = t_s
        self._link_lost = False

    def update(self, t_s: float, battery_level: float) -> list:
        fresh = []
        low = battery_level < self.battery_threshold
        if low and not self._battery_low:
            fresh.append(Alarm(t_s, "low_battery",
                               f"battery at {battery_level * 100:.0f}%"))
        self._battery_low = low

        if self._last_packet_t is not None:
            lost = (t_s - self._last_packet_t) > self.link_timeout_s
            if lost and not self._link_lost:
                fresh.append(Alarm(t_s, "link_loss",
                                   f"no packets for {t_s - self._last_packet_t:.2f} s"))
            self._link_lost = lost
        self.alarms.extend(fresh)
        return fresh


# ---------------------------------------------------------------------------
# export

@dataclass
class ExportResult:
    files: dict        # logical name -> path
    skipped: int = 0   # corrupt packets dropped with a warning count


def _csv_stream_rows(decoded, stream_id: int, n_channels: int, to_units):
    rows = []
    skipped = 0
    for pkt in decoded:
        if pkt.stream_id != stream_id or pkt.frame_count == 0 \
                or pkt.flags & proto.FLAG_EDGE:
            continue
        try:
            codes = pkt.codes(n_channels)
        except proto.ProtocolError:
            skipped += 1
            continue
        values = to_units(codes)
        for j in range(codes.shape[1]):
            rows.append((pkt.timestamp_ticks, j, values[:, j]))
    return rows, skipped


def export(recording: Recording, fmt: str, out_base: str) -> ExportResult:
    """Write a recording as CSV traces or as the raw packet stream.

    csv: one file per stream with physical units (ExG in uV reconstructed as
    code x full_scale / (gain x 2^23)); corrupt packets are skipped, counted.
    packets: the verbatim length-prefixed packet stream; re-importable
    byte-identically.
    """
    if fmt == "packets":
        path = out_base + ".packets"
        with open(path, "wb") as fh:
            for raw in recording.packets:
                fh.write(len(raw).to_bytes(4, "big"))
                fh.write(raw)
        return ExportResult(files={"packets": path})
    if fmt != "csv":
        raise ConfigurationError(f"unknown export format {fmt!r}")

    afe_info = recording.header["afe"]
    gain = afe_info["gain"]
    rate = afe_info["sample_rate"]
    n_exg = bin(afe_info["channels_enabled"]).count("1")
    files = {}
    skipped = 0
    decoded = []
    for raw in recording.packets:
        try:
            decoded.append(proto.decode(raw))
        except proto.ProtocolError:
            skipped += 1

    specs = [("exg", proto.STREAM_EXG, n_exg, rate,
              lambda codes: afe_mod.codes_to_uv(codes, gain)),
             ("ppg", proto.STREAM_PPG, 1, 100, np.asarray),
             ("imu", proto.STREAM_IMU, 3, 400, np.asarray)]
    for name, sid, n_ch, srate, to_units in specs:
        rows, skip = _csv_stream_rows(decoded, sid, n_ch, to_units)
        skipped += skip
        if not rows:
            continue
        path = f"{out_base}_{name}.csv"
        stride = TICK_HZ // srate
        with open(path, "w") as fh:
            fh.write("tick," + ",".join(f"ch{i}" for i in range(n_ch)) + "\n")
            for t0, j, vals in rows:
                tick = t0 + j * stride
                fh.write(str(tick) + "," + ",".join(repr(float(v)) for v in vals) + "\n")
        files[name] = path
    return ExportResult(files=files, skipped=skipped)


def import_packets(path: str) -> list:
    """Inverse of export(..., 'packets'): the raw packet list."""
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        plen = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        out.append(bytes(data[pos:pos + plen]))
        pos += plen
    return out
