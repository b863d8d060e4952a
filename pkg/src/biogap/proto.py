"""Bit-exact packet framing and a constrained-link simulation.

Wire layout, offsets in bytes, all integers big-endian:
  0-1   magic 0xB1 0x0A
  2     version (1)
  3     stream id
  4     flags: bit0 processed payload, bit1 saturation seen, bit2 buffer overflow
  5-8   sequence number, wrapping u32, per-stream
  9-16  timestamp in sample-clock ticks of the first frame, u64
  17-18 frame count, u16
  19-   payload (24-bit two's-complement codes, frame-major, or opaque bytes
        when bit0 is set)
  last4 CRC-32 over everything before it

The link model is a fluid serializer: a capacity in bits/s, dropout windows
where nothing moves, a fixed latency, and a device-side ring buffer that
drops oldest-first on overflow and tags the next delivered packet.
"""
from __future__ import annotations

import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MAGIC = b"\xb1\x0a"
VERSION = 1
HEADER_LEN = 19
CRC_LEN = 4
MIN_PACKET = HEADER_LEN + CRC_LEN
MAX_FRAMES = 0xFFFF

FLAG_EDGE = 0x01
FLAG_SATURATION = 0x02
FLAG_OVERFLOW = 0x04

# Stream identifiers shared by device and host.
STREAM_EXG = 1
STREAM_PPG = 2
STREAM_IMU = 3
STREAM_EDGE = 4
STREAM_CONTACT = 5
STREAM_CONFIG = 6

CODE_LO = -(2 ** 23)
CODE_HI = 2 ** 23 - 1

DEFAULT_BUFFER_BITS = 128 * 2 ** 20


class ProtocolError(ValueError):
    pass


class BadMagic(ProtocolError):
    pass


class BadVersion(ProtocolError):
    pass


class BadCrc(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


class FramingError(ProtocolError):
    pass


@dataclass
class Packet:
    stream_id: int
    seq: int
    timestamp_ticks: int
    frame_count: int
    payload: bytes
    flags: int = 0
    version: int = VERSION

    def codes(self, n_channels: int) -> np.ndarray:
        return unpack_frames(self.payload, n_channels)


def pack_frames(codes) -> bytes:
    """Frame-major 24-bit packing: all channels of frame 0, then frame 1, ..."""
    arr = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if arr.size and (arr.min() < CODE_LO or arr.max() > CODE_HI):
        raise FramingError("sample codes outside 24-bit range")
    flat = arr.T.reshape(-1) & 0xFFFFFF
    out = np.empty((flat.size, 3), dtype=np.uint8)
    out[:, 0] = flat >> 16
    out[:, 1] = (flat >> 8) & 0xFF
    out[:, 2] = flat & 0xFF
    return out.tobytes()


def unpack_frames(payload: bytes, n_channels: int) -> np.ndarray:
    """Inverse of pack_frames; returns int32 codes shaped (n_channels, n_frames)."""
    if n_channels < 1:
        raise FramingError("need at least one channel to unpack")
    if len(payload) % (3 * n_channels):
        raise FramingError(f"payload of {len(payload)} bytes does not hold "
                           f"whole {n_channels}-channel frames")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    vals = (raw[:, 0] << 16) | (raw[:, 1] << 8) | raw[:, 2]
    vals = vals - ((vals >> 23) & 1) * (1 << 24)
    return vals.reshape(-1, n_channels).T.astype(np.int32)


def encode(frames, stream_id: int, seq: int, t0_ticks: int, flags: int = 0) -> bytes:
    """Serialize sample codes (channels x frames) into one packet."""
    arr = np.atleast_2d(np.asarray(frames, dtype=np.int64))
    n_frames = arr.shape[1] if arr.size else 0
    return encode_blob(pack_frames(arr) if arr.size else b"", n_frames,
                       stream_id, seq, t0_ticks, flags)


def encode_blob(payload: bytes, item_count: int, stream_id: int, seq: int,
                t0_ticks: int, flags: int = 0) -> bytes:
    if not 0 <= item_count <= MAX_FRAMES:
        raise FramingError(f"frame count {item_count} exceeds the 16-bit field")
    if not 0 <= stream_id <= 0xFF:
        raise FramingError(f"stream id {stream_id} out of byte range")
    header = bytearray()
    header += MAGIC
    header.append(VERSION)
    header.append(stream_id)
    header.append(flags & 0xFF)
    header += int(seq % 2 ** 32).to_bytes(4, "big")
    header += int(t0_ticks).to_bytes(8, "big")
    header += int(item_count).to_bytes(2, "big")
    body = bytes(header) + payload
    return body + zlib.crc32(body).to_bytes(4, "big")


def decode(data: bytes) -> Packet:
    """Parse one complete packet; raises a distinct error per failure kind."""
    if len(data) < MIN_PACKET:
        raise Truncated(f"{len(data)} bytes is below the {MIN_PACKET}-byte minimum")
    if data[0:2] != MAGIC:
        raise BadMagic(f"magic {data[0:2].hex()} != {MAGIC.hex()}")
    if data[2] != VERSION:
        raise BadVersion(f"version {data[2]} unsupported")
    body, crc_bytes = data[:-CRC_LEN], data[-CRC_LEN:]
    if zlib.crc32(body) != int.from_bytes(crc_bytes, "big"):
        raise BadCrc("checksum mismatch")
    flags = data[4]
    frame_count = int.from_bytes(data[17:19], "big")
    payload = bytes(data[HEADER_LEN:-CRC_LEN])
    if not flags & FLAG_EDGE:
        if frame_count == 0 and payload:
            raise FramingError("zero frames but non-empty payload")
        if frame_count:
            if len(payload) % frame_count or (len(payload) // frame_count) % 3:
                raise FramingError("payload length inconsistent with frame count")
    return Packet(stream_id=data[3], seq=int.from_bytes(data[5:9], "big"),
                  timestamp_ticks=int.from_bytes(data[9:17], "big"),
                  frame_count=frame_count, payload=payload,
                  flags=flags, version=data[2])


def set_flags(packet_bytes: bytes, flags: int) -> bytes:
    """Return the packet with its flag byte replaced and the CRC recomputed."""
    if len(packet_bytes) < MIN_PACKET:
        raise Truncated("cannot patch a truncated packet")
    body = bytearray(packet_bytes[:-CRC_LEN])
    body[4] = flags & 0xFF
    return bytes(body) + zlib.crc32(bytes(body)).to_bytes(4, "big")


def pack_decision(decision_freq, scores) -> bytes:
    """Compact classifier-output payload: centi-Hz frequencies, milli-unit scores.

    scores is an iterable of (freq_hz, cca, ncca). Keeping this binary holds
    the processed-output stream far below the raw-stream byte rate.
    """
    scores = list(scores)
    out = bytearray()
    out += int(round((decision_freq or 0.0) * 100)).to_bytes(2, "big")
    out.append(len(scores))
    for freq, c, nc in scores:
        out += int(round(freq * 100)).to_bytes(2, "big")
        out += min(0xFFFF, max(0, int(round(c * 1000)))).to_bytes(2, "big")
        out += min(0xFFFF, max(0, int(round(nc * 1000)))).to_bytes(2, "big")
    return bytes(out)


def unpack_decision(payload: bytes) -> dict:
    if len(payload) < 3:
        raise FramingError("decision payload below minimum size")
    raw = int.from_bytes(payload[0:2], "big")
    n = payload[2]
    if len(payload) < 3 + 6 * n:
        raise FramingError("decision payload shorter than its score count")
    scores = []
    for i in range(n):
        o = 3 + 6 * i
        scores.append({"freq": int.from_bytes(payload[o:o + 2], "big") / 100.0,
                       "cca": int.from_bytes(payload[o + 2:o + 4], "big") / 1000.0,
                       "ncca": int.from_bytes(payload[o + 4:o + 6], "big") / 1000.0})
    return {"decision": raw / 100.0 if raw else None, "scores": scores}


@dataclass
class LinkModel:
    capacity_bps: float = 1.4e6
    dropout_schedule: list = field(default_factory=list)
    latency_ms: float = 0.0

    def validate(self) -> None:
        if self.capacity_bps <= 0:
            raise ValidationError("capacity_bps", "must be > 0")
        last_end = None
        for start, end in sorted(self.dropout_schedule):
            if end <= start:
                raise ValidationError("dropout_schedule", f"({start}, {end}) is empty or inverted")
            if last_end is not None and start < last_end:
                raise ValidationError("dropout_schedule", "windows overlap")
            last_end = end


@dataclass
class DeviceBuffer:
    capacity_bits: int = DEFAULT_BUFFER_BITS
    occupancy_bits: int = 0
    overflow_count: int = 0


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0

    @property
    def in_buffer(self) -> int:
        return self.sent - self.delivered - self.dropped


class LinkSession:
    """Drives one link + device buffer on an explicit simulated clock.

    enqueue() must be called in nondecreasing time order; poll(t) advances the
    fluid serializer to t and returns packets whose delivery time has passed.
    """

    def __init__(self, link: LinkModel, buffer: DeviceBuffer | None = None):
        link.validate()
        self.link = link
        self.buffer = buffer if buffer is not None else DeviceBuffer()
        self.stats = LinkStats()
        self._queue = deque()        # (enqueue_t, bytes) waiting in the device buffer
        self._current = None         # [bytes, active seconds remaining]
        self._cursor = 0.0
        self._ready = deque()        # (delivery_t, bytes) finished, sorted by time
        self._overflow_pending = False
        self._last_enqueue = -float("inf")
        self._windows = sorted(link.dropout_schedule)

    def _active_end(self, start: float, need: float) -> float:
        """Wall time at which `need` seconds of link uptime elapse, from `start`."""
        t = start
        for d0, d1 in self._windows:
            if t >= d1:
                continue
            if t < d0:
                avail = d0 - t
                if need <= avail:
                    return t + need
                need -= avail
            t = d1
        return t + need

    def _active_between(self, a: float, b: float) -> float:
        up = b - a
        for d0, d1 in self._windows:
            lo, hi = max(a, d0), min(b, d1)
            if hi > lo:
                up -= hi - lo
        return up

    def _advance(self, t: float) -> None:
        if t <= self._cursor:
            return
        while True:
            if self._current is None:
                if not self._queue:
                    self._cursor = max(self._cursor, t)
                    return
                enq_t, pkt = self._queue[0]
                start = max(self._cursor, enq_t)
                if start >= t:
                    self._cursor = max(self._cursor, t)
                    return
                self._queue.popleft()
                self._cursor = start
                self._current = [pkt, len(pkt) * 8 / self.link.capacity_bps]
            pkt, remaining = self._current
            finish = self._active_end(self._cursor, remaining)
            if finish > t:
                self._current[1] -= self._active_between(self._cursor, t)
                self._cursor = t
                return
            self._cursor = finish
            self._current = None
            self.buffer.occupancy_bits -= len(pkt) * 8
            if self._overflow_pending:
                pkt = set_flags(pkt, decode(pkt).flags | FLAG_OVERFLOW)
                self._overflow_pending = False
            self._ready.append((finish + self.link.latency_ms / 1000.0, pkt))
            self.stats.delivered += 1

    def enqueue(self, t: float, packet: bytes) -> None:
        if t < self._last_enqueue:
            raise ValidationError("enqueue", "packets must arrive in nondecreasing time order")
        self._last_enqueue = t
        self._advance(t)
        bits = len(packet) * 8
        self.stats.sent += 1
        while (self.buffer.occupancy_bits + bits > self.buffer.capacity_bits
               and self._queue):
            _enq, oldest = self._queue.popleft()
            self.buffer.occupancy_bits -= len(oldest) * 8
            self.buffer.overflow_count += 1
            self.stats.dropped += 1
            self._overflow_pending = True
        if self.buffer.occupancy_bits + bits > self.buffer.capacity_bits:
            # nothing left to evict but the in-flight packet; shed the arrival
            self.buffer.overflow_count += 1
            self.stats.dropped += 1
            self._overflow_pending = True
            return
        self._queue.append((t, packet))
        self.buffer.occupancy_bits += bits

    def poll(self, t: float) -> list:
        self._advance(t)
        out = []
        while self._ready and self._ready[0][0] <= t:
            out.append(self._ready.popleft())
        return out

    def drain(self) -> list:
        """Deliver everything still queued, ignoring further wall-time limits."""
        return self.poll(float("inf"))


def transmit(timed_packets, link: LinkModel, buffer: DeviceBuffer | None = None):
    """One-shot convenience: feed (time, bytes) pairs through a fresh session.

    Returns (timeline, session) where timeline is the delivered
    (delivery_time, bytes) list in order.
    """
    session = LinkSession(link, buffer)
    timeline = []
    for t, pkt in timed_packets:
        session.enqueue(t, pkt)
        timeline.extend(session.poll(t))
    timeline.extend(session.drain())
    return timeline, session
