"""Wire format and link model: framing, CRC, conservation, backpressure."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as orc
from biogap import proto


def make_packet(n_ch=4, n_frames=25, seq=0, stream=proto.STREAM_EXG,
                t0=0, flags=0, seed=0):
    rng = np.random.default_rng(seed)
    codes = rng.integers(proto.CODE_LO, proto.CODE_HI + 1, size=(n_ch, n_frames))
    return proto.encode(codes, stream, seq, t0, flags), codes


def test_header_layout_is_as_documented():
    raw, _ = make_packet(n_ch=1, n_frames=2, seq=0x01020304, t0=0x1122334455,
                         stream=proto.STREAM_PPG, flags=proto.FLAG_SATURATION)
    assert raw[0:2] == b"\xb1\x0a"
    assert raw[2] == 1
    assert raw[3] == proto.STREAM_PPG
    assert raw[4] == proto.FLAG_SATURATION
    assert int.from_bytes(raw[5:9], "big") == 0x01020304
    assert int.from_bytes(raw[9:17], "big") == 0x1122334455
    assert int.from_bytes(raw[17:19], "big") == 2
    assert len(raw) == 19 + 2 * 3 + 4


def test_crc_matches_independent_bitwise_crc32():
    raw, _ = make_packet(seed=3)
    assert int.from_bytes(raw[-4:], "big") == orc.crc32_bitwise(raw[:-4])


def test_roundtrip_recovers_codes_exactly():
    raw, codes = make_packet(n_ch=3, n_frames=17, seq=9, t0=12345, seed=1)
    pkt = proto.decode(raw)
    assert pkt.seq == 9 and pkt.timestamp_ticks == 12345
    assert pkt.frame_count == 17
    assert np.array_equal(pkt.codes(3), codes)


def test_negative_codes_survive_two_complement():
    codes = np.array([[-1, -(2 ** 23), 2 ** 23 - 1, 0]])
    pkt = proto.decode(proto.encode(codes, 1, 0, 0))
    assert np.array_equal(pkt.codes(1), codes)


def test_out_of_range_code_rejected():
    with pytest.raises(proto.FramingError):
        proto.encode(np.array([[2 ** 23]]), 1, 0, 0)


def test_every_single_bit_flip_is_caught():
    raw, _ = make_packet(n_ch=2, n_frames=4, seed=7)
    for byte_i in range(len(raw)):
        for bit in range(8):
            corrupted = bytearray(raw)
            corrupted[byte_i] ^= 1 << bit
            with pytest.raises(proto.ProtocolError):
                proto.decode(bytes(corrupted))


def test_truncation_detected_at_every_length():
    raw, _ = make_packet(n_ch=1, n_frames=3)
    for cut in range(len(raw)):
        with pytest.raises(proto.ProtocolError):
            proto.decode(raw[:cut])


def test_bad_magic_and_version_are_distinct_errors():
    raw, _ = make_packet()
    with pytest.raises(proto.BadMagic):
        proto.decode(b"\x00" + raw[1:])
    wrong_ver = bytearray(raw)
    wrong_ver[2] = 9
    wrong_ver[-4:] = __import__("zlib").crc32(bytes(wrong_ver[:-4])).to_bytes(4, "big")
    with pytest.raises(proto.BadVersion):
        proto.decode(bytes(wrong_ver))


def test_set_flags_patches_and_recrcs():
    raw, codes = make_packet()
    patched = proto.set_flags(raw, proto.FLAG_OVERFLOW)
    pkt = proto.decode(patched)
    assert pkt.flags == proto.FLAG_OVERFLOW
    assert np.array_equal(pkt.codes(4), codes)


@settings(max_examples=200, deadline=None)
@given(n_ch=st.integers(1, 16), n_frames=st.integers(0, 60),
       seq=st.integers(0, 2 ** 32 - 1), t0=st.integers(0, 2 ** 48),
       stream=st.sampled_from([proto.STREAM_EXG, proto.STREAM_PPG,
                               proto.STREAM_IMU]),
       flags=st.sampled_from([0, proto.FLAG_SATURATION, proto.FLAG_OVERFLOW,
                              proto.FLAG_SATURATION | proto.FLAG_OVERFLOW]),
       seed=st.integers(0, 2 ** 16))
def test_roundtrip_property(n_ch, n_frames, seq, t0, stream, flags, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(proto.CODE_LO, proto.CODE_HI + 1, size=(n_ch, n_frames))
    raw = proto.encode(codes, stream, seq, t0, flags)
    pkt = proto.decode(raw)
    assert (pkt.stream_id, pkt.seq, pkt.timestamp_ticks, pkt.flags) == \
        (stream, seq, t0, flags)
    if n_frames:
        assert np.array_equal(pkt.codes(n_ch), codes)
    else:
        assert pkt.payload == b""


def test_decision_payload_roundtrip():
    scores = [(7.5, 0.31, 0.95), (11.5, 0.72, 1.83), (13.5, 0.30, 1.02),
              (15.5, 0.28, 0.97)]
    raw = proto.pack_decision(11.5, scores)
    out = proto.unpack_decision(raw)
    assert out["decision"] == pytest.approx(11.5)
    assert len(out["scores"]) == 4
    for got, (f, c, n) in zip(out["scores"], scores):
        assert got["freq"] == pytest.approx(f)
        assert got["cca"] == pytest.approx(c, abs=5e-4)
        assert got["ncca"] == pytest.approx(n, abs=5e-4)


def test_decision_none_roundtrip():
    raw = proto.pack_decision(None, [(7.5, 0.2, 0.9)])
    assert proto.unpack_decision(raw)["decision"] is None


# ---------------------------------------------------------------------------
# link model

def timed_stream(n, dt, size_bytes=100, start=0.0):
    # real packets sized exactly size_bytes (header 19 + payload + crc 4);
    # the edge flag exempts the payload from the frame-length rule
    payload = bytes(size_bytes - 23)
    return [(start + i * dt,
             proto.encode_blob(payload, 1, proto.STREAM_EDGE, i, 0,
                               flags=proto.FLAG_EDGE))
            for i in range(n)]


def test_conservation_no_dropout():
    link = proto.LinkModel(capacity_bps=1e6)
    timeline, session = proto.transmit(timed_stream(500, 0.01), link)
    assert session.stats.sent == 500
    assert session.stats.delivered == 500
    assert session.stats.dropped == 0
    assert len(timeline) == 500


def test_delivery_respects_serialization_rate():
    # 100-byte packets at 8 kbit/s take 0.1 s each on the wire
    link = proto.LinkModel(capacity_bps=8000.0)
    timeline, _ = proto.transmit(timed_stream(5, 0.0), link)
    times = [t for t, _ in timeline]
    for i, t in enumerate(times):
        assert t == pytest.approx(0.1 * (i + 1), abs=1e-9)


def test_latency_shifts_delivery():
    base = proto.LinkModel(capacity_bps=1e6)
    lagged = proto.LinkModel(capacity_bps=1e6, latency_ms=50.0)
    t_base, _ = proto.transmit(timed_stream(3, 0.01), base)
    t_lag, _ = proto.transmit(timed_stream(3, 0.01), lagged)
    for (ta, _), (tb, _) in zip(t_base, t_lag):
        assert tb - ta == pytest.approx(0.050)


def test_dropout_window_blocks_wire_not_buffer():
    # generous buffer: nothing may be lost, everything late-delivered
    link = proto.LinkModel(capacity_bps=1e6, dropout_schedule=[(0.5, 1.0)])
    timeline, session = proto.transmit(timed_stream(100, 0.01), link)
    assert session.stats.dropped == 0
    assert session.stats.delivered == 100
    in_window = [t for t, _ in timeline if 0.5 < t < 1.0]
    assert not in_window


def test_overflow_evicts_and_counts():
    link = proto.LinkModel(capacity_bps=1e6, dropout_schedule=[(0.0, 10.0)])
    buf = proto.DeviceBuffer(capacity_bits=100 * 8 * 10)  # ten packets
    timeline, session = proto.transmit(timed_stream(25, 0.01), link, buf)
    assert session.stats.sent == 25
    assert session.stats.dropped == 15
    assert buf.overflow_count == 15
    assert session.stats.delivered + session.stats.dropped == 25


def test_overflow_flag_rides_next_delivered_packet():
    link = proto.LinkModel(capacity_bps=1e6, dropout_schedule=[(0.0, 0.5)])
    buf = proto.DeviceBuffer(capacity_bits=2000)
    session = proto.LinkSession(link, buf)
    raw, _ = make_packet(n_ch=1, n_frames=25)
    for i in range(8):
        session.enqueue(i * 0.01, proto.set_flags(raw, 0))
    delivered = session.drain()
    assert session.stats.dropped > 0
    flagged = [proto.decode(p).flags & proto.FLAG_OVERFLOW for _, p in delivered]
    assert any(flagged)


@settings(max_examples=40, deadline=None)
@given(capacity=st.floats(5e4, 2e6),
       n=st.integers(1, 200),
       dt=st.floats(0.001, 0.05),
       windows=st.lists(st.tuples(st.floats(0, 3), st.floats(0.01, 1.0)),
                        max_size=3))
def test_conservation_property(capacity, n, dt, windows):
    sched = []
    cursor = 0.0
    for start, width in sorted(windows):
        s = max(start, cursor)
        sched.append((s, s + width))
        cursor = s + width + 1e-6
    link = proto.LinkModel(capacity_bps=capacity, dropout_schedule=sched)
    buf = proto.DeviceBuffer(capacity_bits=60 * 8 * 100)
    timeline, session = proto.transmit(timed_stream(n, dt, size_bytes=60), link, buf)
    assert session.stats.sent == n
    assert session.stats.delivered + session.stats.dropped == n
    assert session.stats.delivered == len(timeline)
    assert buf.overflow_count == session.stats.dropped
    # delivery order and spacing: nondecreasing, at least size/capacity apart
    times = [t for t, _ in timeline]
    min_gap = 60 * 8 / capacity
    for a, b in zip(times, times[1:]):
        assert b - a >= min_gap - 1e-9


def test_exg_stream_fits_the_link_with_zero_backlog():
    # 16 ch x 500 SPS x 24 bit = 192 kbit/s payload over 1.4 Mbit/s
    link = proto.LinkModel(capacity_bps=1.4e6)
    session = proto.LinkSession(link)
    rng = np.random.default_rng(0)
    n_packets, fpp = 400, 25     # 20 s of 50 ms packets
    for i in range(n_packets):
        codes = rng.integers(proto.CODE_LO, proto.CODE_HI + 1, size=(16, fpp))
        t = i * 0.05
        session.enqueue(t, proto.encode(codes, proto.STREAM_EXG, i, int(t * 32000)))
        session.poll(t)
    assert session.stats.in_buffer <= 1
    assert session.buffer.occupancy_bits <= 2 * (19 + 16 * fpp * 3 + 4) * 8


def test_enqueue_requires_monotonic_time():
    session = proto.LinkSession(proto.LinkModel())
    raw, _ = make_packet()
    session.enqueue(1.0, raw)
    with pytest.raises(Exception):
        session.enqueue(0.5, raw)


def test_link_validation():
    with pytest.raises(Exception):
        proto.LinkModel(capacity_bps=0).validate()
    with pytest.raises(Exception):
        proto.LinkModel(dropout_schedule=[(1.0, 0.5)]).validate()
    with pytest.raises(Exception):
        proto.LinkModel(dropout_schedule=[(0.0, 1.0), (0.5, 2.0)]).validate()
