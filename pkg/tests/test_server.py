"""Console channel: message protocol, display backpressure, alarms, and the
websocket adapter."""
import hashlib

import pytest

from biogap import proto
from biogap.server import (MAX_FRAME_MESSAGES_PER_ADVANCE, SCHEMA_VERSION,
                           GatewayServer, create_app)
from biogap.synth import SsvepSpec


def fresh(**kw):
    return GatewayServer(preset=kw.pop("preset", "headband"),
                         seed=kw.pop("seed", 0), **kw)


def msgs_of(kind, messages):
    return [m for m in messages if m["type"] == kind]


# ---------------------------------------------------------------------------
# connect and envelopes

def test_connect_sends_hello_then_status():
    srv = fresh()
    first, second = srv.connect()
    assert first["type"] == "hello"
    assert first["schema"] == SCHEMA_VERSION
    assert first["preset"] == "headband"
    assert first["tick_hz"] == 32000
    assert set(first["streams"]) == {"1", "2", "3"}
    assert first["afe"]["sample_rate"] == 500
    assert second["type"] == "status"
    assert second["mode"] == "idle"
    assert second["t"] == 0.0
    assert second["link"] == {"sent": 0, "delivered": 0, "dropped": 0}
    assert second["display_dropped"] == 0


def test_unknown_message_type_nacks():
    srv = fresh()
    out = srv.handle({"type": "teleport", "id": 9})
    assert out == [{"type": "ack", "id": 9, "ok": False,
                    "reason": "unknown message type 'teleport'"}]


def test_malformed_command_nacks():
    srv = fresh()
    out = srv.handle({"type": "command", "id": 1})
    assert not out[0]["ok"]
    out = srv.handle({"type": "command", "id": 2, "name": "start", "args": 7})
    assert not out[0]["ok"]


def test_command_ack_echoes_id():
    srv = fresh()
    out = srv.handle({"type": "command", "id": "c-17", "name": "start"})
    assert out == [{"type": "ack", "id": "c-17", "ok": True,
                    "reason": None, "data": None}]
    assert srv.device.mode == "streaming"


def test_query_command_returns_data():
    srv = fresh()
    out = srv.handle({"type": "command", "id": 3, "name": "query_power"})
    assert out[0]["ok"]
    assert out[0]["data"]["total_mW"] == pytest.approx(32.8)


def test_advance_validation():
    srv = fresh()
    for bad in (0, -1.0, 11.0, "fast", None):
        out = srv.handle({"type": "advance", "dt": bad})
        assert len(out) == 1 and not out[0]["ok"]


# ---------------------------------------------------------------------------
# set_rate round trip

def test_rejected_set_rate_keeps_control_unchanged():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    out = srv.handle({"type": "command", "id": 5, "name": "set_rate",
                      "args": {"value": 333}})
    assert len(out) == 1            # a nack carries no status update
    assert not out[0]["ok"]
    assert out[0]["reason"] == "invalid_argument"
    status = srv.handle({"type": "status"})[0]
    assert status["sample_rate"] == 500


def test_accepted_set_rate_applies_on_next_advance():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    srv.handle({"type": "advance", "dt": 0.2})
    out = srv.handle({"type": "command", "id": 6, "name": "set_rate",
                      "args": {"value": 1000}})
    assert out[0]["ok"]
    assert out[1]["type"] == "status"
    assert out[1]["sample_rate"] == 500     # staged; applies at the task boundary
    advanced = srv.handle({"type": "advance", "dt": 0.2})
    statuses = msgs_of("status", advanced)
    assert statuses[-1]["sample_rate"] == 1000
    assert srv.view.sample_rate == 1000.0   # display follows the config packet
    assert srv.view.decim == 17             # ceil(1000 / 60)


# ---------------------------------------------------------------------------
# frames and display backpressure

def test_advance_renders_frames_within_budget():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    out = srv.handle({"type": "advance", "dt": 5.0})
    frames = msgsof = msgs_of("frames", out)
    assert len(frames) == MAX_FRAME_MESSAGES_PER_ADVANCE
    status = msgs_of("status", out)[-1]
    assert status["display_dropped"] > 0
    assert status["link"]["delivered"] > len(msgsof)
    streams = {m["stream"] for m in frames}
    assert "exg" in streams
    exg = next(m for m in frames if m["stream"] == "exg")
    assert exg["rate"] == pytest.approx(500 / 9)
    assert len(exg["data"]) == 16


def test_display_drops_accumulate_but_recording_keeps_everything():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    srv.handle({"type": "advance", "dt": 4.0})
    srv.handle({"type": "advance", "dt": 4.0})
    status = srv.handle({"type": "status"})[0]
    assert status["display_dropped"] > 0
    # every delivered packet was recorded regardless of display pressure
    assert len(srv.recording.packets) == status["link"]["delivered"]


def test_small_advances_render_everything():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    dropped = 0
    for _ in range(10):
        out = srv.handle({"type": "advance", "dt": 0.1})
        dropped = msgs_of("status", out)[-1]["display_dropped"]
    assert dropped == 0


# ---------------------------------------------------------------------------
# view control

def test_set_view_acks_and_rejects():
    srv = fresh()
    ok = srv.handle({"type": "set_view", "id": 1,
                     "chain": [{"kind": "bandpass", "order": 4,
                                "f_lo": 0.5, "f_hi": 30.0}],
                     "scale": 2.0})
    assert ok == [{"type": "ack", "id": 1, "ok": True, "reason": None}]
    bad = srv.handle({"type": "set_view", "id": 2,
                      "chain": [{"kind": "bandpass", "order": 3,
                                 "f_lo": 0.5, "f_hi": 30.0}]})
    assert not bad[0]["ok"] and bad[0]["reason"]
    assert srv.view.chain_spec[0]["order"] == 4   # previous chain kept
    worse = srv.handle({"type": "set_view", "id": 3, "scale": -1.0})
    assert not worse[0]["ok"] and worse[0]["reason"]
    assert srv.view.scale == 2.0


def test_console_interaction_never_alters_recording_hash():
    script = [{"type": "command", "name": "start"}] + \
        [{"type": "advance", "dt": 0.5}] * 4

    plain = fresh(seed=21)
    for msg in script:
        plain.handle(msg)
    baseline = plain.handle({"type": "recording"})[0]

    busy = fresh(seed=21)
    busy.handle(script[0])
    for msg in script[1:]:
        busy.handle({"type": "set_view", "chain": [{"kind": "notch", "freq": 50.0}]})
        busy.handle({"type": "status"})
        busy.handle({"type": "recording"})
        busy.handle(msg)
        busy.handle({"type": "set_view", "scale": 4.0})
    final = busy.handle({"type": "recording"})[0]

    assert baseline["hash"] == final["hash"]
    assert baseline["packets"] == final["packets"]
    blob = busy.recording.to_bytes()
    assert final["hash"] == hashlib.sha256(blob).hexdigest()
    assert final["bytes"] == len(blob)


# ---------------------------------------------------------------------------
# alarms over the channel

def test_link_loss_alarm_within_two_seconds():
    link = proto.LinkModel(capacity_bps=1.4e6, dropout_schedule=[(1.0, 4.0)])
    srv = fresh(link=link)
    srv.handle({"type": "command", "name": "start"})
    alarms = []
    t = 0.0
    while t < 6.0:
        out = srv.handle({"type": "advance", "dt": 0.25})
        t += 0.25
        alarms.extend(msgs_of("alarm", out))
    assert len(alarms) == 1
    assert alarms[0]["kind"] == "link_loss"
    assert 1.0 < alarms[0]["t"] <= 3.0      # within 2 s of the outage start


def test_low_battery_alarm_once_per_episode():
    srv = fresh()
    srv.device.battery_level = 0.10
    out = srv.handle({"type": "advance", "dt": 0.1})
    kinds = [m["kind"] for m in msgs_of("alarm", out)]
    assert kinds == ["low_battery"]
    out = srv.handle({"type": "advance", "dt": 0.1})
    assert msgs_of("alarm", out) == []


# ---------------------------------------------------------------------------
# richer streams

def test_contact_report_rendered():
    srv = fresh()
    srv.handle({"type": "command", "name": "start"})
    srv.handle({"type": "advance", "dt": 0.2})
    ok = srv.handle({"type": "command", "name": "contact_check"})
    assert ok[0]["ok"]
    out = srv.handle({"type": "advance", "dt": 1.1})
    reports = msgs_of("contact_report", out)
    assert len(reports) == 1
    assert len(reports[0]["channels"]) == 16
    assert set(reports[0]["verdicts"]) <= {"good", "marginal", "open"}
    assert srv.device.mode == "streaming"


def test_decisions_rendered_in_edge_mode():
    srv = fresh(seed=2, device_kwargs={"eeg": SsvepSpec(11.5, 3.0, 16)})
    srv.handle({"type": "command", "name": "set_mode", "args": {"mode": "edge_ai"}})
    out = []
    for _ in range(8):
        out.extend(srv.handle({"type": "advance", "dt": 0.5}))
    decisions = msgs_of("decision", out)
    assert decisions
    assert decisions[0]["t"] == pytest.approx(3.0)
    votes = [m["decision"] for m in decisions]
    assert votes.count(11.5) >= len(votes) - 1
    scores = decisions[0]["scores"]
    assert {s["freq"] for s in scores} == {7.5, 11.5, 13.5, 15.5}
    target = next(s for s in scores if s["freq"] == 11.5)
    assert target["ncca"] > 1.1


# ---------------------------------------------------------------------------
# websocket adapter

def test_http_health_and_websocket_session():
    from fastapi.testclient import TestClient

    app = create_app(preset="headband", seed=0)
    client = TestClient(app)

    health = client.get("/health")
    assert health.status_code == 200
    assert health.json() == {"ok": True, "schema": SCHEMA_VERSION}

    with client.websocket_connect("/ws") as ws:
        hello = ws.receive_json()
        status = ws.receive_json()
        assert hello["type"] == "hello"
        assert status["type"] == "status" and status["mode"] == "idle"

        ws.send_json({"type": "command", "id": 1, "name": "start"})
        ack = ws.receive_json()
        assert ack == {"type": "ack", "id": 1, "ok": True,
                       "reason": None, "data": None}

        ws.send_json({"type": "advance", "dt": 0.5})
        got_frames = False
        while True:
            msg = ws.receive_json()
            if msg["type"] == "frames":
                got_frames = True
            if msg["type"] == "status":
                assert msg["mode"] == "streaming"
                break
        assert got_frames

        ws.send_json({"type": "recording"})
        rec = ws.receive_json()
        assert rec["type"] == "recording"
        assert len(rec["hash"]) == 64
        assert rec["packets"] > 0
