"""Bidirectional console channel: JSON messages over a websocket.

The simulation is driven by explicit client "advance" messages carrying a
virtual-time delta, which keeps sessions deterministic and testable; a
console that wants wall-clock behavior sends advances from a timer.

Message schema (version 1), client to server:
  {"type": "command", "id": any, "name": str, "args": {..}}   device command
  {"type": "advance", "dt": seconds}                          run simulation
  {"type": "set_view", "chain": [..], "scale": float}         display only
  {"type": "recording"}                                       hash + counters
  {"type": "status"}                                          state snapshot

Server to client:
  hello, status, frames, decision, contact_report, alarm, ack, recording
"""
import hashlib
import json

from . import proto
from .gateway import AlarmMonitor, LiveView, Recording, make_header
from .runtime import IMU_CODE_SCALE, PPG_CODE_SCALE, TICK_HZ, DeviceSim

SCHEMA_VERSION = 1
MAX_FRAME_MESSAGES_PER_ADVANCE = 40  # display backpressure; recording unaffected


class GatewayServer:
    """One device session behind a message-based console channel.

    handle() is synchronous and transport-free so the protocol can be tested
    without sockets; the websocket endpoint is a thin adapter around it.
    """

    def __init__(self, preset: str = "headband", seed: int = 0,
                 link: proto.LinkModel | None = None, horizon_s: float = 60.0,
                 device_kwargs: dict | None = None,
                 alarm_battery: float = 0.15, alarm_timeout_s: float = 1.5):
        self.device = DeviceSim(preset, seed=seed, horizon_s=horizon_s,
                                **(device_kwargs or {}))
        self.link = link or proto.LinkModel()
        self.link.validate()
        self.lsession = proto.LinkSession(self.link)
        self.recording = Recording(header=make_header(self.device, link=self.link,
                                                      seed=seed))
        self.alarms = AlarmMonitor(battery_threshold=alarm_battery,
                                   link_timeout_s=alarm_timeout_s)
        self.t = 0.0
        self.display_dropped = 0
        self._new_view()

    def _new_view(self) -> None:
        cfg = self.device.afe
        self.view = LiveView(cfg.sample_rate, len(cfg.enabled_channels()), cfg.gain)

    # ---- message entry points -----------------------------------------

    def connect(self) -> list:
        return [self._hello(), self._status()]

    def handle(self, msg: dict) -> list:
        kind = msg.get("type")
        if kind == "command":
            return self._handle_command(msg)
        if kind == "advance":
            return self._handle_advance(msg)
        if kind == "set_view":
            return self._handle_set_view(msg)
        if kind == "status":
            return [self._status()]
        if kind == "recording":
            return [self._recording_info()]
        return [{"type": "ack", "id": msg.get("id"), "ok": False,
                 "reason": f"unknown message type {kind!r}"}]

    # ---- handlers -------------------------------------------------------

    def _handle_command(self, msg: dict) -> list:
        name = msg.get("name")
        args = msg.get("args") or {}
        if not isinstance(name, str) or not isinstance(args, dict):
            return [{"type": "ack", "id": msg.get("id"), "ok": False,
                     "reason": "command needs a name and an args object"}]
        result = self.device.command(name, **args)
        reply = {"type": "ack", "id": msg.get("id"), "ok": result.ok,
                 "reason": result.reason, "data": result.data}
        out = [reply]
        if result.ok and name in ("set_rate", "set_gain", "set_mask"):
            out.append(self._status())
        return out

    def _handle_set_view(self, msg: dict) -> list:
        ok = True
        reason = None
        if "chain" in msg:
            ok = self.view.set_chain(msg["chain"])
            reason = self.view.last_error
        if ok and "scale" in msg:
            ok = self.view.set_scale(msg["scale"])
            reason = None if ok else self.view.last_error
        return [{"type": "ack", "id": msg.get("id"), "ok": ok, "reason": reason}]

    def _handle_advance(self, msg: dict) -> list:
        dt = msg.get("dt")
        if not isinstance(dt, (int, float)) or not 0 < dt <= 10.0:
            return [{"type": "ack", "id": msg.get("id"), "ok": False,
                     "reason": "advance needs 0 < dt <= 10 seconds"}]
        out: list = []
        for pt, pkt in self.device.step(float(dt)):
            self.lsession.enqueue(pt, pkt)
        self.t += float(dt)
        frames_budget = MAX_FRAME_MESSAGES_PER_ADVANCE
        for _dt, raw in self.lsession.poll(self.t):
            self.recording.append(raw)
            self.alarms.saw_packet(self.t)
            rendered = self._render_packet(raw)
            for m in rendered:
                if m["type"] == "frames":
                    if frames_budget <= 0:
                        self.display_dropped += 1
                        continue
                    frames_budget -= 1
                out.append(m)
        for alarm in self.alarms.update(self.t, self.device.battery_level):
            out.append({"type": "alarm", "t": alarm.t_s, "kind": alarm.kind,
                        "detail": alarm.detail})
        out.append(self._status())
        return out

    # ---- rendering ------------------------------------------------------

    def _render_packet(self, raw: bytes) -> list:
        try:
            pkt = proto.decode(raw)
        except proto.ProtocolError:
            return []
        t0 = pkt.timestamp_ticks / TICK_HZ
        if pkt.stream_id == proto.STREAM_EXG and pkt.frame_count:
            n_ch = self.view.n_channels
            if pkt.payload and len(pkt.payload) // 3 % n_ch:
                return []  # config changed mid-flight; skip until view catches up
            codes = pkt.codes(n_ch)
            disp = self.view.decimate(self.view.process_codes(codes))
            if disp.shape[1] == 0:
                return []
            return [{"type": "frames", "stream": "exg", "t0": t0,
                     "rate": self.view.sample_rate / self.view.decim,
                     "data": [[float(v) for v in row] for row in disp]}]
        if pkt.stream_id == proto.STREAM_PPG and pkt.frame_count:
            vals = pkt.codes(1)[0] / PPG_CODE_SCALE
            return [{"type": "frames", "stream": "ppg", "t0": t0, "rate": 100.0,
                     "data": [[float(v) for v in vals]]}]
        if pkt.stream_id == proto.STREAM_IMU and pkt.frame_count:
            vals = pkt.codes(3) / IMU_CODE_SCALE
            return [{"type": "frames", "stream": "imu", "t0": t0, "rate": 400.0,
                     "data": [[float(v) for v in row] for row in vals]}]
        if pkt.stream_id == proto.STREAM_EDGE:
            dec = proto.unpack_decision(pkt.payload)
            return [{"type": "decision", "t": t0, "decision": dec["decision"],
                     "scores": dec["scores"]}]
        if pkt.stream_id == proto.STREAM_CONTACT:
            report = json.loads(pkt.payload)
            report.update({"type": "contact_report", "t": t0})
            return [report]
        if pkt.stream_id == proto.STREAM_CONFIG:
            cfg = json.loads(pkt.payload)
            self._apply_view_config(cfg)
            return [self._status()]
        return []

    def _apply_view_config(self, cfg: dict) -> None:
        chain, scale = self.view.chain_spec, self.view.scale
        self.view = LiveView(cfg["sample_rate"],
                             bin(cfg["channels_enabled"]).count("1"), cfg["gain"])
        self.view.set_chain(chain)
        self.view.set_scale(scale)

    def _hello(self) -> dict:
        return {"type": "hello", "schema": SCHEMA_VERSION,
                "preset": self.device.preset.name, "tick_hz": TICK_HZ,
                "afe": dict(self.recording.header["afe"]),
                "streams": self.recording.header["streams"]}

    def _status(self) -> dict:
        st = self.device.status()
        st.update({"type": "status", "t": self.t,
                   "link": {"sent": self.lsession.stats.sent,
                            "delivered": self.lsession.stats.delivered,
                            "dropped": self.lsession.stats.dropped},
                   "display_dropped": self.display_dropped})
        st["battery_level"] = float(st["battery_level"])
        return st

    def _recording_info(self) -> dict:
        blob = self.recording.to_bytes()
        return {"type": "recording", "hash": hashlib.sha256(blob).hexdigest(),
                "packets": len(self.recording.packets), "bytes": len(blob)}


def create_app(preset: str = "headband", seed: int = 0, **kwargs):
    """FastAPI application exposing the console channel at /ws."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="biogap gateway")
    server = GatewayServer(preset=preset, seed=seed, **kwargs)
    app.state.gateway = server

    @app.get("/health")
    def health():
        return {"ok": True, "schema": SCHEMA_VERSION}

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        for m in server.connect():
            await websocket.send_json(m)
        try:
            while True:
                msg = await websocket.receive_json()
                for reply in server.handle(msg):
                    await websocket.send_json(reply)
        except WebSocketDisconnect:
            pass

    return app


def serve(app, host: str = "127.0.0.1", port: int = 8765):
    import uvicorn

    uvicorn.run(app, host=host, port=port)
