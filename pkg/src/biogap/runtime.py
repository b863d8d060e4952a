"""Emulated device firmware: seven cooperative tasks on a simulated clock.

The device advances on an explicit 32 kHz tick clock that every supported
sample rate divides, so ExG, optical, and inertial frames share timestamps
exactly. Tasks run round-robin each step: the state machine owns mode
transitions and ExG acquisition, dedicated tasks sample the slower sensors,
the send task drains the packet queue, the receive task applies commands,
power management integrates battery drain, and the advertiser ticks while
the device idles.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import afe as afe_mod
from . import proto, ssvep
from .errors import ConfigurationError
from .frames import ACC, ECG, EEG, EMG, PPG
from .power import DEFAULT_BATTERY, PowerReport, attach_workload, power_report
from .synth import CardiacSpec, EmgSpec, SsvepSpec, SynthSpec, ground_truth, synthesize

TICK_HZ = 32000
PPG_RATE = 100
IMU_RATE = 400

EXG_PACKET_S = 0.05
PPG_FRAMES_PER_PACKET = 5
IMU_FRAMES_PER_PACKET = 20
CONTACT_CHECK_S = 1.0
ADVERTISE_PERIOD_S = 1.0

PPG_CODE_SCALE = 4.0e6    # counts per unit pulse amplitude
IMU_CODE_SCALE = 1000.0   # counts per milli-g

MODES = ("idle", "streaming", "edge_ai", "contact_check", "charging")

_LEGAL_MODE_TARGETS = {
    "idle": {"idle", "streaming", "edge_ai", "charging"},
    "streaming": {"streaming", "idle", "edge_ai"},
    "edge_ai": {"edge_ai", "idle", "streaming"},
    "charging": {"charging", "idle"},
    "contact_check": set(),
}


@dataclass
class DevicePreset:
    name: str
    exg_modality: str
    exg_channels: int
    afe: afe_mod.AfeConfig
    has_ppg: bool
    has_imu: bool
    power_preset: str


PRESETS = {
    "headband": DevicePreset("headband", EEG, 16,
                             afe_mod.AfeConfig(sample_rate=500, gain=12, channels_enabled=0xFFFF),
                             has_ppg=True, has_imu=True, power_preset="headband"),
    "sleeve": DevicePreset("sleeve", EMG, 16,
                           afe_mod.AfeConfig(sample_rate=500, gain=6, channels_enabled=0xFFFF),
                           has_ppg=False, has_imu=True, power_preset="sleeve"),
    "chestband": DevicePreset("chestband", ECG, 1,
                              afe_mod.AfeConfig(sample_rate=500, gain=6, channels_enabled=0x0001),
                              has_ppg=True, has_imu=True, power_preset="chestband"),
}


@dataclass
class CommandResult:
    ok: bool
    reason: str | None = None
    data: dict | None = None


def ack(data=None) -> CommandResult:
    return CommandResult(True, data=data)


def nack(reason: str) -> CommandResult:
    return CommandResult(False, reason=reason)


class SsvepEdgeStage:
    """Default on-device decision stage: windowed frequency classification."""

    def __init__(self, candidates=ssvep.DEFAULT_CANDIDATES, window_s: float = 3.0,
                 hop_s: float = 0.5, threshold: float = ssvep.DECISION_THRESHOLD,
                 energy_mj_per_run: float = 0.36):
        self.candidates = tuple(candidates)
        self.window_s = window_s
        self.hop_s = hop_s
        self.threshold = threshold
        self.energy_mj_per_run = energy_mj_per_run

    def decide(self, window_uv: np.ndarray, sample_rate: float) -> ssvep.NccaResult:
        return ssvep.classify_window(window_uv, sample_rate,
                                     candidates=self.candidates,
                                     threshold=self.threshold)

    def payload(self, result: ssvep.NccaResult) -> bytes:
        return proto.pack_decision(result.decision,
                                   [(s.freq, s.cca, s.ncca) for s in result.scores])


class DeviceSim:
    """One emulated device: sensors, framing, modes, power, and command handling."""

    def __init__(self, preset: str = "headband", seed: int = 0, horizon_s: float = 60.0,
                 eeg: SsvepSpec | None = None, cardiac: CardiacSpec | None = None,
                 emg: EmgSpec | None = None, edge_stage=None,
                 battery=DEFAULT_BATTERY, probe=afe_mod.DEFAULT_PROBE):
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}, expected one of {tuple(PRESETS)}")
        self.preset = PRESETS[preset]
        self.seed = int(seed)
        self.horizon_s = float(horizon_s)
        if eeg is None and self.preset.exg_modality == EEG:
            eeg = SsvepSpec(n_channels=self.preset.exg_channels)
        if emg is None and self.preset.exg_modality == EMG:
            emg = EmgSpec(n_channels=self.preset.exg_channels)
        self.eeg_spec = eeg
        self.cardiac_spec = cardiac
        self.emg_spec = emg
        self.edge_stage = edge_stage or SsvepEdgeStage()
        self.probe = probe

        self.afe = replace(self.preset.afe)
        self.pending_afe: afe_mod.AfeConfig | None = None
        self.mode = "idle"
        self.tick = 0
        self.power = power_report(self.preset.power_preset, battery=battery)
        self.battery_level = 1.0
        self.electrode_attenuations = np.ones(afe_mod.N_PHYSICAL_CHANNELS)
        self.last_contact_report = None
        self.events: list = []

        self._afe_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA5E]))
        self._seqs: dict = {}
        self._msg_queue: list = []      # (t_seconds, packet bytes)
        self._inbox: list = []          # deferred commands (name, args)
        self._exg_records: dict = {}    # sample_rate -> (n_rows, n) uV array
        self._aux_records: dict = {}    # modality -> native-rate trace
        self._next_native = {"exg": 0, "ppg": 0, "imu": 0}
        self._exg_pending: list = []    # (tick0, codes, saturated) awaiting packetization
        self._contact_done_tick: int | None = None
        self._contact_resume: str | None = None
        self._edge_window: list = []    # contiguous uV blocks feeding the decision stage
        self._edge_window_len = 0
        self._edge_start = 0            # native index of the first buffered column
        self._next_decision_tick: int | None = None
        self._next_advertise_tick = 0

        self._tasks = (self._task_state_machine, self._task_power_mgmt,
                       self._task_ble_advertise, self._task_ble_send,
                       self._task_ble_receive, self._task_imu, self._task_ppg)

    # ---- synthetic signal sources -------------------------------------

    def _synth_spec(self, modalities: set, sample_rate: float) -> SynthSpec:
        return SynthSpec(seed=self.seed, duration=self.horizon_s, sample_rate=sample_rate,
                         modalities=modalities, eeg=self.eeg_spec,
                         ecg_ppg=self.cardiac_spec, emg=self.emg_spec)

    def _exg_source(self, rate: int) -> np.ndarray:
        if rate not in self._exg_records:
            rec = synthesize(self._synth_spec({self.preset.exg_modality}, rate))
            rows = rec.modality(self.preset.exg_modality)
            # map onto the physical channel array; unwired inputs stay at 0 V
            phys = np.zeros((afe_mod.N_PHYSICAL_CHANNELS, rows.shape[1]))
            take = min(rows.shape[0], afe_mod.N_PHYSICAL_CHANNELS)
            phys[:take] = rows[:take]
            self._exg_records[rate] = phys
        return self._exg_records[rate]

    def _aux_source(self, modality: str, rate: int) -> np.ndarray:
        if modality not in self._aux_records:
            rec = synthesize(self._synth_spec({modality}, rate))
            self._aux_records[modality] = rec.modality(modality)
        return self._aux_records[modality]

    def annotations(self):
        """Ground truth for the device's own synthetic sources."""
        return ground_truth(self._synth_spec({self.preset.exg_modality}, self.afe.sample_rate))

    # ---- packet plumbing ----------------------------------------------

    def _next_seq(self, stream_id: int) -> int:
        seq = self._seqs.get(stream_id, 0)
        self._seqs[stream_id] = (seq + 1) % 2 ** 32
        return seq

    def _queue_packet(self, t_s: float, packet: bytes) -> None:
        self._msg_queue.append((t_s, packet))

    def _emit_config_packet(self) -> None:
        payload = json.dumps({"gain": self.afe.gain, "sample_rate": self.afe.sample_rate,
                              "channels_enabled": self.afe.channels_enabled,
                              "tick": self.tick}, sort_keys=True).encode()
        pkt = proto.encode_blob(payload, 1, proto.STREAM_CONFIG,
                                self._next_seq(proto.STREAM_CONFIG), self.tick,
                                proto.FLAG_EDGE)
        self._queue_packet(self.tick / TICK_HZ, pkt)

    # ---- acquisition helpers ------------------------------------------

    def _due_range(self, key: str, stride: int, end_tick: int) -> tuple:
        """Native sample indices that fall due by end_tick; advances the cursor."""
        start = self._next_native[key]
        end = max(start, (end_tick + stride - 1) // stride)
        self._next_native[key] = end
        return start, end

    def _exg_powered(self) -> bool:
        return (self.power.domain("ads_analog").active
                and self.power.domain("ads_digital").active)

    def _acquire_exg(self, end_tick: int) -> None:
        rate = self.afe.sample_rate
        stride = TICK_HZ // rate
        i0, i1 = self._due_range("exg", stride, end_tick)
        if i1 <= i0 or not self._exg_powered():
            return
        source = self._exg_source(rate)
        n_src = source.shape[1]
        idx = np.arange(i0, i1) % n_src  # sources loop past the horizon
        block = afe_mod.digitize(source[:, idx], self.afe, rng=self._afe_rng)
        if self.mode == "streaming":
            self._exg_pending.append((i0 * stride, block.codes, block.saturated))
            self._flush_exg_packets(stride)
        elif self.mode == "edge_ai":
            uv = afe_mod.codes_to_uv(block.codes, self.afe.gain)
            if self._edge_window_len == 0:
                self._edge_start = i0
            self._edge_window.append(uv)
            self._edge_window_len += uv.shape[1]
            self._run_edge_decisions(end_tick, stride)

    def _flush_exg_packets(self, stride: int, force: bool = False) -> None:
        fpp = max(1, int(round(EXG_PACKET_S * self.afe.sample_rate)))
        while self._exg_pending:
            total = sum(c.shape[1] for _t, c, _s in self._exg_pending)
            take = fpp if total >= fpp else (total if force else 0)
            if take == 0:
                return
            tick0 = self._exg_pending[0][0]
            cols, sats = [], []
            need = take
            while need:
                t0, codes, sat = self._exg_pending[0]
                if codes.shape[1] <= need:
                    cols.append(codes)
                    sats.append(sat)
                    need -= codes.shape[1]
                    self._exg_pending.pop(0)
                else:
                    cols.append(codes[:, :need])
                    sats.append(sat[:need])
                    self._exg_pending[0] = (t0 + need * stride, codes[:, need:], sat[need:])
                    need = 0
            codes = np.concatenate(cols, axis=1)
            flags = proto.FLAG_SATURATION if any(s.any() for s in sats) else 0
            pkt = proto.encode(codes, proto.STREAM_EXG, self._next_seq(proto.STREAM_EXG),
                               tick0, flags)
            self._queue_packet((tick0 + codes.shape[1] * stride) / TICK_HZ, pkt)

    def _run_edge_decisions(self, end_tick: int, stride: int) -> None:
        stage = self.edge_stage
        fs = self.afe.sample_rate
        window_n = int(round(stage.window_s * fs))
        hop_ticks = int(round(stage.hop_s * TICK_HZ))
        if self._next_decision_tick is None:
            self._next_decision_tick = ((self.tick // hop_ticks) + 1) * hop_ticks
        while self._next_decision_tick <= end_tick:
            t_dec = self._next_decision_tick
            self._next_decision_tick += hop_ticks
            end_idx = min(t_dec // stride, self._edge_start + self._edge_window_len)
            lo = end_idx - window_n
            if lo < self._edge_start:
                continue  # window not filled yet
            buf = np.concatenate(self._edge_window, axis=1)
            s0 = lo - self._edge_start
            result = stage.decide(buf[:, s0:s0 + window_n], fs)
            pkt = proto.encode_blob(stage.payload(result), 1, proto.STREAM_EDGE,
                                    self._next_seq(proto.STREAM_EDGE), t_dec,
                                    proto.FLAG_EDGE)
            self._queue_packet(t_dec / TICK_HZ, pkt)
            keep_from = self._next_decision_tick // stride - window_n
            while self._edge_window and \
                    self._edge_start + self._edge_window[0].shape[1] <= keep_from:
                dropped = self._edge_window.pop(0)
                self._edge_start += dropped.shape[1]
                self._edge_window_len -= dropped.shape[1]

    def _acquire_aux(self, modality: str, key: str, rate: int, stream_id: int,
                     fpp: int, scale: float, end_tick: int, powered: bool) -> None:
        stride = TICK_HZ // rate
        i0, i1 = self._due_range(key, stride, end_tick)
        if i1 <= i0 or not powered or self.mode != "streaming":
            return
        source = self._aux_source(modality, rate)
        n_src = source.shape[1]
        idx = np.arange(i0, i1) % n_src
        codes = np.clip(np.rint(source[:, idx] * scale), proto.CODE_LO, proto.CODE_HI)
        codes = codes.astype(np.int32)
        for j0 in range(0, codes.shape[1], fpp):
            chunk = codes[:, j0:j0 + fpp]
            tick0 = (i0 + j0) * stride
            pkt = proto.encode(chunk, stream_id, self._next_seq(stream_id), tick0)
            self._queue_packet((tick0 + chunk.shape[1] * stride) / TICK_HZ, pkt)

    # ---- the seven tasks ------------------------------------------------

    def _task_state_machine(self, end_tick: int, out: list) -> None:
        if self.pending_afe is not None:
            self.afe = self.pending_afe
            self.pending_afe = None
            self._exg_pending.clear()
            # a reconfigured converter restarts now; history is not replayed,
            # so acquisition resumes at the current tick and timestamps stay
            # monotonic across the change
            stride = TICK_HZ // self.afe.sample_rate
            self._next_native["exg"] = -(-self.tick // stride)
            self._edge_window.clear()
            self._edge_window_len = 0
            self._next_decision_tick = None
            if self.mode in ("streaming", "edge_ai"):
                self._emit_config_packet()
        if self.mode == "contact_check" and self._contact_done_tick is not None \
                and end_tick >= self._contact_done_tick:
            self._finish_contact_check()
        if self.mode in ("streaming", "edge_ai"):
            self._acquire_exg(end_tick)
        else:
            stride = TICK_HZ // self.afe.sample_rate
            self._due_range("exg", stride, end_tick)  # sample clock keeps running

    def _task_power_mgmt(self, end_tick: int, out: list) -> None:
        dt_h = (end_tick - self.tick) / TICK_HZ / 3600.0
        mah, volts = self.power.battery
        capacity_mwh = mah * volts
        if self.mode == "charging":
            self.battery_level = min(1.0, self.battery_level + dt_h)  # ~1C charge
        else:
            drained = self.power.total_mW * dt_h
            self.battery_level = max(0.0, self.battery_level - drained / capacity_mwh)

    def _task_ble_advertise(self, end_tick: int, out: list) -> None:
        if self.mode not in ("idle", "charging"):
            self._next_advertise_tick = end_tick
            return
        period = int(ADVERTISE_PERIOD_S * TICK_HZ)
        while self._next_advertise_tick <= end_tick:
            self.events.append((self._next_advertise_tick / TICK_HZ, "advertise", None))
            self._next_advertise_tick += period

    def _task_ble_send(self, end_tick: int, out: list) -> None:
        # handoff time is when the send task runs, never earlier: packets the
        # sensor tasks queued late in the previous step leave the radio now
        t_send = self.tick / TICK_HZ
        self._msg_queue.sort(key=lambda item: item[0])
        out.extend((max(pt, t_send), pkt) for pt, pkt in self._msg_queue)
        self._msg_queue.clear()

    def _task_ble_receive(self, end_tick: int, out: list) -> None:
        while self._inbox:
            name, args = self._inbox.pop(0)
            result = self._apply_command(name, args)
            self.events.append((end_tick / TICK_HZ, "ack" if result.ok else "nack",
                                {"command": name, "reason": result.reason}))

    def _task_imu(self, end_tick: int, out: list) -> None:
        if not self.preset.has_imu:
            return
        self._acquire_aux(ACC, "imu", IMU_RATE, proto.STREAM_IMU, IMU_FRAMES_PER_PACKET,
                          IMU_CODE_SCALE, end_tick, self.power.domain("imu").active)

    def _task_ppg(self, end_tick: int, out: list) -> None:
        if not self.preset.has_ppg:
            return
        self._acquire_aux(PPG, "ppg", PPG_RATE, proto.STREAM_PPG, PPG_FRAMES_PER_PACKET,
                          PPG_CODE_SCALE, end_tick, self.power.domain("ppg").active)

    # ---- stepping -------------------------------------------------------

    def step(self, dt_s: float) -> list:
        """Advance simulated time; returns (t_seconds, packet) pairs emitted."""
        out: list = []
        end_tick = self.tick + int(round(dt_s * TICK_HZ))
        for task in self._tasks:
            task(end_tick, out)
        self.tick = end_tick
        return out

    def flush(self) -> list:
        """Emit any partially filled ExG packet (end of session)."""
        out: list = []
        stride = TICK_HZ // self.afe.sample_rate
        self._flush_exg_packets(stride, force=True)
        self._task_ble_send(self.tick, out)
        return out

    # ---- command handling ------------------------------------------------

    def post_command(self, name: str, **args) -> None:
        """Queue a command for the receive task (transport path)."""
        self._inbox.append((name, args))

    def command(self, name: str, **args) -> CommandResult:
        """Validate and apply a command immediately; returns ack or nack."""
        return self._apply_command(name, args)

    def _apply_command(self, name: str, args: dict) -> CommandResult:
        if self.mode == "contact_check" and name not in ("query_power", "query_status"):
            return nack("busy")
        if name == "start":
            return self._set_mode("streaming")
        if name == "stop":
            return self._set_mode("idle")
        if name == "set_mode":
            return self._set_mode(args.get("mode"))
        if name == "set_gain":
            return self._set_afe(gain=args.get("value"))
        if name == "set_rate":
            return self._set_afe(sample_rate=args.get("value"))
        if name == "set_mask":
            return self._set_afe(channels_enabled=args.get("value"))
        if name == "contact_check":
            self._contact_resume = self.mode
            self.mode = "contact_check"
            self._contact_done_tick = self.tick + int(CONTACT_CHECK_S * TICK_HZ)
            return ack()
        if name == "power_domain":
            return self.power_transition(args.get("domain"), bool(args.get("on")))
        if name == "query_power":
            return ack(data=self.power.as_dict())
        if name == "query_status":
            return ack(data=self.status())
        return nack("unknown_command")

    def _set_mode(self, mode) -> CommandResult:
        if mode not in MODES or mode == "contact_check":
            return nack("invalid_argument")
        if mode not in _LEGAL_MODE_TARGETS[self.mode]:
            return nack("invalid_transition")
        if mode == self.mode:
            return ack()
        leaving_edge = self.mode == "edge_ai"
        self.mode = mode
        if mode in ("streaming", "edge_ai"):
            for name in ("nRF", "ads_analog", "ads_digital"):
                self.power = self.power.with_domain_active(name, True)
        if mode == "edge_ai":
            stage = self.edge_stage
            self.power = attach_workload(self.power, "ssvep_online",
                                         (stage.energy_mj_per_run, 1.0 / stage.hop_s))
            self._edge_window.clear()
            self._edge_window_len = 0
            self._next_decision_tick = None
        elif leaving_edge:
            domains = [replace(d, draw_mW=0.0, active=False) if d.name == "gap9" else d
                       for d in self.power.domains]
            self.power = PowerReport(domains, battery=self.power.battery)
        if mode != "streaming":
            self._exg_pending.clear()
        return ack()

    def _set_afe(self, **changes) -> CommandResult:
        cfg = replace(self.pending_afe or self.afe)
        for key, value in changes.items():
            if not isinstance(value, int) or isinstance(value, bool):
                return nack("invalid_argument")
            setattr(cfg, key, value)
        if cfg.channels_enabled >> self.preset.exg_channels:
            return nack("invalid_argument")  # mask bits beyond the wired channels
        try:
            cfg.validate()
        except ValueError:
            return nack("invalid_argument")
        self.pending_afe = cfg
        return ack()

    def power_transition(self, domain: str, on: bool) -> CommandResult:
        try:
            self.power.domain(domain)
        except ConfigurationError:
            return nack("unknown_domain")
        if not on and domain == "nRF" and self.mode in ("streaming", "edge_ai"):
            return nack("required_domain")
        if not on and domain == "gap9" and self.mode == "edge_ai":
            return nack("required_domain")
        self.power = self.power.with_domain_active(domain, on)
        return ack()

    # ---- contact check ---------------------------------------------------

    def _finish_contact_check(self) -> None:
        cfg = self.afe
        enabled = cfg.enabled_channels()
        atts = [float(self.electrode_attenuations[c]) for c in enabled]
        clean_cfg = replace(cfg, noise_enabled=False)
        sims = afe_mod.simulate_contact_signals(atts, self.probe, clean_cfg,
                                                duration=CONTACT_CHECK_S)
        phys = np.zeros((afe_mod.N_PHYSICAL_CHANNELS, sims.shape[1]))
        phys[list(enabled), :] = sims
        block = afe_mod.digitize(phys, cfg, rng=self._afe_rng)
        uv = afe_mod.codes_to_uv(block.codes, cfg.gain)
        report = afe_mod.contact_check(uv, self.probe, cfg.sample_rate, channels=enabled)
        self.last_contact_report = report
        payload = json.dumps({
            "channels": list(report.channels),
            "attenuation_db": [round(float(v), 2) for v in report.attenuation_db],
            "verdicts": list(report.verdicts),
            "probe": list(report.probe),
        }, sort_keys=True).encode()
        pkt = proto.encode_blob(payload, len(enabled), proto.STREAM_CONTACT,
                                self._next_seq(proto.STREAM_CONTACT),
                                self._contact_done_tick, proto.FLAG_EDGE)
        self._queue_packet(self._contact_done_tick / TICK_HZ, pkt)
        self.mode = self._contact_resume or "idle"
        self._contact_resume = None
        self._contact_done_tick = None

    # ---- introspection -----------------------------------------------------

    def status(self) -> dict:
        return {
            "preset": self.preset.name,
            "mode": self.mode,
            "tick": self.tick,
            "battery_level": self.battery_level,
            "gain": self.afe.gain,
            "sample_rate": self.afe.sample_rate,
            "channels_enabled": self.afe.channels_enabled,
            "total_mW": self.power.reported_total_mW,
        }


def step(device: DeviceSim, dt_s: float) -> list:
    return device.step(dt_s)


def command(device: DeviceSim, name: str, **args) -> CommandResult:
    return device.command(name, **args)


def power_transition(device: DeviceSim, domain: str, on: bool) -> CommandResult:
    return device.power_transition(domain, on)
