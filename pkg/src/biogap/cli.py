"""Command-line front door.

Subcommands:
  sim      run a simulated device session, write a recording file
  stream   serve the live console channel over a websocket
  synth    render a declarative signal spec straight to a recording file
  analyze  recording -> filtered traces, R-peaks, PTT, EMG RMS (JSON)
  ssvep    recording + annotations -> decision series and latency curves (JSON)
  power    per-domain power report for a form-factor preset
  export   recording -> csv traces or verbatim packet stream
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import afe as afe_mod
from . import dsp, gateway, power, proto, ssvep
from .errors import ValidationError
from .frames import ACC, ECG, EEG, EMG, PPG
from .runtime import (EXG_PACKET_S, IMU_CODE_SCALE, IMU_FRAMES_PER_PACKET,
                      PPG_CODE_SCALE, PPG_FRAMES_PER_PACKET, TICK_HZ)
from .synth import (CardiacSpec, EmgSpec, Segment, SsvepSpec, SynthSpec,
                    ground_truth, ssvep_protocol, synthesize)


def parse_link(text: str | None) -> proto.LinkModel:
    """Either a JSON object {capacity_bps, dropout_schedule, latency_ms} or a
    bare capacity like '1.4M' / '200k' / '1400000'."""
    if not text:
        return proto.LinkModel()
    text = text.strip()
    if text.startswith("{"):
        raw = json.loads(text)
        link = proto.LinkModel(
            capacity_bps=float(raw.get("capacity_bps", 1.4e6)),
            dropout_schedule=[tuple(w) for w in raw.get("dropout_schedule", [])],
            latency_ms=float(raw.get("latency_ms", 0.0)))
    else:
        mult = 1.0
        if text[-1] in "kK":
            mult, text = 1e3, text[:-1]
        elif text[-1] in "mM":
            mult, text = 1e6, text[:-1]
        link = proto.LinkModel(capacity_bps=float(text) * mult)
    link.validate()
    return link


def parse_battery(text: str) -> tuple:
    """'150mAh@3.7V' -> (150.0, 3.7)."""
    try:
        cap, volt = text.split("@")
        return (float(cap.lower().replace("mah", "")),
                float(volt.lower().replace("v", "")))
    except (ValueError, AttributeError):
        raise ValidationError("battery", f"expected '<mAh>mAh@<V>V', got {text!r}")


# ---------------------------------------------------------------------------
# synth: declarative spec -> recording file

def _spec_from_json(doc: dict) -> SynthSpec:
    eeg = SsvepSpec(**doc["eeg"]) if "eeg" in doc else None
    cardiac = CardiacSpec(**doc["cardiac"]) if "cardiac" in doc else None
    emg = None
    if "emg" in doc:
        raw = dict(doc["emg"])
        raw["bursts"] = [tuple(b[:2]) + (list(b[2]), b[3]) for b in raw.get("bursts", [])]
        emg = EmgSpec(**raw)
    return SynthSpec(seed=int(doc.get("seed", 0)),
                     duration=float(doc.get("duration", 10.0)),
                     sample_rate=float(doc.get("sample_rate", 500.0)),
                     modalities={m.upper() for m in doc.get("modalities", ["EEG"])},
                     eeg=eeg, ecg_ppg=cardiac, emg=emg)


def _packetize(values: np.ndarray, stream_id: int, frames_per_packet: int,
               stride: int, quantize) -> list:
    codes = quantize(values)
    packets = []
    seq = 0
    for j0 in range(0, codes.shape[1], frames_per_packet):
        chunk = codes[:, j0:j0 + frames_per_packet]
        packets.append(proto.encode(chunk, stream_id, seq, j0 * stride))
        seq += 1
    return packets


def record_to_recording(record, gain: int = 6, exg_kind: str | None = None) -> gateway.Recording:
    """Quantize a synthesized record into the recording file format.

    The biopotential modality (eeg > emg > ecg when several exist) rides the
    ExG stream through the front-end quantizer with noise off; optical and
    inertial channels use their fixed code scales. All streams keep the
    record's own sample rate.
    """
    fs = record.sample_rate
    if fs != int(fs) or TICK_HZ % int(fs):
        raise ValidationError("sample_rate", f"{fs} does not divide the {TICK_HZ} Hz tick clock")
    stride = TICK_HZ // int(fs)
    if exg_kind is None:
        exg_kind = next((m for m in (EEG, EMG, ECG) if m in record.channels), None)

    header = {"magic": "biogap-recording", "version": gateway.FILE_VERSION,
              "preset": "synth", "tick_hz": TICK_HZ, "start_time": 0.0,
              "streams": {}}
    packets = []
    fpp_exg = max(1, int(round(EXG_PACKET_S * fs)))
    if exg_kind is not None:
        x = record.modality(exg_kind)
        n_ch = x.shape[0]
        cfg = afe_mod.AfeConfig(sample_rate=int(fs), gain=gain,
                                channels_enabled=(1 << n_ch) - 1, noise_enabled=False)
        cfg.validate()

        def quant(vals):
            return afe_mod.digitize(vals, cfg).codes

        packets += _packetize(x, proto.STREAM_EXG, fpp_exg, stride, quant)
        header["afe"] = {"sample_rate": int(fs), "gain": gain,
                         "channels_enabled": (1 << n_ch) - 1, "resolution": 24,
                         "supply": "bipolar", "noise_enabled": False}
        header["streams"][str(proto.STREAM_EXG)] = {"kind": exg_kind, "rate": int(fs),
                                                    "channels": n_ch}
    if PPG in record.channels:
        packets += _packetize(
            record.modality(PPG), proto.STREAM_PPG, PPG_FRAMES_PER_PACKET, stride,
            lambda v: np.clip(np.rint(v * PPG_CODE_SCALE), proto.CODE_LO,
                              proto.CODE_HI).astype(np.int32))
        header["streams"][str(proto.STREAM_PPG)] = {"kind": "ppg", "rate": int(fs),
                                                    "channels": 1}
    if ACC in record.channels:
        packets += _packetize(
            record.modality(ACC), proto.STREAM_IMU, IMU_FRAMES_PER_PACKET, stride,
            lambda v: np.clip(np.rint(v * IMU_CODE_SCALE), proto.CODE_LO,
                              proto.CODE_HI).astype(np.int32))
        header["streams"][str(proto.STREAM_IMU)] = {"kind": "acc", "rate": int(fs),
                                                    "channels": 3}
    packets.sort(key=lambda p: (proto.decode(p).timestamp_ticks, proto.decode(p).stream_id))
    return gateway.Recording(header=header, packets=packets)


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        doc = json.load(fh)
    annotations: dict = {}
    if "protocol" in doc:
        p = dict(doc["protocol"])
        record, segments = ssvep_protocol(
            freqs=tuple(p.get("freqs", (7.5, 11.5, 13.5, 15.5))),
            snr_db=float(p.get("snr_db", 0.0)),
            n_channels=int(p.get("n_channels", 8)),
            sample_rate=float(doc.get("sample_rate", 250.0)),
            stim_s=float(p.get("stim_s", 25.0)), rest_s=float(p.get("rest_s", 10.0)),
            reps=int(p.get("reps", 3)), seed=int(doc.get("seed", 0)),
            background=p.get("background", "pink"))
        annotations["segments"] = [[s.start, s.end, s.freq] for s in segments]
    else:
        spec = _spec_from_json(doc)
        record = synthesize(spec)
        truth = ground_truth(spec)
        annotations = {
            "r_peaks_s": [float(v) for v in truth.r_peaks],
            "emg_bursts": [[b[0], b[1], list(b[2]), b[3]] for b in truth.emg_bursts],
            "segments": [[s.start, s.end, s.freq] for s in truth.ssvep_segments],
        }
    rec = record_to_recording(record, gain=int(doc.get("gain", 6)))
    rec.save(args.out)
    sidecar = args.annotations or (args.out + ".annotations.json")
    with open(sidecar, "w") as fh:
        json.dump(annotations, fh, sort_keys=True, indent=1)
    print(json.dumps({"out": args.out, "annotations": sidecar,
                      "packets": len(rec.packets),
                      "duration_s": record.duration}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# sim / stream

def cmd_sim(args) -> int:
    link = parse_link(args.link)
    session, recording = gateway.run_session(
        preset=args.preset, link=link, duration_s=args.duration, seed=args.seed,
        mode=args.mode, out_path=args.out, buffer_bits=args.buffer_bits)
    stats = {str(sid): {"packets": s.packets, "frames": s.frames, "gaps": s.gaps,
                        "overflow_flags": s.overflow_flags}
             for sid, s in session.stream_stats.items()}
    print(json.dumps({"out": args.out, "preset": args.preset,
                      "duration_s": args.duration, "seed": args.seed,
                      "link": {"sent": session.link_stats.sent,
                               "delivered": session.link_stats.delivered,
                               "dropped": session.link_stats.dropped},
                      "streams": stats}, sort_keys=True))
    return 0


def cmd_stream(args) -> int:
    from .server import create_app, serve

    app = create_app(preset=args.preset, seed=args.seed, link=parse_link(args.link))
    serve(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# analyze

def _reconstruct_stream(recording: gateway.Recording, stream_id: int,
                        n_channels: int, to_units) -> np.ndarray | None:
    cols = []
    for raw in recording.packets:
        try:
            pkt = proto.decode(raw)
        except proto.ProtocolError:
            continue
        if pkt.stream_id != stream_id or pkt.frame_count == 0:
            continue
        cols.append(to_units(pkt.codes(n_channels)))
    if not cols:
        return None
    return np.concatenate(cols, axis=1)


def cmd_analyze(args) -> int:
    rec = gateway.Recording.load(args.recording)
    header = rec.header
    out: dict = {"recording": args.recording, "streams": header.get("streams", {})}
    afe_info = header.get("afe")
    exg_meta = header.get("streams", {}).get(str(proto.STREAM_EXG))

    exg = None
    if afe_info and exg_meta:
        gain = afe_info["gain"]
        exg = _reconstruct_stream(rec, proto.STREAM_EXG, exg_meta["channels"],
                                  lambda codes: afe_mod.codes_to_uv(codes, gain))
    ppg_meta = header.get("streams", {}).get(str(proto.STREAM_PPG))
    ppg = _reconstruct_stream(rec, proto.STREAM_PPG, 1,
                              lambda codes: codes / PPG_CODE_SCALE) if ppg_meta else None

    if exg is not None and exg_meta["kind"] == ECG:
        fs = float(exg_meta["rate"])
        sos = dsp.design_butterworth(dsp.FilterSpec("bandpass", 10, fs, 0.5, 30.0))
        ecg_f = dsp.filtfilt(sos, exg[0])
        peaks = dsp.detect_r_peaks(ecg_f, fs)
        out["r_peaks"] = [int(i) for i in peaks]
        out["r_peak_times_s"] = [float(i / fs) for i in peaks]
        out["filters"] = {"ecg": "bandpass 0.5-30 Hz order 10"}
        if ppg is not None:
            # ptt is a time delay; score it at the optical stream's own rate
            pfs = float(ppg_meta["rate"])
            sos_p = dsp.design_butterworth(dsp.FilterSpec("bandpass", 10, pfs, 0.5, 15.0))
            ppg_f = dsp.filtfilt(sos_p, ppg[0])
            peaks_p = np.rint(np.asarray(peaks) * pfs / fs).astype(np.int64)
            result = dsp.ptt(peaks_p, ppg_f, pfs)
            out["ptt"] = {"median_s": result.median_s, "rate": pfs,
                          "per_beat_s": [float(v) for v in result.per_beat_s],
                          "skipped": result.skipped}
            out["filters"]["ppg"] = "bandpass 0.5-15 Hz order 10"
    if exg is not None and exg_meta["kind"] == EMG:
        fs = float(exg_meta["rate"])
        bins = [dsp.rms_bins(ch, args.bin_ms, fs) for ch in exg]
        out["emg_rms"] = {"bin_ms": args.bin_ms,
                          "bins": [[float(v) for v in b] for b in bins]}
    if exg is not None and exg_meta["kind"] == EEG:
        out["note"] = "EEG stream present; use the ssvep subcommand for detection"

    text = json.dumps(out, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# ssvep

def cmd_ssvep(args) -> int:
    rec = gateway.Recording.load(args.recording)
    header = rec.header
    exg_meta = header["streams"][str(proto.STREAM_EXG)]
    afe_info = header["afe"]
    gain = afe_info["gain"]
    fs = float(exg_meta["rate"])
    x = _reconstruct_stream(rec, proto.STREAM_EXG, exg_meta["channels"],
                            lambda codes: afe_mod.codes_to_uv(codes, gain))
    if x is None:
        print(json.dumps({"error": "no ExG frames in recording"}))
        return 1

    candidates = tuple(args.freqs) if args.freqs else ssvep.DEFAULT_CANDIDATES
    series = [{"t_s": t, "decision": r.decision,
               "scores": {str(s.freq): {"cca": s.cca, "ncca": s.ncca}
                          for s in r.scores}}
              for t, r in gateway.host_classify(rec, window_s=args.window,
                                                hop_s=args.hop,
                                                candidates=candidates)]
    out: dict = {"recording": args.recording, "window_s": args.window,
                 "series": series}

    if args.annotations:
        with open(args.annotations) as fh:
            ann = json.load(fh)
        segments = [Segment(a, b, f) for a, b, f in ann["segments"]]
        grid = tuple(args.grid) if args.grid else (1.0, 2.0, 3.0, 5.0, 10.0)
        curves = ssvep.latency_curve(x, fs, segments, grid)
        out["latency"] = {
            "windows_s": list(curves.windows_s),
            "targets": {str(f): [None if v is None else float(v) for v in vals]
                        for f, vals in curves.targets.items()},
            "rest": {str(f): [None if v is None else float(v) for v in vals]
                     for f, vals in curves.rest.items()},
        }
    text = json.dumps(out, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# power / export

def cmd_power(args) -> int:
    battery = parse_battery(args.battery) if args.battery else power.DEFAULT_BATTERY
    report = power.power_report(args.preset, battery=battery)
    if args.workload:
        mj, rate = args.workload
        report = power.attach_workload(report, "cli_workload", (float(mj), float(rate)))
    if args.json:
        print(json.dumps(report.as_dict(), sort_keys=True))
    else:
        print(power.format_report(report))
    return 0


def cmd_export(args) -> int:
    rec = gateway.Recording.load(args.recording)
    result = gateway.export(rec, args.format, args.out)
    print(json.dumps({"files": result.files, "skipped": result.skipped},
                     sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biogap",
                                 description="wearable biosignal platform simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("sim", help="run a simulated session to a recording file")
    p.add_argument("--preset", default="headband",
                   choices=("headband", "sleeve", "chestband"))
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--link", default=None,
                   help="JSON link model or capacity shorthand like 1.4M")
    p.add_argument("--mode", default="streaming", choices=("streaming", "edge_ai"))
    p.add_argument("--buffer-bits", type=int, default=None, dest="buffer_bits")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("stream", help="serve the live console websocket")
    p.add_argument("--preset", default="headband",
                   choices=("headband", "sleeve", "chestband"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--link", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("synth", help="render a declarative signal spec to a recording")
    p.add_argument("--spec", required=True, help="JSON spec document")
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", default=None,
                   help="annotation sidecar path (default <out>.annotations.json)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("analyze", help="filtered traces, R-peaks, PTT, EMG RMS")
    p.add_argument("recording")
    p.add_argument("--bin-ms", type=float, default=100.0, dest="bin_ms")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("ssvep", help="decision series and latency curves")
    p.add_argument("recording")
    p.add_argument("--annotations", default=None)
    p.add_argument("--window", type=float, default=3.0)
    p.add_argument("--hop", type=float, default=0.5)
    p.add_argument("--freqs", type=float, nargs="*", default=None)
    p.add_argument("--grid", type=float, nargs="*", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ssvep)

    p = sub.add_parser("power", help="form-factor power report")
    p.add_argument("--preset", default="headband",
                   choices=("headband", "sleeve", "chestband"))
    p.add_argument("--battery", default=None, help="e.g. 150mAh@3.7V")
    p.add_argument("--workload", type=float, nargs=2, default=None,
                   metavar=("MJ_PER_UNIT", "UNITS_PER_S"))
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_power)

    p = sub.add_parser("export", help="recording to csv or packet stream")
    p.add_argument("recording")
    p.add_argument("--format", default="csv", choices=("csv", "packets"))
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(fn=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
