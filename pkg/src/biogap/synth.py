"""Deterministic synthetic biosignal generator.

Produces EEG with optional steady-state tones over pink or white background,
ECG as a sum-of-Gaussians beat template, PPG pulse trains whose steepest
rising edge lags each R-peak by a configurable transit time, burst-gated
EMG, and a gravity-plus-bumps accelerometer model.

All randomness comes from numpy SeedSequence substreams keyed by modality,
so annotations (R-peak times, burst intervals, stimulus segments) can be
recomputed without regenerating any waveform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .frames import ACC, ECG, EEG, EMG, MODALITIES, PPG, SignalRecord

# Nominal channel scales, in the units each modality is generated in.
EEG_RMS_UV = 10.0      # background RMS per EEG channel
EMG_FLOOR_UV = 1.0     # resting EMG noise floor
PPG_AMPLITUDE = 1.0    # pulse peak, arbitrary units
ACC_GRAVITY_MG = 1000.0
ACC_NOISE_MG = 10.0
ACC_BUMP_MG = 100.0

# Band that defines tone-to-background SNR and limits synthetic EEG content.
EEG_BAND = (0.5, 100.0)

# Substream order is part of the determinism contract; never reorder.
_STREAM_NAMES = ("eeg", "emg", "beats", "acc", "aux")


@dataclass
class SsvepSpec:
    """Steady-state tone embedded in the EEG channels. target_freq 0 means rest."""

    target_freq: float = 0.0
    snr_db: float = 0.0
    n_channels: int = 8
    background: str = "pink"


@dataclass
class CardiacSpec:
    """Shared beat train for ECG and PPG. ptt is R-peak to PPG steepest rise."""

    heart_rate: float = 60.0
    ptt: float = 0.220
    rr_jitter: float = 0.0


@dataclass
class EmgSpec:
    """Activation bursts: (start s, end s, channel indices, amplitude uV RMS)."""

    n_channels: int = 16
    bursts: list = field(default_factory=list)


@dataclass
class SynthSpec:
    seed: int
    duration: float
    sample_rate: float
    modalities: set
    eeg: SsvepSpec | None = None
    ecg_ppg: CardiacSpec | None = None
    emg: EmgSpec | None = None


@dataclass(frozen=True)
class Segment:
    """One annotated stretch of a record; freq 0 marks rest."""

    start: float
    end: float
    freq: float


@dataclass
class GroundTruth:
    r_peaks: np.ndarray
    emg_bursts: list
    ssvep_segments: list


def validate(spec: SynthSpec) -> None:
    """Raise ValidationError naming the first offending field."""
    if not isinstance(spec.seed, (int, np.integer)) or not 0 <= int(spec.seed) < 2 ** 64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    if not spec.duration > 0:
        raise ValidationError("duration", f"must be > 0, got {spec.duration}")
    if not spec.sample_rate > 0:
        raise ValidationError("sample_rate", f"must be > 0, got {spec.sample_rate}")
    if not spec.modalities:
        raise ValidationError("modalities", "at least one modality must be enabled")
    unknown = set(spec.modalities) - set(MODALITIES)
    if unknown:
        raise ValidationError("modalities", f"unknown modality names {sorted(unknown)}")

    if EEG in spec.modalities:
        eeg = spec.eeg or SsvepSpec()
        if eeg.target_freq < 0:
            raise ValidationError("eeg.target_freq", "must be >= 0")
        if eeg.target_freq >= spec.sample_rate / 2:
            raise ValidationError("eeg.target_freq", "must be below Nyquist")
        if eeg.n_channels < 1:
            raise ValidationError("eeg.n_channels", "must be >= 1")
        if eeg.background not in ("white", "pink"):
            raise ValidationError("eeg.background", f"unknown background {eeg.background!r}")
    if ECG in spec.modalities or PPG in spec.modalities:
        card = spec.ecg_ppg or CardiacSpec()
        if not 30 <= card.heart_rate <= 220:
            raise ValidationError("ecg_ppg.heart_rate", "must be in [30, 220] bpm")
        if card.ptt < 0:
            raise ValidationError("ecg_ppg.ptt", "must be >= 0")
        if not 0 <= card.rr_jitter <= 0.2:
            raise ValidationError("ecg_ppg.rr_jitter", "must be in [0, 0.2]")
    if EMG in spec.modalities:
        emg = spec.emg or EmgSpec()
        if emg.n_channels < 1:
            raise ValidationError("emg.n_channels", "must be >= 1")
        for i, (start, end, chans, amp) in enumerate(emg.bursts):
            if not (0 <= start < end <= spec.duration):
                raise ValidationError(f"emg.bursts[{i}]",
                                      f"interval ({start}, {end}) outside [0, {spec.duration}]")
            if amp <= 0:
                raise ValidationError(f"emg.bursts[{i}].amplitude", "must be > 0")
            bad = [c for c in chans if not 0 <= c < emg.n_channels]
            if bad:
                raise ValidationError(f"emg.bursts[{i}].channels", f"indices {bad} out of range")


def _substreams(seed: int) -> dict:
    kids = np.random.SeedSequence(int(seed)).spawn(len(_STREAM_NAMES))
    return {name: np.random.default_rng(kid) for name, kid in zip(_STREAM_NAMES, kids)}


def _shaped_noise(rng, n: int, fs: float, f_lo: float, f_hi: float, color: str) -> np.ndarray:
    """Unit-RMS Gaussian noise confined to [f_lo, f_hi] with flat or 1/f spectrum."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    mask = (f >= f_lo) & (f <= f_hi)
    if not mask.any():
        return np.zeros(n)
    shape = np.zeros_like(f)
    if color == "pink":
        shape[mask] = 1.0 / np.sqrt(np.maximum(f[mask], f_lo))
    else:
        shape[mask] = 1.0
    out = np.fft.irfft(spec * shape, n)
    rms = math.sqrt(float(np.mean(out * out)))
    return out / rms if rms > 0 else out


def _beat_times(card: CardiacSpec, duration: float, rng) -> np.ndarray:
    """R-peak instants, extending one beat past the record end for waveform tails."""
    rr0 = 60.0 / card.heart_rate
    t = 0.35 * min(1.0, rr0 / 0.8)
    times = []
    while t < duration + rr0:
        times.append(t)
        t += rr0 * (1.0 + card.rr_jitter * rng.uniform(-1.0, 1.0))
    return np.asarray(times)


# ECG beat template: (amplitude uV, center offset s, width s, scales_with_rr)
# Widths keep lobes well separated so the R sample is the unambiguous maximum.
_ECG_LOBES = (
    (120.0, -0.160, 0.025, True),   # P
    (-150.0, -0.030, 0.008, False), # Q
    (1000.0, 0.000, 0.012, False),  # R
    (-200.0, 0.030, 0.008, False),  # S
    (300.0, 0.250, 0.060, True),    # T
)


def _render_ecg(times: np.ndarray, beats: np.ndarray, base_rr: float) -> np.ndarray:
    out = np.zeros_like(times)
    fs = 1.0 / (times[1] - times[0]) if len(times) > 1 else 1.0
    for k, tk in enumerate(beats):
        rr = (beats[k + 1] - tk) if k + 1 < len(beats) else base_rr
        s = min(1.0, rr / 0.8)
        i0 = max(0, int((tk - 0.30) * fs))
        i1 = min(len(times), int((tk + 0.45) * fs) + 1)
        if i0 >= i1:
            continue
        tt = times[i0:i1] - tk
        seg = np.zeros_like(tt)
        for amp, mu, sigma, scaled in _ECG_LOBES:
            m = mu * s if scaled else mu
            w = sigma * s if scaled else sigma
            seg += amp * np.exp(-0.5 * ((tt - m) / w) ** 2)
        out[i0:i1] += seg
    return out


def _render_ppg(times: np.ndarray, beats: np.ndarray, base_rr: float, ptt: float) -> np.ndarray:
    """Raised-cosine pulses: rise twice as fast as decay, steepest rise at beat + ptt."""
    out = np.zeros_like(times)
    fs = 1.0 / (times[1] - times[0]) if len(times) > 1 else 1.0
    for k, tk in enumerate(beats):
        rr = (beats[k + 1] - tk) if k + 1 < len(beats) else base_rr
        t_rise = min(0.15, 0.25 * rr)
        t_decay = min(0.40, 0.55 * rr)
        start = tk + ptt - t_rise / 2.0
        i0 = max(0, int(start * fs))
        i1 = min(len(times), int((start + t_rise + t_decay) * fs) + 1)
        if i0 >= i1:
            continue
        tau = times[i0:i1] - start
        seg = np.zeros_like(tau)
        rise = (tau >= 0) & (tau < t_rise)
        seg[rise] = 0.5 * (1.0 - np.cos(np.pi * tau[rise] / t_rise))
        fall = (tau >= t_rise) & (tau <= t_rise + t_decay)
        seg[fall] = 0.5 * (1.0 + np.cos(np.pi * (tau[fall] - t_rise) / t_decay))
        out[i0:i1] += PPG_AMPLITUDE * seg
    return out


def _emg_envelope(n: int, fs: float, emg: EmgSpec) -> np.ndarray:
    env = np.full((emg.n_channels, n), EMG_FLOOR_UV)
    t = np.arange(n) / fs
    for start, end, chans, amp in emg.bursts:
        ramp = min(0.010, (end - start) / 2.0)
        up = np.clip((t - start) / ramp, 0.0, 1.0)
        down = np.clip((end - t) / ramp, 0.0, 1.0)
        profile = np.minimum(up, down) * ((t >= start) & (t <= end))
        for c in chans:
            env[c] = np.maximum(env[c], amp * profile)
    return env


def _tone(times: np.ndarray, freq: float, snr_db: float, phase: float) -> np.ndarray:
    amp = math.sqrt(2.0) * EEG_RMS_UV * 10.0 ** (snr_db / 20.0)
    return amp * np.sin(2.0 * np.pi * freq * times + phase)


def synthesize(spec: SynthSpec) -> SignalRecord:
    """Generate all enabled modalities on one shared sample clock.

    Output is a pure function of the spec (seed included); calling twice
    yields byte-identical arrays.
    """
    validate(spec)
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    t = np.arange(n) / fs
    rngs = _substreams(spec.seed)
    channels = {}

    if EEG in spec.modalities:
        eeg = spec.eeg or SsvepSpec()
        f_hi = min(EEG_BAND[1], 0.45 * fs)
        x = np.empty((eeg.n_channels, n))
        for c in range(eeg.n_channels):
            x[c] = EEG_RMS_UV * _shaped_noise(rngs["eeg"], n, fs, EEG_BAND[0], f_hi, eeg.background)
        if eeg.target_freq > 0:
            phase = rngs["eeg"].uniform(0.0, 2.0 * np.pi)
            x += _tone(t, eeg.target_freq, eeg.snr_db, phase)
        channels[EEG] = x

    beats = None
    if ECG in spec.modalities or PPG in spec.modalities:
        card = spec.ecg_ppg or CardiacSpec()
        beats = _beat_times(card, spec.duration, rngs["beats"])
        base_rr = 60.0 / card.heart_rate
        if ECG in spec.modalities:
            channels[ECG] = _render_ecg(t, beats, base_rr)[np.newaxis, :]
        if PPG in spec.modalities:
            channels[PPG] = _render_ppg(t, beats, base_rr, card.ptt)[np.newaxis, :]

    if EMG in spec.modalities:
        emg = spec.emg or EmgSpec()
        f_hi = min(250.0, 0.45 * fs)
        raw = np.empty((emg.n_channels, n))
        for c in range(emg.n_channels):
            raw[c] = _shaped_noise(rngs["emg"], n, fs, 20.0, f_hi, "white")
        channels[EMG] = raw * _emg_envelope(n, fs, emg)

    if ACC in spec.modalities:
        acc = rngs["acc"].standard_normal((3, n)) * ACC_NOISE_MG
        acc[2] += ACC_GRAVITY_MG
        if spec.emg is not None:
            for start, end, _chans, _amp in spec.emg.bursts:
                width = min(0.100, end - start)
                i0, i1 = int(start * fs), min(n, int((start + width) * fs) + 1)
                if i0 < i1:
                    tau = t[i0:i1] - start
                    acc[0, i0:i1] += ACC_BUMP_MG * 0.5 * (1 - np.cos(2 * np.pi * tau / width))
        channels[ACC] = acc

    if not channels:
        raise ValidationError("modalities", "at least one modality must be enabled")
    return SignalRecord(fs, channels)


def ground_truth(spec: SynthSpec) -> GroundTruth:
    """Annotations consistent with synthesize(spec), computed without waveforms."""
    validate(spec)
    rngs = _substreams(spec.seed)
    r_peaks = np.empty(0)
    if ECG in spec.modalities or PPG in spec.modalities:
        card = spec.ecg_ppg or CardiacSpec()
        beats = _beat_times(card, spec.duration, rngs["beats"])
        r_peaks = beats[beats < spec.duration]
    bursts = list((spec.emg.bursts if spec.emg else [])) if EMG in spec.modalities else []
    segments = []
    if EEG in spec.modalities:
        eeg = spec.eeg or SsvepSpec()
        segments = [Segment(0.0, spec.duration, eeg.target_freq)]
    return GroundTruth(r_peaks=r_peaks, emg_bursts=bursts, ssvep_segments=segments)


DEFAULT_STIMULUS_FREQS = (7.5, 11.5, 13.5, 15.5)


def ssvep_protocol(freqs=DEFAULT_STIMULUS_FREQS, snr_db: float = 0.0, n_channels: int = 8,
                   sample_rate: float = 250.0, stim_s: float = 25.0, rest_s: float = 10.0,
                   reps: int = 3, seed: int = 0, background: str = "pink"):
    """Full stimulation session: each repetition presents every frequency once,
    in seeded-shuffled order, each stimulus followed by a rest gap.

    Returns (record, segments) where segments annotate both stimulus stretches
    (freq > 0) and rests (freq == 0), in time order.
    """
    if not freqs:
        raise ValidationError("freqs", "need at least one stimulus frequency")
    if any(f <= 0 or f >= sample_rate / 2 for f in freqs):
        raise ValidationError("freqs", "stimulus frequencies must sit in (0, Nyquist)")
    if stim_s <= 0 or rest_s < 0 or reps < 1:
        raise ValidationError("protocol", "stim_s > 0, rest_s >= 0, reps >= 1 required")

    rngs = _substreams(seed)
    period = stim_s + rest_s
    duration = reps * len(freqs) * period
    fs = sample_rate
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    f_hi = min(EEG_BAND[1], 0.45 * fs)
    x = np.empty((n_channels, n))
    for c in range(n_channels):
        x[c] = EEG_RMS_UV * _shaped_noise(rngs["eeg"], n, fs, EEG_BAND[0], f_hi, background)

    segments = []
    cursor = 0.0
    for _rep in range(reps):
        order = list(freqs)
        rngs["aux"].shuffle(order)
        for freq in order:
            i0, i1 = int(round(cursor * fs)), int(round((cursor + stim_s) * fs))
            phase = rngs["aux"].uniform(0.0, 2.0 * np.pi)
            x[:, i0:i1] += _tone(t[i0:i1], freq, snr_db, phase)
            segments.append(Segment(cursor, cursor + stim_s, freq))
            if rest_s > 0:
                segments.append(Segment(cursor + stim_s, cursor + period, 0.0))
            cursor += period
    return SignalRecord(fs, {EEG: x}), segments
