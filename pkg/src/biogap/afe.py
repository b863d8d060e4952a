"""Behavioral model of the biopotential front-end.

Covers programmable gain, 24-bit quantization against a 2.4 V differential
reference, input-referred white noise calibrated to an integrated 0.5-100 Hz
RMS of 0.47 uV at gain 6 / 1 kSPS, channel masking, and the square-wave
contact-quality probe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError, ValidationError

SAMPLE_RATES = (250, 500, 1000, 2000, 4000, 8000, 16000, 32000)
GAINS = (1, 2, 3, 4, 6, 8, 12)
RESOLUTION_BITS = 24
FULL_SCALE_UV = 2.4e6  # differential reference, gain 1
CODE_MAX = 2 ** (RESOLUTION_BITS - 1) - 1
CODE_MIN = -(2 ** (RESOLUTION_BITS - 1))
N_PHYSICAL_CHANNELS = 16

# Integrated in-band noise target and the band it is defined over.
NOISE_RMS_UV = 0.47
NOISE_BAND = (0.5, 100.0)

# Contact verdict thresholds, dB of probe attenuation.
CONTACT_GOOD_DB = 6.0
CONTACT_OPEN_DB = 20.0

DEFAULT_PROBE = (31.25, 10.0)  # Hz, uV; off mains and below stimulus bands


@dataclass
class AfeConfig:
    sample_rate: int = 500
    gain: int = 6
    channels_enabled: int = 0xFFFF
    resolution: int = RESOLUTION_BITS
    supply: str = "bipolar"
    noise_enabled: bool = True

    def validate(self, acquiring: bool = True) -> None:
        if self.sample_rate not in SAMPLE_RATES:
            raise ValidationError("sample_rate", f"{self.sample_rate} not in {SAMPLE_RATES}")
        if self.gain not in GAINS:
            raise ValidationError("gain", f"{self.gain} not in {GAINS}")
        if not 0 <= self.channels_enabled <= 0xFFFF:
            raise ValidationError("channels_enabled", "must be a 16-bit mask")
        if acquiring and self.channels_enabled == 0:
            raise ValidationError("channels_enabled", "at least one channel must be enabled")
        if self.resolution != RESOLUTION_BITS:
            raise ValidationError("resolution", "only 24-bit operation is modeled")
        if self.supply not in ("unipolar", "bipolar"):
            raise ValidationError("supply", f"unknown supply mode {self.supply!r}")

    def enabled_channels(self) -> tuple:
        return tuple(c for c in range(N_PHYSICAL_CHANNELS) if self.channels_enabled >> c & 1)

    @property
    def lsb_uv(self) -> float:
        return FULL_SCALE_UV / (self.gain * 2 ** (RESOLUTION_BITS - 1))


@dataclass
class DigitizedBlock:
    """Quantizer output: one row of codes per enabled channel, saturation per frame."""

    codes: np.ndarray          # int32, shape (n_enabled, n)
    channels: tuple            # physical channel index per row
    saturated: np.ndarray      # bool, shape (n,), any channel railed at that frame
    gain: int
    sample_rate: int


def noise_sigma_uv(sample_rate: float) -> float:
    """Per-sample white-noise sigma whose 0.5-100 Hz content integrates to the target RMS.

    White noise spreads its variance uniformly over [0, fs/2]; the band holds a
    (band / (fs/2)) share of it, so sigma scales with sqrt(fs/2 / band_width).
    """
    band = NOISE_BAND[1] - NOISE_BAND[0]
    return NOISE_RMS_UV * math.sqrt((sample_rate / 2.0) / band)


def digitize(signals_uv, cfg: AfeConfig, rng=None, n_samples: int | None = None) -> DigitizedBlock:
    """Quantize per-channel microvolt traces to 24-bit codes.

    signals_uv carries one row per physical channel (row index = channel
    index); only rows selected by cfg.channels_enabled appear in the output.
    Saturation clamps and flags, it never raises.
    """
    cfg.validate()
    x = np.atleast_2d(np.asarray(signals_uv, dtype=np.float64))
    enabled = cfg.enabled_channels()
    if x.shape[0] < (max(enabled) + 1 if enabled else 0):
        raise ShapeError(f"need rows for channels {enabled}, got {x.shape[0]} rows")
    if n_samples is not None and x.shape[1] != n_samples:
        raise ShapeError(f"expected {n_samples} samples per channel, got {x.shape[1]}")

    sel = x[list(enabled), :]
    if cfg.noise_enabled:
        if rng is None:
            rng = np.random.default_rng(0)
        sel = sel + rng.standard_normal(sel.shape) * noise_sigma_uv(cfg.sample_rate)

    scaled = np.rint(sel * cfg.gain / FULL_SCALE_UV * 2 ** (RESOLUTION_BITS - 1))
    clipped = np.clip(scaled, CODE_MIN, CODE_MAX)
    saturated = np.any(scaled != clipped, axis=0)
    return DigitizedBlock(codes=clipped.astype(np.int32), channels=enabled,
                          saturated=saturated, gain=cfg.gain, sample_rate=cfg.sample_rate)


def codes_to_uv(codes, gain: int) -> np.ndarray:
    """Inverse of the quantizer scaling, exact up to the rounding step."""
    return np.asarray(codes, dtype=np.float64) * FULL_SCALE_UV / (gain * 2 ** (RESOLUTION_BITS - 1))


@dataclass
class ContactReport:
    """Per-channel probe attenuation and verdict, good/marginal/open."""

    channels: tuple
    attenuation_db: np.ndarray
    verdicts: tuple
    probe: tuple = DEFAULT_PROBE


def _verdict(att_db: float) -> str:
    if att_db < CONTACT_GOOD_DB:
        return "good"
    if att_db <= CONTACT_OPEN_DB:
        return "marginal"
    return "open"


def simulate_contact_signals(attenuations, probe, cfg: AfeConfig, duration: float = 1.0,
                             rng=None) -> np.ndarray:
    """Electrode model: the bias-path square wave arrives scaled per channel.

    attenuations holds one linear factor per physical channel (1 = perfect
    contact, 0 = open lead). Front-end noise rides on top when enabled.
    """
    freq, amp = probe
    fs = cfg.sample_rate
    if freq >= fs / 2:
        raise ConfigurationError(f"probe at {freq} Hz needs sample rate above {2 * freq} SPS")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    square = amp * np.sign(np.sin(2.0 * np.pi * freq * t))
    att = np.asarray(attenuations, dtype=np.float64)
    x = att[:, np.newaxis] * square[np.newaxis, :]
    if cfg.noise_enabled:
        if rng is None:
            rng = np.random.default_rng(0)
        x = x + rng.standard_normal(x.shape) * noise_sigma_uv(fs)
    return x


def contact_check(channel_signals, probe, sample_rate: float,
                  channels: tuple | None = None) -> ContactReport:
    """Estimate per-channel probe attenuation by single-bin correlation.

    The square wave is measured through its fundamental (4A/pi); correlation
    runs over a whole number of probe periods to keep the bin leak-free.
    """
    freq, amp = probe
    if freq >= sample_rate / 2:
        raise ConfigurationError(f"probe at {freq} Hz is not observable below Nyquist")
    x = np.atleast_2d(np.asarray(channel_signals, dtype=np.float64))
    n = x.shape[1]
    periods = int(n * freq / sample_rate)
    if periods < 1:
        raise ConfigurationError("record shorter than one probe period")
    m = int(round(periods * sample_rate / freq))
    m = min(m, n)
    t = np.arange(m) / sample_rate
    basis = np.exp(-2.0j * np.pi * freq * t)
    recovered = 2.0 / m * np.abs(x[:, :m] @ basis)

    injected = 4.0 * amp / np.pi
    floor = injected * 10.0 ** (-120.0 / 20.0)
    att_db = 20.0 * np.log10(injected / np.maximum(recovered, floor))
    att_db = np.maximum(att_db, 0.0)
    chans = channels if channels is not None else tuple(range(x.shape[0]))
    verdicts = tuple(_verdict(v) for v in att_db)
    return ContactReport(channels=tuple(chans), attenuation_db=att_db,
                         verdicts=verdicts, probe=tuple(probe))
