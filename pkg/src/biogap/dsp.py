"""Numerical core: IIR design and filtering, FFT, windowed RMS, beat detectors.

Filters are designed from the analog Butterworth prototype with frequency
pre-warping and the bilinear transform, realized as cascaded biquads run in
direct-form-II-transposed. The FFT is an iterative radix-2 implementation.
Everything runs in 64-bit floats.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError, NumericError, SizeError, ValidationError

FILTER_KINDS = ("bandpass", "lowpass", "highpass", "notch")


@dataclass
class FilterSpec:
    kind: str
    order: int
    sample_rate: float
    f_lo: float | None = None
    f_hi: float | None = None

    def validate(self) -> None:
        if self.kind not in FILTER_KINDS:
            raise DesignError(f"unknown filter kind {self.kind!r}")
        if self.order < 2 or self.order % 2 != 0:
            raise DesignError(f"order must be an even integer >= 2, got {self.order}")
        if self.sample_rate <= 0:
            raise DesignError("sample_rate must be > 0")
        nyq = self.sample_rate / 2.0
        if self.kind in ("bandpass", "notch"):
            if self.f_lo is None or self.f_hi is None:
                raise DesignError(f"{self.kind} needs both f_lo and f_hi")
            if not 0 < self.f_lo < self.f_hi:
                raise DesignError(f"need 0 < f_lo < f_hi, got ({self.f_lo}, {self.f_hi})")
            if self.f_hi >= nyq:
                raise DesignError(f"f_hi {self.f_hi} Hz at or above Nyquist {nyq} Hz")
        elif self.kind == "lowpass":
            if self.f_hi is None or not 0 < self.f_hi < nyq:
                raise DesignError(f"lowpass cutoff must sit in (0, {nyq}), got {self.f_hi}")
        else:  # highpass
            if self.f_lo is None or not 0 < self.f_lo < nyq:
                raise DesignError(f"highpass cutoff must sit in (0, {nyq}), got {self.f_lo}")


@dataclass
class SosCascade:
    """Biquad cascade; each row is (b0, b1, b2, a1, a2) with a0 normalized to 1."""

    sections: np.ndarray
    sample_rate: float = 0.0
    spec: FilterSpec | None = None

    @property
    def order(self) -> int:
        return 2 * len(self.sections)

    def poles(self) -> np.ndarray:
        roots = []
        for _b0, _b1, _b2, a1, a2 in self.sections:
            roots.extend(np.roots([1.0, a1, a2]))
        return np.asarray(roots)


def _prewarp(f: float, fs: float) -> float:
    return 2.0 * fs * math.tan(math.pi * f / fs)


def _prototype_poles(n: int) -> list:
    return [cmath.exp(1j * math.pi * (2 * k + n - 1) / (2 * n)) for k in range(1, n + 1)]


def _bilinear(points: list, fs: float) -> list:
    return [(2.0 * fs + s) / (2.0 * fs - s) for s in points]


def _pair_conjugates(values: list) -> list:
    """Group complex values into conjugate (or real) pairs for biquad building."""
    pool = list(values)
    pairs = []
    reals = []
    while pool:
        v = pool.pop(0)
        if abs(v.imag) < 1e-10:
            reals.append(v.real)
            continue
        match = min(range(len(pool)), key=lambda i: abs(pool[i] - v.conjugate()))
        pool.pop(match)
        pairs.append((v, v.conjugate()))
    reals.sort()
    for i in range(0, len(reals), 2):
        pairs.append((complex(reals[i]), complex(reals[i + 1])))
    return pairs


def _response_at(sections, theta: float) -> complex:
    z_inv = cmath.exp(-1j * theta)
    h = 1.0 + 0.0j
    for b0, b1, b2, a1, a2 in sections:
        h *= (b0 + b1 * z_inv + b2 * z_inv ** 2) / (1.0 + a1 * z_inv + a2 * z_inv ** 2)
    return h


def design_butterworth(spec: FilterSpec) -> SosCascade:
    """Realize a FilterSpec as a stable biquad cascade.

    Bandpass order counts total poles, so a 10th-order bandpass is a 5-pole
    prototype and five sections. The notch kind is a standard constrained
    biquad (zeros on the unit circle), not a Butterworth shape.
    """
    spec.validate()
    if spec.kind == "notch":
        return _design_notch(spec)
    fs = spec.sample_rate

    if spec.kind == "lowpass":
        n = spec.order
        wc = _prewarp(spec.f_hi, fs)
        apoles = [p * wc for p in _prototype_poles(n)]
        azeros = []
        n_inf = n  # zeros at infinity land on z = -1
        ref_theta = 0.0
    elif spec.kind == "highpass":
        n = spec.order
        wc = _prewarp(spec.f_lo, fs)
        apoles = [wc / p for p in _prototype_poles(n)]
        azeros = [0.0 + 0.0j] * n
        n_inf = 0
        ref_theta = math.pi
    else:  # bandpass
        n = spec.order // 2
        w1, w2 = _prewarp(spec.f_lo, fs), _prewarp(spec.f_hi, fs)
        w0sq = w1 * w2
        bw = w2 - w1
        apoles = []
        for p in _prototype_poles(n):
            disc = cmath.sqrt((p * bw) ** 2 - 4.0 * w0sq)
            apoles.extend([(p * bw + disc) / 2.0, (p * bw - disc) / 2.0])
        azeros = [0.0 + 0.0j] * n
        n_inf = n
        # reference: the digital image of the geometric center frequency
        ref_theta = 2.0 * math.atan(math.sqrt(w0sq) / (2.0 * fs))

    zpoles = _bilinear(apoles, fs)
    if max(abs(p) for p in zpoles) >= 1.0:
        raise DesignError("design produced poles on or outside the unit circle")
    zzeros = _bilinear(azeros, fs) + [-1.0 + 0.0j] * n_inf

    pole_pairs = _pair_conjugates(zpoles)
    zero_pairs = _pair_conjugates(zzeros)
    sections = []
    for (p1, p2), (z1, z2) in zip(pole_pairs, zero_pairs):
        b = [1.0, -(z1 + z2).real, (z1 * z2).real]
        a = [-(p1 + p2).real, (p1 * p2).real]
        sections.append([b[0], b[1], b[2], a[0], a[1]])

    c = _response_at(sections, ref_theta)
    if abs(c) == 0:
        raise DesignError("degenerate response at the normalization frequency")
    per_section = (1.0 / abs(c)) ** (1.0 / len(sections))
    for sec in sections:
        sec[0] *= per_section
        sec[1] *= per_section
        sec[2] *= per_section
    if c.real < 0:  # keep the passband response positive, not just unit magnitude
        for i in range(3):
            sections[0][i] = -sections[0][i]

    sos = SosCascade(np.asarray(sections, dtype=np.float64), sample_rate=fs, spec=spec)
    assert np.all(np.abs(sos.poles()) < 1.0)
    return sos


def _design_notch(spec: FilterSpec) -> SosCascade:
    """Constrained biquad notch; (f_lo, f_hi) are the stopband edges."""
    fs = spec.sample_rate
    f0 = (spec.f_lo + spec.f_hi) / 2.0
    bw = spec.f_hi - spec.f_lo
    q = f0 / bw
    w0 = 2.0 * math.pi * f0 / fs
    alpha = math.sin(w0) / (2.0 * q)
    a0 = 1.0 + alpha
    row = [1.0 / a0, -2.0 * math.cos(w0) / a0, 1.0 / a0,
           -2.0 * math.cos(w0) / a0, (1.0 - alpha) / a0]
    sections = [list(row) for _ in range(spec.order // 2)]
    sos = SosCascade(np.asarray(sections, dtype=np.float64), sample_rate=fs, spec=spec)
    assert np.all(np.abs(sos.poles()) < 1.0)
    return sos


def design_notch(freq: float, sample_rate: float, q: float = 30.0, order: int = 2) -> SosCascade:
    half_bw = freq / q / 2.0
    return design_butterworth(FilterSpec("notch", order, sample_rate,
                                         f_lo=freq - half_bw, f_hi=freq + half_bw))


def freq_response(sos: SosCascade, freqs, sample_rate: float | None = None) -> np.ndarray:
    fs = sample_rate or sos.sample_rate
    return np.asarray([_response_at(sos.sections, 2.0 * math.pi * f / fs) for f in np.atleast_1d(freqs)])


def _check_finite(x: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise NumericError(int(bad[0]), "input must be finite")


class SosState:
    """Per-channel direct-form-II-transposed state for streaming use."""

    def __init__(self, sos: SosCascade, n_channels: int = 1):
        self.sos = sos
        self.z = np.zeros((len(sos.sections), 2, n_channels))

    def process(self, x: np.ndarray) -> np.ndarray:
        """x: (n_channels, n) or (n,); state carries across calls."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        y = np.atleast_2d(x).copy()
        _check_finite(y)
        for s, (b0, b1, b2, a1, a2) in enumerate(self.sos.sections):
            z1, z2 = self.z[s, 0], self.z[s, 1]
            out = np.empty_like(y)
            for i in range(y.shape[1]):
                xi = y[:, i]
                yi = b0 * xi + z1
                z1[...] = b1 * xi + z2 - a1 * yi
                z2[...] = b2 * xi - a2 * yi
                out[:, i] = yi
            y = out
        return y[0] if single else y


def sosfilt(sos: SosCascade, x) -> np.ndarray:
    """Causal cascade filtering from zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        _check_finite(x)
        y = x.astype(np.float64).copy()
        for b0, b1, b2, a1, a2 in sos.sections:
            z1 = 0.0
            z2 = 0.0
            out = np.empty_like(y)
            for i in range(len(y)):
                xi = y[i]
                yi = b0 * xi + z1
                z1 = b1 * xi + z2 - a1 * yi
                z2 = b2 * xi - a2 * yi
                out[i] = yi
            y = out
        return y
    state = SosState(sos, n_channels=x.shape[0])
    return state.process(x)


def filtfilt(sos: SosCascade, x, padlen: int | None = None) -> np.ndarray:
    """Zero-phase forward-backward filtering with odd-reflection padding."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    _check_finite(x2)
    n = x2.shape[1]
    if padlen is None:
        padlen = 3 * sos.order
    padlen = min(padlen, n - 1)
    if padlen > 0:
        head = 2.0 * x2[:, :1] - x2[:, padlen:0:-1]
        tail = 2.0 * x2[:, -1:] - x2[:, -2:-padlen - 2:-1]
        ext = np.concatenate([head, x2, tail], axis=1)
    else:
        ext = x2
    y = sosfilt(sos, ext if not single else ext[0])
    y = np.atleast_2d(y)[:, ::-1]
    y = np.atleast_2d(sosfilt(sos, y if not single else y[0]))[:, ::-1]
    out = y[:, padlen:padlen + n]
    return out[0] if single else out


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x, n: int | None = None) -> np.ndarray:
    """Iterative radix-2 transform. n defaults to len(x) and must be a power of two;
    shorter inputs are zero-padded, longer ones truncated."""
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim != 1:
        raise SizeError("fft expects a 1-D sequence")
    if n is None:
        n = len(a)
    if n < 1 or n & (n - 1):
        raise SizeError(f"transform size must be a power of two, got {n}")
    if len(a) < n:
        a = np.concatenate([a, np.zeros(n - len(a), dtype=np.complex128)])
    elif len(a) > n:
        a = a[:n]
    a = a[_bit_reverse_indices(n)].copy()
    m = 1
    while m < n:
        w = np.exp(-1j * np.pi * np.arange(m) / m)
        blocks = a.reshape(-1, 2 * m)
        top = blocks[:, :m].copy()
        bot = blocks[:, m:] * w
        blocks[:, :m] = top + bot
        blocks[:, m:] = top - bot
        m *= 2
    return a


def ifft(spectrum) -> np.ndarray:
    s = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(fft(np.conj(s))) / len(s)


def goertzel_power(x, freq: float, sample_rate: float) -> float:
    """Single-bin spectral power at an arbitrary frequency."""
    x = np.asarray(x, dtype=np.float64)
    w = 2.0 * math.pi * freq / sample_rate
    coeff = 2.0 * math.cos(w)
    s1 = 0.0
    s2 = 0.0
    for v in x:
        s0 = float(v) + coeff * s1 - s2
        s2 = s1
        s1 = s0
    return s1 * s1 + s2 * s2 - coeff * s1 * s2


def rms_bins(x, bin_ms: float, sample_rate: float) -> np.ndarray:
    """Root-mean-square per consecutive bin; a trailing partial bin is dropped."""
    x = np.asarray(x, dtype=np.float64)
    bin_len = int(round(bin_ms / 1000.0 * sample_rate))
    if bin_len < 1:
        raise ValidationError("bin_ms", "bin must span at least one sample")
    n_bins = len(x) // bin_len
    if n_bins == 0:
        return np.empty(0)
    trimmed = x[:n_bins * bin_len].reshape(n_bins, bin_len)
    return np.sqrt(np.mean(trimmed * trimmed, axis=1))


REFRACTORY_S = 0.200
_INTEGRATION_S = 0.150


def detect_r_peaks(ecg, sample_rate: float) -> np.ndarray:
    """Adaptive-threshold beat detector over a derivative-squared-integrated trace.

    Expects a bandpassed single-channel ECG. Returns sample indices of R
    maxima, at most one per refractory period.
    """
    x = np.asarray(ecg, dtype=np.float64)
    _check_finite(x)
    if len(x) < 3:
        return np.empty(0, dtype=np.int64)

    deriv = np.empty_like(x)
    deriv[1:-1] = (x[2:] - x[:-2]) / 2.0
    deriv[0] = deriv[1]
    deriv[-1] = deriv[-2]
    energy = deriv * deriv
    win = max(1, int(round(_INTEGRATION_S * sample_rate)))
    kernel = np.ones(win) / win
    integ = np.convolve(energy, kernel, mode="same")

    if not integ.any():
        return np.empty(0, dtype=np.int64)

    head = integ[:max(win, int(2.0 * sample_rate))]
    spki = float(head.max())
    npki = float(np.median(head))
    threshold = npki + 0.25 * (spki - npki)

    rising = integ[1:-1] >= integ[:-2]
    falling = integ[1:-1] > integ[2:]
    candidates = np.flatnonzero(rising & falling) + 1

    refractory = int(round(REFRACTORY_S * sample_rate))
    search = max(1, int(round(_INTEGRATION_S * sample_rate)))
    peaks = []
    for c in candidates:
        value = integ[c]
        if peaks and c - peaks[-1][0] <= refractory:
            continue
        if value > threshold:
            lo = max(0, c - search)
            hi = min(len(x), c + search + 1)
            r = lo + int(np.argmax(x[lo:hi]))
            if peaks and r - peaks[-1][1] <= refractory:
                continue
            peaks.append((c, r))
            spki = 0.125 * value + 0.875 * spki
        else:
            npki = 0.125 * value + 0.875 * npki
        threshold = npki + 0.25 * (spki - npki)
    return np.asarray(sorted({r for _c, r in peaks}), dtype=np.int64)


@dataclass
class PttResult:
    per_beat_s: np.ndarray
    median_s: float | None
    skipped: int = 0


def ptt(ecg_peaks, ppg, sample_rate: float, window_s: float = 0.5) -> PttResult:
    """Per-beat delay from each R index to the steepest PPG rise after it.

    The first difference is treated as sitting half a sample after its left
    edge, so a rise centered between samples lands at the right instant.
    Beats with no discernible rise inside the window are skipped and counted.
    """
    p = np.asarray(ppg, dtype=np.float64)
    _check_finite(p)
    d = np.diff(p)
    if d.size == 0:
        return PttResult(np.empty(0), None, skipped=len(list(ecg_peaks)))
    window = int(round(window_s * sample_rate))
    rise_floor = 0.05 * max(float(d.max()), 0.0)
    values = []
    skipped = 0
    for r in np.asarray(ecg_peaks, dtype=np.int64):
        lo = int(r)
        hi = min(lo + window, len(d))
        if lo >= hi:
            skipped += 1
            continue
        seg = d[lo:hi]
        peak = float(seg.max())
        if peak <= 0 or peak <= rise_floor:
            skipped += 1
            continue
        i_star = lo + int(np.argmax(seg))
        values.append((i_star - lo + 0.5) / sample_rate)
    arr = np.asarray(values)
    med = float(np.median(arr)) if arr.size else None
    return PttResult(arr, med, skipped)
