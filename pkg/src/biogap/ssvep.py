"""Frequency-tagged EEG detection: canonical correlation against sinusoidal
references, and its normalized ratio against side frequencies 0.2 Hz away.

The correlation solver whitens both blocks through a ridge-stabilized
eigendecomposition and takes the largest singular value of the whitened
cross-covariance. Degenerate inputs (rank-collapsed, all-zero) are flagged
rather than raised so streaming classification never stalls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

DEFAULT_CANDIDATES = (7.5, 11.5, 13.5, 15.5)
SIDE_DELTA_HZ = 0.2
DECISION_THRESHOLD = 1.1
N_HARMONICS = 2
RIDGE_SCALE = 1e-9


def reference_set(freq: float, n_samples: int, sample_rate: float,
                  n_harmonics: int = N_HARMONICS) -> np.ndarray:
    """Stacked [sin, cos] rows at the fundamental and its harmonics."""
    if freq <= 0:
        raise ConfigurationError(f"reference frequency must be > 0, got {freq}")
    if n_harmonics * freq >= sample_rate / 2:
        raise ConfigurationError(
            f"harmonic {n_harmonics}x{freq} Hz reaches Nyquist at {sample_rate} SPS")
    t = np.arange(n_samples) / sample_rate
    rows = []
    for k in range(1, n_harmonics + 1):
        w = 2.0 * np.pi * k * freq * t
        rows.append(np.sin(w))
        rows.append(np.cos(w))
    return np.asarray(rows)


def _inv_sqrt(cov: np.ndarray):
    """Symmetric inverse square root with a relative ridge; None if rank-dead."""
    dim = cov.shape[0]
    tr = float(np.trace(cov))
    if not math.isfinite(tr) or tr <= 0:
        return None
    ridged = cov + np.eye(dim) * (RIDGE_SCALE * tr / dim)
    w, v = np.linalg.eigh(ridged)
    top = float(w[-1])
    if top <= 0:
        return None
    w = np.maximum(w, top * 1e-12)
    return (v / np.sqrt(w)) @ v.T


def _cca(x: np.ndarray, y: np.ndarray):
    """Largest canonical correlation and a degeneracy flag."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValidationError("samples", "both blocks must share the sample axis")
    n = x.shape[1]
    if n <= x.shape[0] + y.shape[0]:
        raise ValidationError("samples",
                              f"need more samples than {x.shape[0]} + {y.shape[0]} rows")
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    cxx = xc @ xc.T / n
    cyy = yc @ yc.T / n
    cxy = xc @ yc.T / n
    wx = _inv_sqrt(cxx)
    wy = _inv_sqrt(cyy)
    if wx is None or wy is None:
        return 0.0, True
    rho = float(np.linalg.svd(wx @ cxy @ wy, compute_uv=False)[0])
    return min(max(rho, 0.0), 1.0), False


def cca(x, y) -> float:
    """Maximal correlation between linear mixes of the two row blocks."""
    rho, _degenerate = _cca(x, y)
    return rho


@dataclass(frozen=True)
class FreqScore:
    freq: float
    cca: float
    ncca: float
    degenerate: bool = False
    one_sided: bool = False


def ncca(x, target_f: float, sample_rate: float, delta: float = SIDE_DELTA_HZ,
         n_harmonics: int = N_HARMONICS) -> FreqScore:
    """Correlation at the target over the mean correlation at its side frequencies.

    A side frequency that falls outside the usable band is dropped and the
    normalization turns one-sided (flagged). A vanishing denominator flags
    the score degenerate instead of raising.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[1]
    target_rho, target_deg = _cca(x, reference_set(target_f, n, sample_rate, n_harmonics))

    side_rhos = []
    degenerate = target_deg
    one_sided = False
    for side in (target_f - delta, target_f + delta):
        if side <= 0 or n_harmonics * side >= sample_rate / 2:
            one_sided = True
            continue
        rho, deg = _cca(x, reference_set(side, n, sample_rate, n_harmonics))
        degenerate = degenerate or deg
        side_rhos.append(rho)
    if not side_rhos:
        raise ConfigurationError(
            f"no side frequency of {target_f} +/- {delta} Hz is representable")
    denom = float(np.mean(side_rhos))
    if denom < 1e-12:
        return FreqScore(target_f, target_rho, 0.0, degenerate=True, one_sided=one_sided)
    return FreqScore(target_f, target_rho, target_rho / denom,
                     degenerate=degenerate, one_sided=one_sided)


@dataclass
class NccaResult:
    window_s: float
    scores: list
    decision: float | None
    threshold: float = DECISION_THRESHOLD

    def score_map(self) -> dict:
        return {s.freq: s for s in self.scores}


def classify_window(x, sample_rate: float, candidates=DEFAULT_CANDIDATES,
                    threshold: float = DECISION_THRESHOLD, delta: float = SIDE_DELTA_HZ,
                    n_harmonics: int = N_HARMONICS) -> NccaResult:
    """Score every candidate and decide: best ratio above threshold, ties to
    the lowest frequency, none when nothing clears it."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[1]
    if n < sample_rate:
        raise ValidationError("window", "classification needs at least 1 s of samples")
    scores = [ncca(x, f, sample_rate, delta=delta, n_harmonics=n_harmonics)
              for f in candidates]
    decision = None
    best = threshold
    for s in sorted(scores, key=lambda s: s.freq):
        if not s.degenerate and s.ncca > best:
            best = s.ncca
            decision = s.freq
    return NccaResult(window_s=n / sample_rate, scores=scores,
                      decision=decision, threshold=threshold)


@dataclass
class LatencyCurves:
    windows_s: tuple
    targets: dict    # freq -> list of mean ncca (None where window exceeds segments)
    rest: dict       # freq -> list of mean ncca over rest segments


def latency_curve(x, sample_rate: float, segments, window_grid,
                  delta: float = SIDE_DELTA_HZ, n_harmonics: int = N_HARMONICS) -> LatencyCurves:
    """Mean ratio at each stimulus frequency as the evaluation window grows,
    with rest segments scored at the same frequencies as a baseline.

    Windows anchor at each segment start; a window longer than the segment
    contributes nothing to that point.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    stim = [s for s in segments if s.freq > 0]
    rest = [s for s in segments if s.freq == 0]
    freqs = sorted({s.freq for s in stim})
    windows = tuple(window_grid)

    def mean_over(segs, freq, w):
        vals = []
        for seg in segs:
            if seg.end - seg.start + 1e-9 < w:
                continue
            i0 = int(round(seg.start * sample_rate))
            i1 = i0 + int(round(w * sample_rate))
            if i1 > x.shape[1]:
                continue
            score = ncca(x[:, i0:i1], freq, sample_rate, delta=delta,
                         n_harmonics=n_harmonics)
            vals.append(score.ncca)
        return float(np.mean(vals)) if vals else None

    targets = {}
    rest_curves = {}
    for f in freqs:
        own = [s for s in stim if s.freq == f]
        targets[f] = [mean_over(own, f, w) for w in windows]
        rest_curves[f] = [mean_over(rest, f, w) for w in windows]
    return LatencyCurves(windows_s=windows, targets=targets, rest=rest_curves)
