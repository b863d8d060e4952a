"""
The on-device signal chain: filters, peaks, transit time, activation
====================================================================

Everything the firmware computes is built from a small DSP kit: Butterworth
bandpasses realized as biquad cascades, an in-house radix-2 FFT, an R-peak
detector, pulse transit time from R-peak to the steepest PPG upslope, and
windowed RMS for muscle activation. This walk-through runs the chain on
synthetic cardiac and muscle records and checks the answers against the
quantities the generator embedded.
"""
import numpy as np

from biogap import dsp
from biogap.frames import ECG, EMG, PPG
from biogap.synth import CardiacSpec, EmgSpec, SynthSpec, synthesize

fs = 500.0

# the two clinical bandpasses; -3 dB lands on the design cutoffs
for lo, hi in ((0.5, 30.0), (0.5, 15.0)):
    sos = dsp.design_butterworth(dsp.FilterSpec("bandpass", 10, fs, lo, hi))
    edges = 20 * np.log10(np.abs(dsp.freq_response(sos, [lo, hi])))
    stable = bool(np.all(np.abs(sos.poles()) < 1.0))
    print(f"bandpass {lo}-{hi} Hz: edges {edges.round(2)} dB, stable {stable}")

# the FFT agrees with the defining sum; Parseval ties the two domains
x = np.random.default_rng(1).normal(size=256)
spectrum = dsp.fft(x)
naive = np.exp(-2j * np.pi * np.outer(np.arange(256), np.arange(256)) / 256) @ x
print(f"fft vs direct sum: max diff {np.max(np.abs(spectrum - naive)):.2e}")
print(f"parseval: {np.sum(x ** 2):.6f} == {np.sum(np.abs(spectrum) ** 2) / 256:.6f}")

# cardiac record with a known 220 ms transit time
spec = SynthSpec(seed=7, duration=20.0, sample_rate=fs, modalities={ECG, PPG},
                 ecg_ppg=CardiacSpec(heart_rate=72.0, ptt=0.220, rr_jitter=0.02))
record = synthesize(spec)

sos_ecg = dsp.design_butterworth(dsp.FilterSpec("bandpass", 10, fs, 0.5, 30.0))
ecg_f = dsp.filtfilt(sos_ecg, record.modality(ECG)[0])
peaks = dsp.detect_r_peaks(ecg_f, fs)
rr = np.diff(peaks) / fs
print(f"\n{peaks.size} R-peaks, mean HR {60.0 / rr.mean():.1f} bpm "
      f"(designed 72.0)")

sos_ppg = dsp.design_butterworth(dsp.FilterSpec("bandpass", 10, fs, 0.5, 15.0))
ppg_f = dsp.filtfilt(sos_ppg, record.modality(PPG)[0])
result = dsp.ptt(peaks, ppg_f, fs)
print(f"PTT median {result.median_s * 1000:.1f} ms (designed 220.0), "
      f"{len(result.per_beat_s)} beats used, {result.skipped} skipped")

# muscle activation: windowed RMS lights up exactly where the bursts are
spec = SynthSpec(seed=8, duration=6.0, sample_rate=fs, modalities={EMG},
                 emg=EmgSpec(n_channels=2, bursts=[(2.0, 3.5, [0], 70.0)]))
emg = synthesize(spec).modality(EMG)
bins = dsp.rms_bins(emg[0], bin_ms=500.0, sample_rate=fs)
print("\nch0 RMS per 500 ms bin (burst spans bins 4-6):")
print(" ", " ".join(f"{v:5.1f}" for v in bins))
