"""Sample frames and array-backed signal records.

A SampleFrame is one synchronized snapshot across all enabled modalities,
stamped with a sample-clock tick. Full records keep channel data in numpy
arrays and expose the frame view lazily, so a 10-minute record does not
allocate millions of small objects.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

# Modality names used across the package.
EEG = "EEG"
EMG = "EMG"
ECG = "ECG"
PPG = "PPG"
ACC = "ACC"

MODALITIES = (EEG, EMG, ECG, PPG, ACC)

# ExG modalities share the biopotential front-end.
EXG_MODALITIES = (EEG, EMG, ECG)


@dataclass(frozen=True)
class SampleFrame:
    """One synchronized sample across enabled modalities.

    values maps modality name to a 1-D float array (one entry per channel).
    tick counts samples of the record's own clock.
    """

    tick: int
    values: dict[str, np.ndarray] = field(default_factory=dict)


class SignalRecord(Sequence):
    """Multichannel, multimodality record sampled on one shared clock.

    Behaves as a sequence of SampleFrame while storing the data as
    (n_channels, n_samples) arrays per modality, accessible via
    ``record.channels[modality]``.
    """

    def __init__(self, sample_rate: float, channels: dict[str, np.ndarray]):
        if not channels:
            raise ValueError("record needs at least one modality")
        lengths = {v.shape[-1] for v in channels.values()}
        if len(lengths) != 1:
            raise ValueError(f"modalities disagree on length: {lengths}")
        self.sample_rate = float(sample_rate)
        self.channels = {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in channels.items()}
        self._n = lengths.pop()

    @property
    def n_samples(self) -> int:
        return self._n

    @property
    def duration(self) -> float:
        return self._n / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self._n) / self.sample_rate

    def modality(self, name: str) -> np.ndarray:
        """Channel data for one modality, shape (n_channels, n_samples)."""
        return self.channels[name]

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._n))]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return SampleFrame(tick=i, values={k: v[:, i] for k, v in self.channels.items()})

    def __repr__(self) -> str:
        mods = ", ".join(f"{k}[{v.shape[0]}ch]" for k, v in self.channels.items())
        return f"SignalRecord({self.duration:.3g}s @ {self.sample_rate:g}Hz: {mods})"
