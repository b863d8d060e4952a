"""Software twin of a wearable multimodal biosignal platform.

Layers, bottom up:
  synth    deterministic synthetic EEG / EMG / ECG / PPG / IMU sources
  afe      analog front-end: gain, 24-bit quantization, input noise, contact check
  power    per-domain power and battery-life model
  proto    binary stream framing, CRC, link and buffer models
  dsp      filters, FFT, R-peaks, pulse transit time, RMS energy
  ssvep    canonical correlation scoring and frequency classification
  runtime  cooperative firmware loop tying the device together
  gateway  host side: recording files, replay, export, live analysis
  server   websocket console channel
  cli      command-line front door (`biogap ...`)
"""
from . import afe, dsp, frames, gateway, power, proto, runtime, ssvep, synth
from .errors import (ConfigurationError, DesignError, NumericError, ShapeError,
                     SizeError, ValidationError)
from .proto import ProtocolError

__version__ = "0.1.0"

__all__ = [
    "afe", "dsp", "frames", "gateway", "power", "proto", "runtime", "ssvep",
    "synth", "ConfigurationError", "DesignError", "NumericError",
    "ProtocolError", "ShapeError", "SizeError", "ValidationError",
    "__version__",
]
