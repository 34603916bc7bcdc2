"""Waveform container and PCM WAV ingest.

Only 16-bit PCM and float32 WAV files are supported. Anything at a foreign
sample rate is resampled to the target rate on load (polyphase).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


class AudioError(ValueError):
    """Unreadable or unsupported audio input."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError("samples must be a 1-D array")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _to_mono_float(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioError(f"unsupported WAV sample format {data.dtype}; use 16-bit PCM or float32")


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Polyphase resample to target_rate; identity when rates match."""
    if wave.sample_rate == target_rate:
        return wave
    g = gcd(wave.sample_rate, target_rate)
    out = resample_poly(wave.samples, target_rate // g, wave.sample_rate // g)
    return Waveform(out, target_rate)


def load_wav(path: str | Path, target_rate: int | None = None) -> Waveform:
    """Read a WAV file as a mono Waveform, resampling if asked to."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    wave = Waveform(_to_mono_float(data), rate)
    if target_rate is not None:
        wave = resample(wave, target_rate)
    return wave


def load_wav_bytes(data: bytes, target_rate: int | None = None) -> Waveform:
    """Decode in-memory WAV bytes (uploaded clips)."""
    import io

    try:
        rate, samples = wavfile.read(io.BytesIO(data))
    except Exception as exc:
        raise AudioError(f"cannot decode WAV bytes: {exc}") from exc
    wave = Waveform(_to_mono_float(samples), rate)
    if target_rate is not None:
        wave = resample(wave, target_rate)
    return wave


def save_wav(path: str | Path, wave: Waveform) -> None:
    """Write a float32 WAV atomically (values outside [-1, 1] untouched)."""
    import io

    from .arrayio import atomic_write_bytes

    buffer = io.BytesIO()
    wavfile.write(buffer, wave.sample_rate, wave.samples.astype(np.float32))
    atomic_write_bytes(path, buffer.getvalue())
