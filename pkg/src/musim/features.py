"""Log-mel spectrogram patches and MFCC frame features.

The embedding model consumes standardized log-mel patches of shape
patch_frames x mel_bands (129 x 128 by default). The vector-quantization
baseline consumes 13 MFCCs plus first and second derivatives (39 columns).

Conventions, fixed here and documented because they are not universal:
HTK-style triangular mel filters spanning 0 Hz to Nyquist, applied to the
magnitude (not power) spectrum of Hann-windowed frames; frames are taken
without padding, so frame_count = floor((len - window) / hop) + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.fft import dct

from .audio import Waveform, load_wav
from .config import FeatureConfig


class FeatureError(ValueError):
    """Invalid input to the feature pipeline."""


@dataclass(frozen=True)
class SpectrogramPatch:
    """A log-mel matrix (frames x mel_bands, time-major).

    start_frame records where the patch was cut from its source series,
    which the track-triplet overlap rule needs. A full series is simply a
    patch with as many frames as the track has.
    """

    values: np.ndarray
    standardized: bool = False
    start_frame: int = 0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise FeatureError("patch values must be 2-D (frames x mel_bands)")
        if not np.all(np.isfinite(values)):
            raise FeatureError("patch contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1), peaks equally spaced in mel
    from 0 Hz to Nyquist."""
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)
    weights = np.zeros((n_mels, fft_freqs.shape[0]))
    for m in range(n_mels):
        left, center, right = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        rising = (fft_freqs - left) / max(center - left, 1e-12)
        falling = (right - fft_freqs) / max(right - center, 1e-12)
        weights[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    """Peak frequency in Hz of each triangular filter."""
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_edges[1:-1])


def frame_count(n_samples: int, cfg: FeatureConfig) -> int:
    """Number of analysis frames for a signal of n_samples (no padding)."""
    if n_samples < cfg.window_samples:
        return 0
    return (n_samples - cfg.window_samples) // cfg.hop_samples + 1


def _frames(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    n = frame_count(samples.shape[0], cfg)
    view = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_samples)
    return view[:: cfg.hop_samples][:n]


def compute_log_mel(wave: Waveform, cfg: FeatureConfig) -> SpectrogramPatch:
    """Full-length unstandardized log-mel series for a waveform.

    Each frame holds cfg.mel_bands magnitudes compressed as
    log10(1 + compression_scale * S).
    """
    if wave.sample_rate != cfg.sample_rate:
        raise FeatureError(
            f"waveform rate {wave.sample_rate} != config rate {cfg.sample_rate}; resample on ingest"
        )
    if len(wave) < cfg.window_samples:
        raise FeatureError("insufficient audio: shorter than one analysis window")
    frames = _frames(wave.samples, cfg)
    window = np.hanning(cfg.window_samples + 1)[:-1]  # periodic Hann
    spectrum = np.abs(np.fft.rfft(frames * window, axis=1))
    fbank = mel_filterbank(cfg.mel_bands, cfg.window_samples, cfg.sample_rate)
    mel = spectrum @ fbank.T
    out = np.log10(1.0 + cfg.compression_scale * mel)
    return SpectrogramPatch(out, standardized=False, start_frame=0)


def standardize(patch: SpectrogramPatch, cfg: FeatureConfig) -> SpectrogramPatch:
    """Map every value v to (v - mean) / std with the fixed constants."""
    if patch.standardized:
        raise FeatureError("patch is already standardized")
    values = (patch.values - cfg.standardize_mean) / cfg.standardize_std
    return replace(patch, values=values, standardized=True)


def unstandardize(patch: SpectrogramPatch, cfg: FeatureConfig) -> SpectrogramPatch:
    if not patch.standardized:
        raise FeatureError("patch is not standardized")
    values = patch.values * cfg.standardize_std + cfg.standardize_mean
    return replace(patch, values=values, standardized=False)


def extract_patch(series: SpectrogramPatch, start_frame: int, cfg: FeatureConfig) -> SpectrogramPatch:
    """Cut a contiguous patch_frames window out of a longer series."""
    if start_frame < 0 or start_frame + cfg.patch_frames > series.n_frames:
        raise FeatureError(
            f"patch [{start_frame}, {start_frame + cfg.patch_frames}) out of range "
            f"for series of {series.n_frames} frames"
        )
    values = series.values[start_frame : start_frame + cfg.patch_frames]
    return replace(
        series,
        values=values,
        start_frame=series.start_frame + start_frame,
    )


def _delta(coeffs: np.ndarray, window: int) -> np.ndarray:
    """Regression delta over a symmetric window, edge frames replicated."""
    half = window // 2
    weights = np.arange(1, half + 1, dtype=np.float64)
    denom = 2.0 * np.sum(weights**2)
    padded = np.pad(coeffs, ((half, half), (0, 0)), mode="edge")
    out = np.zeros_like(coeffs, dtype=np.float64)
    for n in range(1, half + 1):
        out += n * (padded[half + n : half + n + coeffs.shape[0]] - padded[half - n : half - n + coeffs.shape[0]])
    return out / denom


def compute_mfcc(wave: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """13 MFCCs (DCT-II of the log-mel frames) plus deltas and delta-deltas.

    Returns a frames x 39 array.
    """
    log_mel = compute_log_mel(wave, cfg)
    cepstrum = dct(log_mel.values.astype(np.float64), type=2, norm="ortho", axis=1)
    mfcc = cepstrum[:, : cfg.mfcc_coefficients]
    d1 = _delta(mfcc, cfg.delta_window)
    d2 = _delta(d1, cfg.delta_window)
    return np.hstack([mfcc, d1, d2])


class FeatureStore:
    """Per-track feature cache over a mapping of track_id -> audio path.

    Loads audio lazily, resamples to the configured rate and keeps the
    log-mel series (and MFCC frames on demand) in memory. All outputs are
    deterministic functions of the audio file and the config.
    """

    def __init__(self, audio_paths: Mapping[str, str], cfg: FeatureConfig):
        self.cfg = cfg
        self._paths = dict(audio_paths)
        self._log_mel: dict[str, SpectrogramPatch] = {}
        self._mfcc: dict[str, np.ndarray] = {}

    def __contains__(self, track_id: str) -> bool:
        return track_id in self._paths

    def log_mel(self, track_id: str) -> SpectrogramPatch:
        if track_id not in self._log_mel:
            wave = load_wav(self._paths[track_id], target_rate=self.cfg.sample_rate)
            self._log_mel[track_id] = compute_log_mel(wave, self.cfg)
        return self._log_mel[track_id]

    def frame_count(self, track_id: str) -> int:
        return self.log_mel(track_id).n_frames

    def patch(self, track_id: str, start_frame: int) -> SpectrogramPatch:
        """Standardized patch_frames x mel_bands window of a track."""
        raw = extract_patch(self.log_mel(track_id), start_frame, self.cfg)
        return standardize(raw, self.cfg)

    def song_windows(self, track_id: str) -> list[SpectrogramPatch]:
        """All non-overlapping standardized patches covering a track."""
        series = self.log_mel(track_id)
        starts = range(0, series.n_frames - self.cfg.patch_frames + 1, self.cfg.patch_frames)
        windows = [standardize(extract_patch(series, s, self.cfg), self.cfg) for s in starts]
        if not windows:
            raise FeatureError(f"track {track_id!r} is shorter than one patch")
        return windows

    def mfcc(self, track_id: str) -> np.ndarray:
        if track_id not in self._mfcc:
            wave = load_wav(self._paths[track_id], target_rate=self.cfg.sample_rate)
            self._mfcc[track_id] = compute_mfcc(wave, self.cfg)
        return self._mfcc[track_id]
