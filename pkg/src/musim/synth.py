"""Deterministic synthetic corpus with four independent musical factors.

Each generated track mixes three layers plus per-track nuisances, so the
four labeled dimensions are controlled by exactly one factor each:

* genre      <- broadband texture class (hiss / rumble / band / crackle)
* mood       <- tremolo pattern on the tonal bed (flat / sway / flutter)
* instruments<- harmonic template of the tonal bed (solo / stack / odd)
* tempo      <- click-track rate in BPM

Factor levels are assigned independently and uniformly at random, so
ground-truth similarity along one dimension says nothing about the others.
Every track also gets a random fundamental pitch and its own noise
realization, giving same-factor tracks a distinct identity (which is what
track-based triplets must pick up on).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, save_wav
from .corpus import Corpus, CorpusError, TrackMetadata, make_split

FACTORS = ("genre", "mood", "instruments", "tempo")

_TEXTURES = ("hiss", "rumble", "band", "crackle")
_TREMOLOS = ("flat", "sway", "flutter")
_TEMPLATES = ("solo", "stack", "odd")

# Tremolo shapes only the tonal bed (never the clicks), so beat tracking
# on high-frequency onsets stays blind to it.
_TREMOLO_RATE_HZ = {"flat": 0.0, "sway": 2.8, "flutter": 8.0}
_TREMOLO_DEPTH = {"flat": 0.0, "sway": 1.0, "flutter": 0.9}

# Spectral layout: textures and the tonal bed stay below this split, clicks
# live above it. The click band being exclusive is what makes the labeled
# rate recoverable from audio alone.
_TEXTURE_MAX_HZ = 4500.0
_CLICK_BAND_HZ = (5500.0, 10500.0)

_HARMONICS = {
    "solo": ((1, 1.0),),
    "stack": ((1, 1.0), (2, 0.6), (3, 0.45), (4, 0.35), (5, 0.28), (6, 0.22)),
    "odd": ((1, 1.0), (3, 0.5), (5, 0.33), (7, 0.24)),
}


@dataclass(frozen=True)
class SynthSpec:
    """Defaults keep the factor grid coarse (36 cells) so a 200-track corpus
    contains plenty of factor-twin pairs: those are the hard negatives that
    make track-based triplets informative rather than trivially easy."""

    n_tracks: int = 200
    duration_s: float = 8.0
    sample_rate: int = 22050
    texture_classes: tuple[str, ...] = ("hiss", "band")
    tremolo_patterns: tuple[str, ...] = ("flat", "sway")
    harmonic_templates: tuple[str, ...] = ("solo", "stack")
    # All rates put >= 2 clicks in one 1.5 s model patch; neighbors sit far
    # outside the 5 BPM similarity tolerance.
    click_rates_bpm: tuple[float, ...] = (100.0, 144.0, 200.0)
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self) -> None:
        for name, levels in (
            ("texture_classes", self.texture_classes),
            ("tremolo_patterns", self.tremolo_patterns),
            ("harmonic_templates", self.harmonic_templates),
            ("click_rates_bpm", self.click_rates_bpm),
        ):
            if len(levels) < 2:
                raise CorpusError(f"synthetic corpus needs >= 2 levels per factor, {name} has {len(levels)}")
        if self.n_tracks < 2:
            raise CorpusError("n_tracks must be >= 2")

    def level_counts(self) -> dict[str, int]:
        return {
            "genre": len(self.texture_classes),
            "mood": len(self.tremolo_patterns),
            "instruments": len(self.harmonic_templates),
            "tempo": len(self.click_rates_bpm),
        }


def assign_factors(spec: SynthSpec, seed: int) -> np.ndarray:
    """Independent uniform level indices, one row per track (n_tracks x 4)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    counts = spec.level_counts()
    cols = [rng.integers(0, counts[f], size=spec.n_tracks) for f in FACTORS]
    return np.stack(cols, axis=1)


def _band_limit(x: np.ndarray, lo_hz: float, hi_hz: float, sr: int) -> np.ndarray:
    """Brickwall band restriction via the FFT (deterministic, exact cutoffs)."""
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / sr)
    spectrum[(freqs < lo_hz) | (freqs >= hi_hz)] = 0.0
    return np.fft.irfft(spectrum, n=x.shape[0])


def _texture(kind: str, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "hiss":
        sig = _band_limit(rng.standard_normal(n), 0.0, _TEXTURE_MAX_HZ, sr)
    elif kind == "rumble":
        sig = _band_limit(rng.standard_normal(n), 0.0, 350.0, sr)
    elif kind == "band":
        sig = _band_limit(rng.standard_normal(n), 2600.0, 3400.0, sr)
    elif kind == "crackle":
        sig = np.zeros(n)
        count = max(1, int(45.0 * n / sr))
        pos = rng.integers(0, n, size=count)
        amp = rng.uniform(-1.0, 1.0, size=count)
        decay = np.exp(-np.arange(int(0.002 * sr)) / (0.0006 * sr))
        for p, a in zip(pos, amp):
            end = min(n, p + decay.shape[0])
            sig[p:end] += a * decay[: end - p]
        sig = _band_limit(sig, 0.0, _TEXTURE_MAX_HZ, sr)
    else:
        raise CorpusError(f"unknown texture class {kind!r}")
    peak = np.max(np.abs(sig))
    return sig / peak if peak > 0 else sig


def _click_track(bpm: float, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    period = 60.0 / bpm
    phase = float(rng.uniform(0.0, period))
    burst_len = int(0.030 * sr)
    envelope = np.exp(-np.arange(burst_len) / (0.008 * sr))
    out = np.zeros(n)
    k = 0
    while True:
        start = int(round((phase + k * period) * sr))
        if start >= n:
            break
        end = min(n, start + burst_len)
        burst = envelope[: end - start] * rng.standard_normal(end - start)
        rms = np.sqrt(np.mean(burst**2))
        if rms > 0:
            burst /= rms  # equal-loudness clicks
        out[start:end] += burst
        k += 1
    out = _band_limit(out, _CLICK_BAND_HZ[0], _CLICK_BAND_HZ[1], sr)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


# Melody note pool shared by every track. Notes change twice a second, so
# instantaneous pitch never identifies a track; what persists across a
# track's excerpts is its subtle timbre fingerprint (see below).
_NOTE_POOL_HZ = tuple(110.0 * (311.0 / 110.0) ** (k / 9.0) for k in range(10))
_NOTE_SECONDS = 0.5


def _melody_bed(template: str, balance: np.ndarray, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Random note sequence rendered with the template's partials, 10 ms
    crossfades at note boundaries and per-note velocity jitter. The churn is
    deliberate: distant excerpts of one track should differ audibly, so
    matching them requires the track's timbre fingerprint, not memory of a
    static frame."""
    note_len = int(_NOTE_SECONDS * sr)
    n_notes = -(-n // note_len)
    notes = rng.choice(_NOTE_POOL_HZ, size=n_notes)
    velocities = rng.uniform(0.65, 1.4, size=n_notes)
    fade = int(0.010 * sr)
    ramp = 0.5 * (1 - np.cos(np.pi * np.arange(fade) / fade))
    bed = np.zeros(n)
    for i, f0 in enumerate(notes):
        start = i * note_len
        end = min(n, start + note_len)
        seg_t = np.arange(end - start) / sr
        seg = np.zeros(end - start)
        for (harmonic, amp), gain in zip(_HARMONICS[template], balance):
            phase = rng.uniform(0.0, 2 * np.pi)
            seg += amp * gain * np.sin(2 * np.pi * f0 * harmonic * seg_t + phase)
        seg *= velocities[i]
        if start > 0:
            seg[: min(fade, seg.shape[0])] *= ramp[: min(fade, seg.shape[0])]
        if end < n:
            seg[-min(fade, seg.shape[0]) :] *= ramp[::-1][: min(fade, seg.shape[0])]
        bed[start:end] += seg
    return bed / np.max(np.abs(bed))


def _gain_wander(n: int, sr: int, rng: np.random.Generator, db: float = 5.0, knot_s: float = 1.0) -> np.ndarray:
    """Slow piecewise-linear loudness drift within a track (+-db)."""
    knots = max(2, int(np.ceil(n / (knot_s * sr))) + 1)
    values = rng.uniform(-db, db, size=knots)
    positions = np.linspace(0, n - 1, knots)
    curve = np.interp(np.arange(n), positions, values)
    return 10.0 ** (curve / 20.0)


def _spectral_tilt(x: np.ndarray, tilt: float, sr: int) -> np.ndarray:
    """Per-track timbre fingerprint: gentle power-law emphasis over frequency."""
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / sr)
    gain = np.power(np.maximum(freqs, 30.0) / 1000.0, tilt / 2.0)
    return np.fft.irfft(spectrum * gain, n=x.shape[0])


def synthesize_track(spec: SynthSpec, levels, rng: np.random.Generator) -> Waveform:
    """Render one track from its four factor level indices.

    Besides the factor-controlled layers, each track carries an unlabeled
    identity fingerprint: a random rebalancing of its partials and a random
    spectral tilt plus level jitter on its texture. Those persist across
    excerpts of one track without correlating with any labeled dimension.
    """
    sr = spec.sample_rate
    n = int(round(spec.duration_s * sr))
    t = np.arange(n) / sr

    texture = spec.texture_classes[int(levels[0])]
    tremolo = spec.tremolo_patterns[int(levels[1])]
    template = spec.harmonic_templates[int(levels[2])]
    bpm = float(spec.click_rates_bpm[int(levels[3])])

    balance = np.exp(rng.uniform(-0.6, 0.6, size=len(_HARMONICS[template])))
    bed = _melody_bed(template, balance, n, sr, rng)
    bed *= _gain_wander(n, sr, rng)

    rate = _TREMOLO_RATE_HZ[tremolo]
    depth = _TREMOLO_DEPTH[tremolo]
    if rate > 0:
        am_phase = rng.uniform(0.0, 2 * np.pi)
        bed *= 1.0 - depth * 0.5 * (1.0 + np.sin(2 * np.pi * rate * t + am_phase))
    bed /= np.max(np.abs(bed))

    tex = _texture(texture, n, sr, rng)
    tex = _spectral_tilt(tex, float(rng.uniform(-1.5, 1.5)), sr)
    tex *= _gain_wander(n, sr, rng)
    peak = np.max(np.abs(tex))
    if peak > 0:
        tex /= peak
    texture_level = 0.2 * float(rng.uniform(0.7, 1.45))

    mix = 0.6 * bed + texture_level * tex + 0.9 * _click_track(bpm, n, sr, rng)
    mix *= 0.95 / np.max(np.abs(mix))
    return Waveform(mix.astype(np.float64), sr)


def _track_metadata(spec: SynthSpec, index: int, levels, audio_path: str, split: str) -> TrackMetadata:
    texture = spec.texture_classes[int(levels[0])]
    tremolo = spec.tremolo_patterns[int(levels[1])]
    template = spec.harmonic_templates[int(levels[2])]
    bpm = float(spec.click_rates_bpm[int(levels[3])])
    return TrackMetadata(
        track_id=f"syn{index:04d}",
        audio_path=audio_path,
        genre=frozenset({f"g{int(levels[0]):02d}"}),
        mood=frozenset({f"m{int(levels[1]):02d}"}),
        instruments=frozenset({f"i{int(levels[2]):02d}"}),
        tempo_bpm=bpm,
        split=split,
        title=f"{texture}/{template}/{tremolo}/{bpm:g}bpm",
    )


def generate_synthetic_corpus(spec: SynthSpec, seed: int, out_dir: str | Path) -> tuple[Corpus, np.ndarray]:
    """Render all tracks to out_dir/audio and return (corpus, factor table).

    Deterministic for a given (spec, seed): same WAV bytes, same metadata.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    factor_table = assign_factors(spec, seed)
    split_assignment = make_split(
        [f"syn{i:04d}" for i in range(spec.n_tracks)], spec.split_ratios, seed
    )
    tracks = []
    for i in range(spec.n_tracks):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1 + i]))
        wave = synthesize_track(spec, factor_table[i], rng)
        path = audio_dir / f"syn{i:04d}.wav"
        save_wav(path, wave)
        tracks.append(
            _track_metadata(spec, i, factor_table[i], str(path), split_assignment[f"syn{i:04d}"])
        )
    return Corpus(tracks), factor_table
