"""Track metadata, similarity predicates, splits and triplet sampling.

Metadata lives in JSONL, one track per line:

    {"track_id": str, "audio_path": str, "genre": [str], "mood": [str],
     "instruments": [str], "tempo_bpm": float, "split": "train"|"valid"|"test"}

Two tracks are similar along a tag dimension when their tag sets intersect,
and along tempo when their BPM values are within 5 of each other (ties at
exactly 5 count as similar). Track triplets pair two excerpts of one song
whose frame windows overlap by at most half a patch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .arrayio import atomic_write_text

CONDITIONS = ("genre", "mood", "instruments", "tempo")
TRACK_CONDITION = "track"
SPLITS = ("train", "valid", "test")

TEMPO_TOLERANCE_BPM = 5.0
MAX_SAMPLER_ATTEMPTS = 10_000


class CorpusError(ValueError):
    """Malformed metadata or an unsatisfiable sampling request."""


def _load_vocab(name: str) -> frozenset[str]:
    text = resources.files("musim.data").joinpath(name).read_text()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class TagVocabulary:
    """Allowed tags per category. Defaults ship with the package (28 genre,
    12 mood, 5 instrument tags with generic names); real vocabularies are a
    drop-in replacement."""

    genre: frozenset[str]
    mood: frozenset[str]
    instruments: frozenset[str]

    @classmethod
    def default(cls) -> "TagVocabulary":
        return cls(
            genre=_load_vocab("genre_tags.txt"),
            mood=_load_vocab("mood_tags.txt"),
            instruments=_load_vocab("instrument_tags.txt"),
        )

    def category(self, condition: str) -> frozenset[str]:
        if condition not in ("genre", "mood", "instruments"):
            raise CorpusError(f"{condition!r} has no tag vocabulary")
        return getattr(self, condition)


@dataclass(frozen=True)
class TrackMetadata:
    track_id: str
    audio_path: str
    genre: frozenset[str]
    mood: frozenset[str]
    instruments: frozenset[str]
    tempo_bpm: float
    split: str
    title: str = ""

    def __post_init__(self) -> None:
        if not self.track_id:
            raise CorpusError("track_id must be non-empty")
        if not (np.isfinite(self.tempo_bpm) and self.tempo_bpm > 0):
            raise CorpusError(f"track {self.track_id!r}: tempo_bpm must be finite and positive")
        if self.split not in SPLITS:
            raise CorpusError(f"track {self.track_id!r}: unknown split {self.split!r}")

    def tags(self, condition: str) -> frozenset[str]:
        return getattr(self, condition)


def similar(a: TrackMetadata, b: TrackMetadata, condition: str) -> bool:
    """Shared tag for tag dimensions; within 5 BPM for tempo."""
    if condition == "tempo":
        return abs(a.tempo_bpm - b.tempo_bpm) <= TEMPO_TOLERANCE_BPM
    if condition in ("genre", "mood", "instruments"):
        return bool(a.tags(condition) & b.tags(condition))
    raise CorpusError(f"unknown similarity dimension {condition!r}")


class Corpus:
    """Immutable collection of validated TrackMetadata records."""

    def __init__(self, tracks: Iterable[TrackMetadata], vocab: TagVocabulary | None = None):
        self.vocab = vocab or TagVocabulary.default()
        self.tracks: dict[str, TrackMetadata] = {}
        for track in tracks:
            if track.track_id in self.tracks:
                raise CorpusError(f"duplicate track_id {track.track_id!r}")
            for condition in ("genre", "mood", "instruments"):
                unknown = track.tags(condition) - self.vocab.category(condition)
                if unknown:
                    raise CorpusError(
                        f"track {track.track_id!r}: unknown {condition} tags {sorted(unknown)}"
                    )
            self.tracks[track.track_id] = track

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks.values())

    def __getitem__(self, track_id: str) -> TrackMetadata:
        return self.tracks[track_id]

    def split_tracks(self, split: str | None = None) -> list[TrackMetadata]:
        if split is None:
            return list(self.tracks.values())
        if split not in SPLITS:
            raise CorpusError(f"unknown split {split!r}")
        return [t for t in self.tracks.values() if t.split == split]

    def audio_paths(self) -> dict[str, str]:
        return {t.track_id: t.audio_path for t in self.tracks.values()}

    def with_splits(self, assignment: Mapping[str, str]) -> "Corpus":
        tracks = [replace(t, split=assignment[t.track_id]) for t in self.tracks.values()]
        return Corpus(tracks, self.vocab)


def _record_from_json(obj: dict, line_no: int) -> TrackMetadata:
    try:
        return TrackMetadata(
            track_id=obj["track_id"],
            audio_path=obj["audio_path"],
            genre=frozenset(obj["genre"]),
            mood=frozenset(obj["mood"]),
            instruments=frozenset(obj["instruments"]),
            tempo_bpm=float(obj["tempo_bpm"]),
            split=obj["split"],
            title=obj.get("title", ""),
        )
    except KeyError as exc:
        raise CorpusError(f"line {line_no}: missing field {exc}") from None


def load_metadata(path: str | Path, vocab: TagVocabulary | None = None) -> Corpus:
    """Parse and validate a metadata JSONL file."""
    tracks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: malformed JSON ({exc.msg})") from None
            try:
                tracks.append(_record_from_json(obj, line_no))
            except CorpusError as exc:
                raise CorpusError(f"{path}: {exc}") from None
    return Corpus(tracks, vocab)


def save_metadata(corpus: Corpus, path: str | Path) -> None:
    lines = []
    for t in corpus:
        record = {
            "track_id": t.track_id,
            "audio_path": t.audio_path,
            "genre": sorted(t.genre),
            "mood": sorted(t.mood),
            "instruments": sorted(t.instruments),
            "tempo_bpm": t.tempo_bpm,
            "split": t.split,
        }
        if t.title:
            record["title"] = t.title
        lines.append(json.dumps(record, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def make_split(track_ids: Iterable[str], ratios: tuple[float, float, float], seed: int) -> dict[str, str]:
    """Disjoint, exhaustive, seed-deterministic train/valid/test assignment."""
    ids = list(track_ids)
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise CorpusError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(ids)))
    n = len(ids)
    n_train = int(round(n * ratios[0]))
    n_valid = int(round(n * ratios[1]))
    n_valid = min(n_valid, n - n_train)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_valid:
            split = "valid"
        else:
            split = "test"
        assignment[ids[idx]] = split
    return assignment


@dataclass(frozen=True)
class SampleRef:
    """A patch location: track plus the start frame of its window."""

    track_id: str
    start_frame: int = 0


@dataclass(frozen=True)
class Triplet:
    anchor: SampleRef
    positive: SampleRef
    negative: SampleRef
    condition: str


def patch_overlap(a: SampleRef, b: SampleRef, patch_frames: int) -> int:
    """Overlapping frame count of two equal-length windows."""
    return max(0, patch_frames - abs(a.start_frame - b.start_frame))


class TripletSampler:
    """Draws triplets from one split of a corpus.

    Semantic triplets: anchor, positive and negative come from three
    distinct tracks; the positive is similar to the anchor along the
    condition and the negative is not. Track triplets: anchor and positive
    are two windows of the same track overlapping by at most half a patch;
    the negative comes from a different track.

    frame_counts maps track_id to the track's total log-mel frame count
    (a FeatureStore's frame_count works). Patch start frames are uniform
    over the valid positions. One sampler per worker; sampling mutates
    only the private RNG.
    """

    def __init__(
        self,
        corpus: Corpus,
        frame_counts: Callable[[str], int] | Mapping[str, int],
        split: str = "train",
        patch_frames: int = 129,
        rng: np.random.Generator | int | None = None,
        require_distinct_tracks: bool = True,
    ):
        self.corpus = corpus
        self.patch_frames = patch_frames
        self.require_distinct_tracks = require_distinct_tracks
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if callable(frame_counts):
            counts = {t.track_id: frame_counts(t.track_id) for t in corpus.split_tracks(split)}
        else:
            counts = {t.track_id: frame_counts[t.track_id] for t in corpus.split_tracks(split)}
        # Only tracks long enough for at least one patch participate.
        self.tracks = [t for t in corpus.split_tracks(split) if counts[t.track_id] >= patch_frames]
        self.frame_counts = {t.track_id: counts[t.track_id] for t in self.tracks}
        self._index = {t.track_id: i for i, t in enumerate(self.tracks)}

    # -- patch positions ---------------------------------------------------

    def _random_start(self, track_id: str) -> int:
        last = self.frame_counts[track_id] - self.patch_frames
        return int(self.rng.integers(0, last + 1))

    # -- semantic triplets -------------------------------------------------

    def _positives(self, anchor: TrackMetadata, condition: str) -> list[TrackMetadata]:
        return [
            t
            for t in self.tracks
            if t.track_id != anchor.track_id and similar(anchor, t, condition)
        ]

    def _has_negative(self, anchor: TrackMetadata, condition: str) -> bool:
        return any(
            t.track_id != anchor.track_id and not similar(anchor, t, condition)
            for t in self.tracks
        )

    def eligible_anchors(self, condition: str) -> list[TrackMetadata]:
        """Tracks with at least one valid positive and negative."""
        return [
            t
            for t in self.tracks
            if self._positives(t, condition) and self._has_negative(t, condition)
        ]

    def sample_category_triplet(self, condition: str, conflict: bool = False) -> Triplet:
        """One triplet for a semantic dimension.

        With conflict=True the positive must be similar to the anchor
        along the probed dimension only (dissimilar along the other
        three), which makes the full-space distance a bad judge and the
        subspace distance a good one.
        """
        if condition not in CONDITIONS:
            raise CorpusError(f"unknown condition {condition!r}")
        if not self.tracks:
            raise CorpusError("no usable tracks in this split")
        others = [c for c in CONDITIONS if c != condition]
        for _ in range(MAX_SAMPLER_ATTEMPTS):
            anchor = self.tracks[int(self.rng.integers(0, len(self.tracks)))]
            positives = self._positives(anchor, condition)
            if conflict:
                positives = [
                    p for p in positives if not any(similar(anchor, p, o) for o in others)
                ]
            if not positives:
                continue
            negative = self._sample_negative(anchor, condition)
            if negative is None:
                continue
            positive = positives[int(self.rng.integers(0, len(positives)))]
            return Triplet(
                anchor=SampleRef(anchor.track_id, self._random_start(anchor.track_id)),
                positive=SampleRef(positive.track_id, self._random_start(positive.track_id)),
                negative=SampleRef(negative.track_id, self._random_start(negative.track_id)),
                condition=condition,
            )
        raise CorpusError(
            f"no valid {condition} triplet found after {MAX_SAMPLER_ATTEMPTS} attempts"
        )

    def _sample_negative(self, anchor: TrackMetadata, condition: str) -> TrackMetadata | None:
        for _ in range(MAX_SAMPLER_ATTEMPTS):
            cand = self.tracks[int(self.rng.integers(0, len(self.tracks)))]
            if cand.track_id == anchor.track_id:
                continue
            if not similar(anchor, cand, condition):
                return cand
        # Rejection exhausted (nearly everything is similar): fall back to a scan.
        pool = [
            t
            for t in self.tracks
            if t.track_id != anchor.track_id and not similar(anchor, t, condition)
        ]
        if not pool:
            return None
        return pool[int(self.rng.integers(0, len(pool)))]

    # -- track triplets ----------------------------------------------------

    @property
    def min_start_gap(self) -> int:
        """Smallest |start difference| keeping window overlap <= 50%.

        overlap = patch - |gap|, so overlap <= patch//2 needs
        |gap| >= patch - patch//2.
        """
        return self.patch_frames - self.patch_frames // 2

    def sample_track_triplet(self) -> Triplet:
        """Anchor/positive from one track (<= 50% window overlap), negative
        from a uniformly chosen different track."""
        gap = self.min_start_gap
        long_enough = [
            t for t in self.tracks if self.frame_counts[t.track_id] - self.patch_frames >= gap
        ]
        if not long_enough:
            raise CorpusError("no track is long enough for two windows with <= 50% overlap")
        if len(self.tracks) < 2:
            raise CorpusError("track triplets need at least two tracks")
        anchor_track = long_enough[int(self.rng.integers(0, len(long_enough)))]
        last = self.frame_counts[anchor_track.track_id] - self.patch_frames
        # Anchor starts that admit a positive: [0, last-gap] or [gap, last].
        if 2 * gap <= last:
            a_start = int(self.rng.integers(0, last + 1))
        else:
            side_size = last - gap + 1
            pick = int(self.rng.integers(0, 2 * side_size))
            a_start = pick if pick < side_size else gap + (pick - side_size)
        # Valid positive starts: |a_start - p_start| >= gap.
        lo_count = max(0, a_start - gap + 1)
        hi_count = max(0, last - (a_start + gap) + 1)
        pick = int(self.rng.integers(0, lo_count + hi_count))
        p_start = pick if pick < lo_count else a_start + gap + (pick - lo_count)
        while True:
            other = self.tracks[int(self.rng.integers(0, len(self.tracks)))]
            if other.track_id != anchor_track.track_id:
                break
        return Triplet(
            anchor=SampleRef(anchor_track.track_id, a_start),
            positive=SampleRef(anchor_track.track_id, p_start),
            negative=SampleRef(other.track_id, self._random_start(other.track_id)),
            condition=TRACK_CONDITION,
        )

    def sample(self, condition: str) -> Triplet:
        if condition == TRACK_CONDITION:
            return self.sample_track_triplet()
        return self.sample_category_triplet(condition)


def triplet_to_json(triplet: Triplet, triplet_id: str | None = None) -> dict:
    obj = {
        "a": {"track": triplet.anchor.track_id, "start": triplet.anchor.start_frame},
        "p": {"track": triplet.positive.track_id, "start": triplet.positive.start_frame},
        "n": {"track": triplet.negative.track_id, "start": triplet.negative.start_frame},
        "condition": triplet.condition,
    }
    if triplet_id is not None:
        obj["id"] = triplet_id
    return obj


def triplet_from_json(obj: dict) -> Triplet:
    def ref(key: str) -> SampleRef:
        return SampleRef(obj[key]["track"], int(obj[key].get("start", 0)))

    return Triplet(anchor=ref("a"), positive=ref("p"), negative=ref("n"), condition=obj["condition"])


def save_triplets(triplets: Iterable[Triplet], path: str | Path, ids: Iterable[str] | None = None) -> None:
    id_list = list(ids) if ids is not None else None
    lines = []
    for i, t in enumerate(triplets):
        lines.append(json.dumps(triplet_to_json(t, id_list[i] if id_list else None), sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_triplets(path: str | Path) -> list[Triplet]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(triplet_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}: line {line_no}: bad triplet record ({exc})") from None
    return out
