"""Triplet-accuracy evaluation, full-song embedding pooling and the
user-annotation agreement filter.

Semantic test triplets are judged on full-song embeddings (mean of
non-overlapping window embeddings, re-normalized); track triplets keep
their specific excerpts since anchor and positive come from the same song.
A triplet scores 1 when the positive is strictly closer to the anchor than
the negative; ties score 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .corpus import CONDITIONS, TRACK_CONDITION, CorpusError, SampleRef, Triplet
from .features import FeatureStore
from .model import ALL_DIMENSIONS, DimensionMask, SimilarityEncoder, embed_batch, make_masks


class EvaluationError(ValueError):
    pass


def song_embedding(model: SimilarityEncoder, store: FeatureStore, track_id: str) -> np.ndarray:
    """Mean of the embeddings of all non-overlapping windows, re-normalized
    to unit length."""
    windows = store.song_windows(track_id)
    embs = embed_batch(model, windows, train=False).numpy()
    mean = embs.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        return mean
    return (mean / norm).astype(np.float32)


def song_embeddings(
    model: SimilarityEncoder, store: FeatureStore, track_ids
) -> dict[str, np.ndarray]:
    return {tid: song_embedding(model, store, tid) for tid in track_ids}


def triplet_accuracy(distance_fn: Callable[[SampleRef, SampleRef], float], triplets) -> float:
    """Fraction of triplets with d(anchor, positive) < d(anchor, negative).

    Exact ties count as failures.
    """
    triplets = list(triplets)
    if not triplets:
        raise EvaluationError("cannot score an empty triplet set")
    correct = 0
    for t in triplets:
        if distance_fn(t.anchor, t.positive) < distance_fn(t.anchor, t.negative):
            correct += 1
    return correct / len(triplets)


def _masked_norm(v1: np.ndarray, v2: np.ndarray, bits: np.ndarray) -> float:
    diff = (v1.astype(np.float64) - v2.astype(np.float64)) * bits
    return float(np.linalg.norm(diff))


@dataclass
class EvalReport:
    space: str
    per_dimension: dict[str, float]
    overall: float
    track_accuracy: float | None = None
    user_accuracy: float | None = None
    triplet_counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"space": self.space}
        out.update({dim: self.per_dimension[dim] for dim in CONDITIONS})
        out["overall"] = self.overall
        if self.track_accuracy is not None:
            out["track"] = self.track_accuracy
        if self.user_accuracy is not None:
            out["user"] = self.user_accuracy
        out["counts"] = self.triplet_counts
        return out


def evaluate(
    model: SimilarityEncoder | None,
    store: FeatureStore | None,
    triplet_sets: Mapping[str, list[Triplet]],
    space: str = "sub",
    masks: Mapping[str, DimensionMask] | None = None,
    song_vectors: Mapping[str, np.ndarray] | None = None,
    user_triplets: list[Triplet] | None = None,
) -> EvalReport:
    """Score triplet sets per dimension and aggregate.

    space="sub" measures each semantic dimension inside its own subspace;
    space="all" uses the full embedding for everything. Track and user
    triplets always use the full embedding. song_vectors can replace the
    model-derived full-song embeddings (the track condition still needs a
    model and store for its excerpts).
    """
    if space not in ("sub", "all"):
        raise EvaluationError(f"space must be 'sub' or 'all', got {space!r}")
    missing = [c for c in CONDITIONS if c not in triplet_sets]
    if missing:
        raise EvaluationError(f"missing triplet sets for dimensions: {missing}")
    if masks is None:
        if song_vectors is not None:
            dim = len(next(iter(song_vectors.values())))
        else:
            dim = model.arch.embedding_dim
        masks = make_masks(dim)

    if song_vectors is None:
        needed = set()
        for condition in CONDITIONS:
            for t in triplet_sets[condition]:
                needed.update((t.anchor.track_id, t.positive.track_id, t.negative.track_id))
        if user_triplets:
            for t in user_triplets:
                needed.update((t.anchor.track_id, t.positive.track_id, t.negative.track_id))
        song_vectors = song_embeddings(model, store, sorted(needed))

    all_bits = masks[ALL_DIMENSIONS].bits

    per_dimension = {}
    counts = {}
    for condition in CONDITIONS:
        bits = masks[condition].bits if space == "sub" else all_bits

        def dist(r1: SampleRef, r2: SampleRef, bits=bits) -> float:
            return _masked_norm(song_vectors[r1.track_id], song_vectors[r2.track_id], bits)

        per_dimension[condition] = triplet_accuracy(dist, triplet_sets[condition])
        counts[condition] = len(triplet_sets[condition])

    overall = float(np.mean([per_dimension[c] for c in CONDITIONS]))

    track_accuracy = None
    if TRACK_CONDITION in triplet_sets and triplet_sets[TRACK_CONDITION]:
        track_triplets = triplet_sets[TRACK_CONDITION]
        refs = sorted(
            {r for t in track_triplets for r in (t.anchor, t.positive, t.negative)},
            key=lambda r: (r.track_id, r.start_frame),
        )
        # chunked so large test sets keep peak activation memory flat
        chunks = []
        for lo in range(0, len(refs), 64):
            batch = [store.patch(r.track_id, r.start_frame) for r in refs[lo : lo + 64]]
            chunks.append(embed_batch(model, batch, train=False).numpy())
        vecs = np.concatenate(chunks, axis=0)
        by_ref = {r: vecs[i] for i, r in enumerate(refs)}

        def excerpt_dist(r1: SampleRef, r2: SampleRef) -> float:
            return _masked_norm(by_ref[r1], by_ref[r2], all_bits)

        track_accuracy = triplet_accuracy(excerpt_dist, track_triplets)
        counts[TRACK_CONDITION] = len(track_triplets)

    user_accuracy = None
    if user_triplets:
        def user_dist(r1: SampleRef, r2: SampleRef) -> float:
            return _masked_norm(song_vectors[r1.track_id], song_vectors[r2.track_id], all_bits)

        user_accuracy = triplet_accuracy(user_dist, user_triplets)
        counts["user"] = len(user_triplets)

    return EvalReport(
        space=space,
        per_dimension=per_dimension,
        overall=overall,
        track_accuracy=track_accuracy,
        user_accuracy=user_accuracy,
        triplet_counts=counts,
    )


# -- user-annotation agreement filter ---------------------------------------


@dataclass(frozen=True)
class UserAnnotation:
    """Vote tally for one annotated triplet."""

    triplet_id: str
    votes_positive: int
    votes_negative: int

    def __post_init__(self) -> None:
        total = self.votes_positive + self.votes_negative
        if total < 1:
            raise EvaluationError(f"triplet {self.triplet_id!r}: needs at least one vote")
        if self.votes_positive < 0 or self.votes_negative < 0:
            raise EvaluationError(f"triplet {self.triplet_id!r}: negative vote count")

    @property
    def agreement(self) -> float:
        total = self.votes_positive + self.votes_negative
        return max(self.votes_positive, self.votes_negative) / total


def load_user_annotations(path: str | Path) -> dict[str, UserAnnotation]:
    """JSONL of {"id": str, "votes_p": int, "votes_n": int}."""
    out: dict[str, UserAnnotation] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ann = UserAnnotation(obj["id"], int(obj["votes_p"]), int(obj["votes_n"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"{path}: line {line_no}: bad annotation ({exc})") from None
            if ann.triplet_id in out:
                raise EvaluationError(f"{path}: duplicate annotation id {ann.triplet_id!r}")
            out[ann.triplet_id] = ann
    return out


def filter_user_triplets(
    annotations: Mapping[str, UserAnnotation],
    triplets_by_id: Mapping[str, Triplet],
    threshold: float = 0.9,
) -> list[Triplet]:
    """Keep triplets whose annotator agreement reaches the threshold,
    swapping positive/negative where the majority disagreed with the
    original labels."""
    kept = []
    for triplet_id in sorted(annotations):
        ann = annotations[triplet_id]
        if ann.agreement < threshold:
            continue
        if triplet_id not in triplets_by_id:
            raise EvaluationError(f"annotation {triplet_id!r} has no matching triplet")
        t = triplets_by_id[triplet_id]
        if ann.votes_negative > ann.votes_positive:
            t = Triplet(anchor=t.anchor, positive=t.negative, negative=t.positive, condition=t.condition)
        kept.append(t)
    return kept
