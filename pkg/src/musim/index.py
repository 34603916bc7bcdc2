"""Persistent full-song embedding index and weighted query-by-example.

The index stores one unit-norm song embedding per track plus the tag/BPM
metadata the retrieval service exposes. Queries rank tracks by

    d_w(e1, e2) = sqrt( sum_s  w_s * ||(e1 - e2) o m_s||^2 )

which reduces to plain Euclidean distance when every weight is 1, because
the four subspace masks partition the embedding coordinates.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrayio import load_arrays, save_arrays
from .corpus import CONDITIONS, Corpus
from .evaluation import song_embedding
from .features import FeatureStore
from .model import DimensionMask, SimilarityEncoder, make_masks


class IndexError_(ValueError):
    """Index build or query failure (renamed to avoid the builtin)."""


@dataclass(frozen=True)
class WeightProfile:
    genre: float = 1.0
    mood: float = 1.0
    instruments: float = 1.0
    tempo: float = 1.0

    def __post_init__(self) -> None:
        values = self.as_dict()
        if any(v < 0 for v in values.values()):
            raise IndexError_("dimension weights must be >= 0")
        if all(v == 0 for v in values.values()):
            raise IndexError_("at least one dimension weight must be > 0")

    def as_dict(self) -> dict[str, float]:
        return {c: float(getattr(self, c)) for c in CONDITIONS}


def coordinate_weights(weights: WeightProfile, masks: dict[str, DimensionMask]) -> np.ndarray:
    """Per-coordinate weight vector: w_s on the coordinates of mask m_s."""
    dim = masks[CONDITIONS[0]].bits.shape[0]
    out = np.zeros(dim, dtype=np.float64)
    for condition in CONDITIONS:
        out += getattr(weights, condition) * masks[condition].bits
    return out


def weighted_distance(e1, e2, weights: WeightProfile, masks: dict[str, DimensionMask]) -> float:
    """sqrt of the weighted sum of squared subspace distances."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    wvec = coordinate_weights(weights, masks)
    return float(np.sqrt(np.sum(wvec * (e1 - e2) ** 2)))


@dataclass
class EmbeddingIndex:
    track_ids: list[str]
    vectors: np.ndarray  # (N, D) float32, unit rows
    fingerprint: str
    built_at: float
    track_info: dict[str, dict]

    def __post_init__(self) -> None:
        if len(self.track_ids) != self.vectors.shape[0]:
            raise IndexError_("track_ids and vectors disagree in length")
        self._row = {tid: i for i, tid in enumerate(self.track_ids)}

    def __len__(self) -> int:
        return len(self.track_ids)

    def vector(self, track_id: str) -> np.ndarray:
        if track_id not in self._row:
            raise KeyError(track_id)
        return self.vectors[self._row[track_id]]

    @property
    def embedding_dim(self) -> int:
        return self.vectors.shape[1]


def _now() -> float:
    stamp = os.environ.get("SOURCE_DATE_EPOCH")
    return float(stamp) if stamp else time.time()


def build_index(
    corpus: Corpus,
    model: SimilarityEncoder,
    store: FeatureStore,
    fingerprint: str = "",
) -> tuple[EmbeddingIndex, dict[str, str]]:
    """Embed every track; unreadable tracks are collected as failures and
    the index is built over the remainder."""
    ids, rows = [], []
    failures: dict[str, str] = {}
    info = {}
    for track in corpus:
        try:
            rows.append(song_embedding(model, store, track.track_id))
        except Exception as exc:  # noqa: BLE001 - per-track fault isolation
            failures[track.track_id] = str(exc)
            continue
        ids.append(track.track_id)
        info[track.track_id] = {
            "title": track.title or track.track_id,
            "genre": sorted(track.genre),
            "mood": sorted(track.mood),
            "instruments": sorted(track.instruments),
            "tempo_bpm": track.tempo_bpm,
            "audio_path": track.audio_path,
        }
    if not ids:
        raise IndexError_("no tracks could be embedded; index would be empty")
    index = EmbeddingIndex(
        track_ids=ids,
        vectors=np.stack(rows).astype(np.float32),
        fingerprint=fingerprint,
        built_at=_now(),
        track_info=info,
    )
    return index, failures


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    save_arrays(
        path,
        {"vectors": index.vectors},
        meta={
            "kind": "embedding_index",
            "track_ids": index.track_ids,
            "fingerprint": index.fingerprint,
            "built_at": index.built_at,
            "track_info": index.track_info,
        },
    )


def load_index(path: str | Path) -> EmbeddingIndex:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "embedding_index":
        raise IndexError_(f"{path} is not an embedding index")
    return EmbeddingIndex(
        track_ids=list(meta["track_ids"]),
        vectors=arrays["vectors"],
        fingerprint=meta.get("fingerprint", ""),
        built_at=meta.get("built_at", 0.0),
        track_info=meta.get("track_info", {}),
    )


def query(
    index: EmbeddingIndex,
    weights: WeightProfile,
    k: int,
    track_id: str | None = None,
    vector: np.ndarray | None = None,
    exclude_query: bool = True,
    masks: dict[str, DimensionMask] | None = None,
) -> list[tuple[str, float]]:
    """k nearest tracks by weighted distance, ascending, ties broken by
    track_id. Querying by an unknown id raises KeyError; k larger than the
    index truncates."""
    if k < 1:
        raise IndexError_("k must be >= 1")
    if (track_id is None) == (vector is None):
        raise IndexError_("query needs exactly one of track_id or vector")
    if masks is None:
        masks = make_masks(index.embedding_dim)
    q = index.vector(track_id) if track_id is not None else np.asarray(vector, dtype=np.float64)
    if q.shape[0] != index.embedding_dim:
        raise IndexError_(f"query vector length {q.shape[0]} != index dim {index.embedding_dim}")
    wvec = coordinate_weights(weights, masks)
    diff = index.vectors.astype(np.float64) - q
    dists = np.sqrt((diff**2) @ wvec)
    order = sorted(range(len(index)), key=lambda i: (dists[i], index.track_ids[i]))
    out = []
    for i in order:
        tid = index.track_ids[i]
        if exclude_query and track_id is not None and tid == track_id:
            continue
        out.append((tid, float(dists[i])))
        if len(out) == k:
            break
    return out
