#!/usr/bin/env python3
"""Build the integration-test fixture: a small synthetic corpus, an index
over it (deterministic untrained encoder) and the expected top-3 answer for
a tempo-only query, computed here by an independent exhaustive scan."""

import json
import sys
from pathlib import Path

import numpy as np

from musim.config import FeatureConfig
from musim.features import FeatureStore
from musim.index import build_index, save_index
from musim.model import init_params
from musim.synth import SynthSpec, generate_synthetic_corpus

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "fixture")
SEED = 77
K = 3


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(n_tracks=24, duration_s=6.0, split_ratios=(0.5, 0.25, 0.25))
    corpus, _ = generate_synthetic_corpus(spec, SEED, OUT)
    store = FeatureStore(corpus.audio_paths(), FeatureConfig())
    model = init_params(SEED, "tiny")
    index, failures = build_index(corpus, model, store, fingerprint="fixture")
    assert not failures
    save_index(index, OUT / "index.bin")

    query_id = index.track_ids[0]
    q = index.vector(query_id).astype(np.float64)
    sub = index.embedding_dim // 4
    tempo_slice = slice(3 * sub, 4 * sub)
    weight = 2.0
    scored = []
    for tid in index.track_ids:
        if tid == query_id:
            continue
        diff = index.vector(tid).astype(np.float64) - q
        scored.append((tid, float(np.sqrt(weight * np.sum(diff[tempo_slice] ** 2)))))
    scored.sort(key=lambda pair: (pair[1], pair[0]))

    expected = {
        "query_track": query_id,
        "weights": {"genre": 0, "mood": 0, "instruments": 0, "tempo": 2},
        "k": K,
        "top": [tid for tid, _ in scored[:K]],
        "distances": [d for _, d in scored[:K]],
        "n_tracks": len(index),
    }
    (OUT / "expected.json").write_text(json.dumps(expected, indent=2))
    print(f"fixture ready in {OUT}: query {query_id}, top {expected['top']}")


if __name__ == "__main__":
    main()
