"""HTTP retrieval service over a built embedding index.

Endpoints:
    GET  /api/health          liveness + index size
    GET  /api/tracks          track listing with tags and BPM
    POST /api/query           weighted query-by-example (id or clip)
    GET  /api/audio/{id}      WAV stream for playback

The index is immutable once loaded; all endpoints are reads, so concurrent
requests need no locking. Clip queries additionally need a model
checkpoint to embed the uploaded audio.
"""

from __future__ import annotations

import base64
import binascii
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .audio import AudioError, load_wav_bytes
from .config import FeatureConfig
from .features import FeatureError, compute_log_mel, extract_patch, standardize
from .index import EmbeddingIndex, IndexError_, WeightProfile, query
from .model import SimilarityEncoder, embed_batch, make_masks


class QueryTarget(BaseModel):
    track_id: str | None = None
    clip_b64: str | None = None


class QueryRequest(BaseModel):
    query: QueryTarget
    weights: dict[str, float] = Field(default_factory=dict)
    k: int = 10
    exclude_query: bool = True


def _clip_vector(
    clip_b64: str, model: SimilarityEncoder, cfg: FeatureConfig
) -> np.ndarray:
    try:
        raw = base64.b64decode(clip_b64, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=400, detail="clip_b64 is not valid base64")
    try:
        wave = load_wav_bytes(raw, target_rate=cfg.sample_rate)
        series = compute_log_mel(wave, cfg)
    except (AudioError, FeatureError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    if series.n_frames < cfg.patch_frames:
        raise HTTPException(
            status_code=400,
            detail=f"clip too short: {series.n_frames} frames < one {cfg.patch_frames}-frame patch",
        )
    starts = range(0, series.n_frames - cfg.patch_frames + 1, cfg.patch_frames)
    windows = [standardize(extract_patch(series, s, cfg), cfg) for s in starts]
    embs = embed_batch(model, windows, train=False).numpy()
    mean = embs.mean(axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean


def create_app(
    index: EmbeddingIndex,
    model: SimilarityEncoder | None = None,
    feature_cfg: FeatureConfig | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="musim retrieval service")
    cfg = feature_cfg or FeatureConfig()
    masks = make_masks(index.embedding_dim)

    @app.get("/api/health")
    def health():
        return {"status": "ok", "tracks": len(index), "fingerprint": index.fingerprint}

    @app.get("/api/tracks")
    def tracks():
        out = []
        for tid in index.track_ids:
            info = index.track_info.get(tid, {})
            out.append(
                {
                    "track_id": tid,
                    "title": info.get("title", tid),
                    "genre": info.get("genre", []),
                    "mood": info.get("mood", []),
                    "instruments": info.get("instruments", []),
                    "tempo_bpm": info.get("tempo_bpm"),
                }
            )
        return out

    @app.post("/api/query")
    def run_query(request: QueryRequest):
        weight_values = {c: 1.0 for c in ("genre", "mood", "instruments", "tempo")}
        unknown = set(request.weights) - set(weight_values)
        if unknown:
            raise HTTPException(status_code=400, detail=f"unknown weight keys: {sorted(unknown)}")
        weight_values.update(request.weights)
        try:
            profile = WeightProfile(**weight_values)
        except IndexError_ as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if request.k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")

        target = request.query
        if (target.track_id is None) == (target.clip_b64 is None):
            raise HTTPException(
                status_code=400, detail="query needs exactly one of track_id or clip_b64"
            )
        if target.track_id is not None:
            try:
                results = query(
                    index,
                    profile,
                    request.k,
                    track_id=target.track_id,
                    exclude_query=request.exclude_query,
                    masks=masks,
                )
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown track_id {target.track_id!r}")
        else:
            if model is None:
                raise HTTPException(
                    status_code=400,
                    detail="clip queries need the service started with a model checkpoint",
                )
            vec = _clip_vector(target.clip_b64, model, cfg)
            results = query(index, profile, request.k, vector=vec, masks=masks)

        payload = []
        for tid, dist in results:
            info = index.track_info.get(tid, {})
            payload.append(
                {
                    "track_id": tid,
                    "distance": dist,
                    "tags": {
                        "genre": info.get("genre", []),
                        "mood": info.get("mood", []),
                        "instruments": info.get("instruments", []),
                    },
                    "bpm": info.get("tempo_bpm"),
                }
            )
        return {"results": payload, "weights": profile.as_dict(), "k": request.k}

    @app.get("/api/audio/{track_id}")
    def audio(track_id: str):
        info = index.track_info.get(track_id)
        if info is None or not info.get("audio_path"):
            raise HTTPException(status_code=404, detail=f"unknown track_id {track_id!r}")
        path = Path(info["audio_path"])
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"audio file missing for {track_id!r}")
        return FileResponse(path, media_type="audio/wav", filename=path.name)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
