"""Command-line entry point.

Subcommands: synth, sample, train, evaluate, vq-baseline, index, serve.
Exit codes: 0 success, 1 usage error, 2 runtime failure. Machine artifacts
are written atomically to the declared paths only; human-readable summaries
go to stderr. Flag precedence: CLI flag > config file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arrayio import atomic_write_text
from .config import (
    FeatureConfig,
    LossConfig,
    TrainConfig,
    config_hash,
    feature_config_from,
    load_config_file,
    loss_config_from,
    train_config_from,
)
from .corpus import (
    CONDITIONS,
    TRACK_CONDITION,
    CorpusError,
    TripletSampler,
    load_metadata,
    load_triplets,
    save_metadata,
    save_triplets,
)
from .features import FeatureStore


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="random seed (default from config or 0)")
    sub.add_argument("--config", type=Path, default=None, help="TOML or JSON config file")
    sub.add_argument("--out", type=Path, default=None, help="output directory or file")


def build_parser() -> _Parser:
    parser = _Parser(prog="musim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"musim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic corpus with independent factors")
    _add_common(p)
    p.add_argument("--tracks", type=int, default=None, help="number of tracks")
    p.add_argument("--duration", type=float, default=None, help="track duration in seconds")

    p = sub.add_parser("sample", help="sample triplet manifests from a corpus")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True, help="metadata.jsonl")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--per-condition", type=int, default=200, help="triplets per semantic dimension")
    p.add_argument("--track-triplets", type=int, default=200, help="track-based triplets")
    p.add_argument("--conflict", action="store_true", help="also sample conflict triplets per dimension")

    p = sub.add_parser("train", help="train the embedding model")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--preset", default=None, help="architecture preset (full or tiny)")
    p.add_argument("--margin", type=float, default=None, help="triplet margin")
    p.add_argument("--lambda", dest="track_weight", type=float, default=None,
                   help="track-regularization weight")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt in --out")

    p = sub.add_parser("evaluate", help="score triplet sets with a trained model")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--triplets", type=Path, required=True, help="directory of triplet manifests")
    p.add_argument("--space", default="sub", choices=["sub", "all"])
    p.add_argument("--user-votes", type=Path, default=None, help="dim-sim style vote JSONL")

    p = sub.add_parser("vq-baseline", help="MFCC vector-quantization baseline evaluation")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--triplets", type=Path, required=True)
    p.add_argument("--codebook-size", type=int, default=None, help="K (default 1024)")
    p.add_argument("--training-frames", type=int, default=None,
                   help="MFCC frames sampled for the codebook fit")
    p.add_argument("--codebook-out", type=Path, default=None, help="also persist the codebook")

    p = sub.add_parser("index", help="build the full-song embedding index")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("serve", help="serve the retrieval API and UI")
    _add_common(p)
    p.add_argument("--index", type=Path, required=True, dest="index_path")
    p.add_argument("--ckpt", type=Path, default=None, help="checkpoint for clip queries")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--static", type=Path, default=None, help="built UI assets to serve at /")

    return parser


def _load_sections(args) -> dict:
    if args.config is None:
        return {}
    return load_config_file(args.config)


def _seed(args, sections: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    return int(sections.get("seed", default))


def _require_out(args, command: str) -> Path:
    if args.out is None:
        raise CorpusError(f"{command} needs --out")
    return args.out


# -- subcommands -------------------------------------------------------------


def _cmd_synth(args) -> int:
    from .synth import SynthSpec, generate_synthetic_corpus

    sections = _load_sections(args)
    synth_cfg = dict(sections.get("synth", {}))
    if args.tracks is not None:
        synth_cfg["n_tracks"] = args.tracks
    if args.duration is not None:
        synth_cfg["duration_s"] = args.duration
    if "split_ratios" in synth_cfg:
        synth_cfg["split_ratios"] = tuple(synth_cfg["split_ratios"])
    spec = SynthSpec(**synth_cfg)
    seed = _seed(args, sections)
    out = _require_out(args, "synth")
    corpus, _ = generate_synthetic_corpus(spec, seed, out)
    save_metadata(corpus, out / "metadata.jsonl")
    _say(f"synth: wrote {len(corpus)} tracks and metadata.jsonl to {out}")
    return 0


def _make_store(corpus, sections) -> FeatureStore:
    cfg = feature_config_from(sections.get("features"))
    return FeatureStore(corpus.audio_paths(), cfg)


def _cmd_sample(args) -> int:
    sections = _load_sections(args)
    seed = _seed(args, sections)
    out = _require_out(args, "sample")
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_metadata(args.corpus)
    store = _make_store(corpus, sections)
    sampler = TripletSampler(
        corpus, store.frame_count, split=args.split, rng=np.random.default_rng(seed)
    )
    for condition in CONDITIONS:
        triplets = [sampler.sample_category_triplet(condition) for _ in range(args.per_condition)]
        save_triplets(triplets, out / f"{condition}.jsonl")
    track = [sampler.sample_track_triplet() for _ in range(args.track_triplets)]
    save_triplets(track, out / "track.jsonl")
    if args.conflict:
        for condition in CONDITIONS:
            triplets = [
                sampler.sample_category_triplet(condition, conflict=True)
                for _ in range(args.per_condition)
            ]
            save_triplets(triplets, out / f"conflict_{condition}.jsonl")
    _say(f"sample: wrote manifests for split {args.split!r} to {out}")
    return 0


def _cmd_train(args) -> int:
    from .training import train

    sections = _load_sections(args)
    out = _require_out(args, "train")
    corpus = load_metadata(args.corpus)
    store = _make_store(corpus, sections)

    train_kwargs = dict(sections.get("train", {}))
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    if args.preset is not None:
        train_kwargs["preset"] = args.preset
    if args.max_epochs is not None:
        train_kwargs["max_epochs"] = args.max_epochs
    train_cfg = train_config_from(train_kwargs)

    loss_kwargs = dict(sections.get("loss", {}))
    if args.margin is not None:
        loss_kwargs["margin"] = args.margin
    if args.track_weight is not None:
        loss_kwargs["track_weight"] = args.track_weight
    loss_cfg = loss_config_from(loss_kwargs)

    out.mkdir(parents=True, exist_ok=True)
    _, history = train(
        corpus, None, loss_cfg, train_cfg, store, out_dir=out, resume=args.resume, log=_say
    )
    _say(f"train: {len(history)} epochs, best val loss "
         f"{min(r.val_loss for r in history):.4f}; artifacts in {out}")
    return 0


def _load_triplet_dir(triplet_dir: Path, want_track: bool = True) -> dict:
    sets = {}
    for condition in CONDITIONS:
        path = triplet_dir / f"{condition}.jsonl"
        if path.exists():
            sets[condition] = load_triplets(path)
    track_path = triplet_dir / "track.jsonl"
    if want_track and track_path.exists():
        sets[TRACK_CONDITION] = load_triplets(track_path)
    return sets


def _cmd_evaluate(args) -> int:
    from .evaluation import evaluate, filter_user_triplets, load_user_annotations
    from .model import load_checkpoint

    sections = _load_sections(args)
    corpus = load_metadata(args.corpus)
    store = _make_store(corpus, sections)
    model, _, _ = load_checkpoint(args.ckpt)
    triplet_sets = _load_triplet_dir(args.triplets)

    user_triplets = None
    if args.user_votes is not None:
        user_path = args.triplets / "user.jsonl"
        by_id = {}
        with open(user_path, "r", encoding="utf-8") as fh:
            from .corpus import triplet_from_json

            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    by_id[obj["id"]] = triplet_from_json(obj)
        annotations = load_user_annotations(args.user_votes)
        user_triplets = filter_user_triplets(annotations, by_id)

    report = evaluate(model, store, triplet_sets, space=args.space, user_triplets=user_triplets)
    out = args.out or Path("report.json")
    atomic_write_text(out, json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    _say(f"evaluate: overall {report.overall:.3f} ({args.space} space) -> {out}")
    return 0


def _cmd_vq(args) -> int:
    from .evaluation import triplet_accuracy
    from .vq import sample_training_frames, track_histograms, vq_fit, vq_histogram

    sections = _load_sections(args)
    vq_cfg = dict(sections.get("vq", {}))
    k = args.codebook_size or int(vq_cfg.get("codebook_size", 1024))
    total = args.training_frames or int(vq_cfg.get("training_frames", 2_500_000))
    seed = _seed(args, sections)
    corpus = load_metadata(args.corpus)
    store = _make_store(corpus, sections)

    train_ids = [t.track_id for t in corpus.split_tracks("train")]
    frames = sample_training_frames(store, train_ids, total, seed)
    codebook = vq_fit(frames, k, seed)
    _say(f"vq-baseline: fitted K={k} codebook on {frames.shape[0]} frames")

    triplet_sets = _load_triplet_dir(args.triplets)
    used_ids = sorted(
        {r.track_id for ts in triplet_sets.values() for t in ts for r in (t.anchor, t.positive, t.negative)}
    )
    histograms = track_histograms(store, used_ids, codebook)

    def song_dist(r1, r2):
        return float(np.linalg.norm(histograms[r1.track_id] - histograms[r2.track_id]))

    report = {"space": "histogram", "k": k, "counts": {}}
    scores = []
    for condition in CONDITIONS:
        if condition not in triplet_sets:
            raise CorpusError(f"missing triplet set for dimension {condition!r}")
        acc = triplet_accuracy(song_dist, triplet_sets[condition])
        report[condition] = acc
        report["counts"][condition] = len(triplet_sets[condition])
        scores.append(acc)
    report["overall"] = float(np.mean(scores))

    if TRACK_CONDITION in triplet_sets:
        patch = store.cfg.patch_frames

        def excerpt_dist(r1, r2):
            h1 = vq_histogram(store.mfcc(r1.track_id)[r1.start_frame : r1.start_frame + patch], codebook)
            h2 = vq_histogram(store.mfcc(r2.track_id)[r2.start_frame : r2.start_frame + patch], codebook)
            return float(np.linalg.norm(h1 - h2))

        report[TRACK_CONDITION] = triplet_accuracy(excerpt_dist, triplet_sets[TRACK_CONDITION])
        report["counts"][TRACK_CONDITION] = len(triplet_sets[TRACK_CONDITION])

    if args.codebook_out is not None:
        from .arrayio import save_arrays

        save_arrays(
            args.codebook_out,
            {"centroids": codebook.centroids.astype(np.float32)},
            meta={"kind": "vq_codebook", "k": codebook.k, "seed": codebook.seed,
                  "training_frames": codebook.training_frames},
        )

    out = args.out or Path("vq_report.json")
    atomic_write_text(out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    _say(f"vq-baseline: overall {report['overall']:.3f} -> {out}")
    return 0


def _cmd_index(args) -> int:
    from .index import build_index, save_index
    from .model import load_checkpoint

    sections = _load_sections(args)
    corpus = load_metadata(args.corpus)
    store = _make_store(corpus, sections)
    model, meta, _ = load_checkpoint(args.ckpt)
    out = _require_out(args, "index")
    fingerprint = config_hash(meta.get("config_hash", ""), meta.get("seed"), meta.get("step"))
    built, failures = build_index(corpus, model, store, fingerprint=fingerprint)
    save_index(built, out)
    for tid, why in failures.items():
        _say(f"index: skipped {tid}: {why}")
    _say(f"index: {len(built)} tracks -> {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .index import load_index
    from .model import load_checkpoint
    from .service import create_app

    sections = _load_sections(args)
    feature_cfg = feature_config_from(sections.get("features"))
    index = load_index(args.index_path)
    model = None
    if args.ckpt is not None:
        model, _, _ = load_checkpoint(args.ckpt)
    if args.out is not None:
        settings = {"index": str(args.index_path), "host": args.host, "port": args.port,
                    "tracks": len(index), "static": str(args.static) if args.static else None}
        atomic_write_text(args.out, json.dumps(settings, indent=2, sort_keys=True) + "\n")
    app = create_app(index, model=model, feature_cfg=feature_cfg, static_dir=args.static)
    _say(f"serve: {len(index)} tracks on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "sample": _cmd_sample,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "vq-baseline": _cmd_vq,
    "index": _cmd_index,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (KeyboardInterrupt, BrokenPipeError):
        return 2
    except Exception as exc:  # noqa: BLE001 - single reporting point
        _say(f"musim {args.command}: error: {exc}")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
