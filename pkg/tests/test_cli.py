import json
from pathlib import Path

import pytest

from musim.cli import build_parser, run

TRAIN_TOML = """
[synth]
n_tracks = 32
duration_s = 6.0
split_ratios = [0.5, 0.25, 0.25]

[train]
preset = "tiny"
max_epochs = 2
category_batch = 8
track_batch = 4
triplets_per_epoch = 24
val_category_triplets = 8
val_track_triplets = 4
seed = 4

[vq]
codebook_size = 24
training_frames = 3000
"""


def test_help_lists_all_subcommands(capsys):
    assert run(["--help"]) == 0
    out = capsys.readouterr().out
    for command in ("synth", "sample", "train", "evaluate", "vq-baseline", "index", "serve"):
        assert command in out


def test_no_command_is_usage_error():
    assert run([]) == 1


def test_unknown_command_exit_1():
    assert run(["frobnicate"]) == 1


def test_evaluate_requires_ckpt(tmp_path):
    code = run(["evaluate", "--corpus", "x.jsonl", "--triplets", str(tmp_path)])
    assert code == 1


def test_serve_requires_index():
    assert run(["serve"]) == 1


def test_runtime_failure_exit_2(tmp_path):
    code = run(
        ["evaluate", "--ckpt", str(tmp_path / "no.ckpt"), "--corpus", str(tmp_path / "no.jsonl"),
         "--triplets", str(tmp_path), "--out", str(tmp_path / "r.json")]
    )
    assert code == 2


def test_vq_codebook_default_is_1024():
    parser = build_parser()
    args = parser.parse_args(["vq-baseline", "--corpus", "c", "--triplets", "t"])
    assert args.codebook_size is None  # falls back to 1024 in the command


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, monkeymodule):
    """synth -> sample -> train -> evaluate -> vq -> index, via the CLI."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    config = root / "config.toml"
    config.write_text(TRAIN_TOML)
    corpus_dir = root / "corpus"
    monkeymodule.setenv("SOURCE_DATE_EPOCH", "1700000000")

    assert run(["synth", "--config", str(config), "--seed", "4", "--out", str(corpus_dir)]) == 0
    metadata = corpus_dir / "metadata.jsonl"
    assert metadata.exists()

    triplet_dir = root / "triplets"
    assert run([
        "sample", "--corpus", str(metadata), "--config", str(config), "--seed", "5",
        "--split", "test", "--per-condition", "12", "--track-triplets", "10",
        "--out", str(triplet_dir),
    ]) == 0

    run_dir = root / "run"
    assert run([
        "train", "--corpus", str(metadata), "--config", str(config), "--out", str(run_dir),
    ]) == 0
    assert (run_dir / "best.ckpt").exists()
    assert (run_dir / "history.jsonl").exists()

    return root, config, metadata, triplet_dir, run_dir


@pytest.fixture(scope="module")
def monkeymodule():
    from _pytest.monkeypatch import MonkeyPatch

    mp = MonkeyPatch()
    yield mp
    mp.undo()


def test_end_to_end_report(pipeline):
    root, config, metadata, triplet_dir, run_dir = pipeline
    report_path = root / "report.json"
    code = run([
        "evaluate", "--ckpt", str(run_dir / "best.ckpt"), "--corpus", str(metadata),
        "--triplets", str(triplet_dir), "--space", "sub", "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    for dim in ("genre", "mood", "instruments", "tempo"):
        assert dim in report and 0.0 <= report[dim] <= 1.0
    assert "overall" in report and "track" in report


def test_evaluate_with_user_votes(pipeline):
    root, config, metadata, triplet_dir, run_dir = pipeline
    corpus = json.loads("[" + ",".join(metadata.read_text().strip().splitlines()) + "]")
    test_ids = [r["track_id"] for r in corpus if r["split"] == "test"][:3]
    a, p, n = test_ids
    user_rows = [
        {"id": "u0", "a": {"track": a, "start": 0}, "p": {"track": p, "start": 0},
         "n": {"track": n, "start": 0}, "condition": "track"},
        {"id": "u1", "a": {"track": p, "start": 0}, "p": {"track": n, "start": 0},
         "n": {"track": a, "start": 0}, "condition": "track"},
        {"id": "u2", "a": {"track": n, "start": 0}, "p": {"track": a, "start": 0},
         "n": {"track": p, "start": 0}, "condition": "track"},
    ]
    (triplet_dir / "user.jsonl").write_text("\n".join(json.dumps(r) for r in user_rows) + "\n")
    votes = root / "votes.jsonl"
    votes.write_text(
        '{"id": "u0", "votes_p": 10, "votes_n": 0}\n'
        '{"id": "u1", "votes_p": 0, "votes_n": 10}\n'
        '{"id": "u2", "votes_p": 8, "votes_n": 2}\n'
    )
    report_path = root / "user_report.json"
    code = run([
        "evaluate", "--ckpt", str(run_dir / "best.ckpt"), "--corpus", str(metadata),
        "--triplets", str(triplet_dir), "--user-votes", str(votes),
        "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert "user" in report
    assert report["counts"]["user"] == 2  # u2 fails the 0.9 agreement bar


def test_vq_baseline_cli(pipeline):
    root, config, metadata, triplet_dir, _ = pipeline
    out = root / "vq_report.json"
    code = run([
        "vq-baseline", "--corpus", str(metadata), "--triplets", str(triplet_dir),
        "--config", str(config), "--seed", "6", "--out", str(out),
    ])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["k"] == 24
    for dim in ("genre", "mood", "instruments", "tempo"):
        assert dim in report


def test_index_cli_and_determinism(pipeline):
    root, config, metadata, triplet_dir, run_dir = pipeline
    idx1 = root / "idx1.bin"
    idx2 = root / "idx2.bin"
    for path in (idx1, idx2):
        code = run([
            "index", "--ckpt", str(run_dir / "best.ckpt"), "--corpus", str(metadata),
            "--config", str(config), "--out", str(path),
        ])
        assert code == 0
    assert idx1.read_bytes() == idx2.read_bytes()


def test_synth_rerun_is_byte_identical(pipeline):
    root, config, metadata, *_ = pipeline
    again = root / "corpus_again"
    assert run(["synth", "--config", str(config), "--seed", "4", "--out", str(again)]) == 0
    assert (again / "metadata.jsonl").read_bytes().replace(
        str(again).encode(), b"X"
    ) == metadata.read_bytes().replace(str(metadata.parent).encode(), b"X")
    wav1 = sorted((metadata.parent / "audio").glob("*.wav"))
    wav2 = sorted((again / "audio").glob("*.wav"))
    assert [p.name for p in wav1] == [p.name for p in wav2]
    for p1, p2 in zip(wav1, wav2):
        assert p1.read_bytes() == p2.read_bytes()


def test_train_rerun_is_byte_identical(pipeline):
    root, config, metadata, _, run_dir = pipeline
    again = root / "run_again"
    assert run([
        "train", "--corpus", str(metadata), "--config", str(config), "--out", str(again),
    ]) == 0
    assert (again / "history.jsonl").read_bytes() == (run_dir / "history.jsonl").read_bytes()
    assert (again / "best.ckpt").read_bytes() == (run_dir / "best.ckpt").read_bytes()


def test_sample_rerun_is_byte_identical(pipeline):
    root, config, metadata, triplet_dir, _ = pipeline
    again = root / "triplets_again"
    assert run([
        "sample", "--corpus", str(metadata), "--config", str(config), "--seed", "5",
        "--split", "test", "--per-condition", "12", "--track-triplets", "10",
        "--out", str(again),
    ]) == 0
    for name in ("genre", "mood", "instruments", "tempo", "track"):
        assert (again / f"{name}.jsonl").read_bytes() == (triplet_dir / f"{name}.jsonl").read_bytes()
