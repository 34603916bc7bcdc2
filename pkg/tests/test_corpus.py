import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from musim import corpus as corpus_mod
from musim.corpus import (
    CONDITIONS,
    Corpus,
    CorpusError,
    SampleRef,
    TrackMetadata,
    Triplet,
    TripletSampler,
    load_metadata,
    load_triplets,
    make_split,
    patch_overlap,
    save_triplets,
    similar,
)


def track(tid, genre=("g00",), mood=("m00",), instruments=("i00",), bpm=120.0, split="train"):
    return TrackMetadata(
        track_id=tid,
        audio_path=f"/audio/{tid}.wav",
        genre=frozenset(genre),
        mood=frozenset(mood),
        instruments=frozenset(instruments),
        tempo_bpm=bpm,
        split=split,
    )


# -- metadata loading ---------------------------------------------------------


def test_empty_file_empty_corpus(tmp_path):
    path = tmp_path / "meta.jsonl"
    path.write_text("")
    assert len(load_metadata(path)) == 0


def test_negative_tempo_rejected():
    with pytest.raises(CorpusError, match="tempo_bpm"):
        track("t1", bpm=-1.0)


def test_fixture_split_counts(tmp_path):
    records = []
    splits = ["train"] * 6 + ["valid"] * 1 + ["test"] * 3
    for i, split in enumerate(splits):
        records.append(
            {
                "track_id": f"t{i}",
                "audio_path": f"/a/{i}.wav",
                "genre": ["g01"],
                "mood": ["m02"],
                "instruments": ["i03"],
                "tempo_bpm": 100.0 + i,
                "split": split,
            }
        )
    path = tmp_path / "meta.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    loaded = load_metadata(path)
    assert len(loaded.split_tracks("train")) == 6
    assert len(loaded.split_tracks("valid")) == 1
    assert len(loaded.split_tracks("test")) == 3


def test_malformed_line_reports_number(tmp_path):
    path = tmp_path / "meta.jsonl"
    path.write_text('{"track_id": "a"}\nnot json\n')
    with pytest.raises(CorpusError, match="line 1"):
        load_metadata(path)
    good = json.dumps(
        {"track_id": "a", "audio_path": "x", "genre": [], "mood": [], "instruments": [],
         "tempo_bpm": 100.0, "split": "train"}
    )
    path.write_text(good + "\nnot json\n")
    with pytest.raises(CorpusError, match="line 2"):
        load_metadata(path)


def test_duplicate_track_id(tmp_path):
    with pytest.raises(CorpusError, match="duplicate"):
        Corpus([track("same"), track("same")])


def test_unknown_tags_rejected():
    with pytest.raises(CorpusError, match="unknown genre tags"):
        Corpus([track("t1", genre=("not-a-real-tag",))])


# -- similarity ---------------------------------------------------------------


def test_tempo_within_five_bpm():
    assert similar(track("a", bpm=120), track("b", bpm=124), "tempo")
    assert similar(track("a", bpm=120), track("b", bpm=125), "tempo")  # tie at 5.0
    assert not similar(track("a", bpm=120), track("b", bpm=125.01), "tempo")


def test_similar_reflexive():
    t = track("a", genre=("g01", "g02"), mood=("m03",), instruments=("i01",), bpm=93.0)
    for condition in CONDITIONS:
        assert similar(t, t, condition)


def test_disjoint_mood_tags_not_similar():
    a = track("a", mood=("m00", "m01"))
    b = track("b", mood=("m02",))
    assert not similar(a, b, "mood")


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_similar_symmetric(data):
    genres = [f"g{i:02d}" for i in range(5)]
    moods = [f"m{i:02d}" for i in range(4)]
    insts = [f"i{i:02d}" for i in range(3)]

    def random_track(tid):
        return track(
            tid,
            genre=tuple(data.draw(st.sets(st.sampled_from(genres), max_size=3))),
            mood=tuple(data.draw(st.sets(st.sampled_from(moods), max_size=2))),
            instruments=tuple(data.draw(st.sets(st.sampled_from(insts), max_size=2))),
            bpm=data.draw(st.floats(min_value=40, max_value=250)),
        )

    a, b = random_track("a"), random_track("b")
    for condition in CONDITIONS:
        assert similar(a, b, condition) == similar(b, a, condition)


# -- splits --------------------------------------------------------------------


def test_split_all_train():
    ids = [f"t{i}" for i in range(20)]
    assignment = make_split(ids, (1.0, 0.0, 0.0), seed=3)
    assert all(v == "train" for v in assignment.values())


def test_split_is_partition():
    ids = [f"t{i}" for i in range(97)]
    assignment = make_split(ids, (0.6, 0.2, 0.2), seed=5)
    assert set(assignment) == set(ids)
    assert set(assignment.values()) <= {"train", "valid", "test"}


def test_split_sizes_match_ratios():
    ids = [f"t{i}" for i in range(1000)]
    assignment = make_split(ids, (0.83, 0.05, 0.12), seed=9)
    sizes = {s: sum(1 for v in assignment.values() if v == s) for s in ("train", "valid", "test")}
    assert sizes == {"train": 830, "valid": 50, "test": 120}


def test_split_deterministic():
    ids = [f"t{i}" for i in range(50)]
    assert make_split(ids, (0.8, 0.1, 0.1), seed=2) == make_split(ids, (0.8, 0.1, 0.1), seed=2)
    assert make_split(ids, (0.8, 0.1, 0.1), seed=2) != make_split(ids, (0.8, 0.1, 0.1), seed=3)


def test_split_bad_ratios():
    with pytest.raises(CorpusError, match="ratios"):
        make_split(["a"], (0.5, 0.2, 0.2), seed=0)


# -- samplers -------------------------------------------------------------------


def balanced_fixture():
    """8 tracks, two groups of four on every dimension; equal lengths."""
    tracks = []
    for i in range(8):
        tracks.append(
            track(
                f"t{i}",
                genre=(f"g{i // 4:02d}",),
                mood=(f"m{i % 4:02d}",),
                instruments=(f"i{i % 4:02d}",),
                bpm=100.0 + 20 * (i // 4),
            )
        )
    counts = {t.track_id: 400 for t in tracks}
    return Corpus(tracks), counts


def test_category_triplets_satisfy_invariant():
    corpus, counts = balanced_fixture()
    sampler = TripletSampler(corpus, counts, rng=0)
    for _ in range(500):
        for condition in CONDITIONS:
            t = sampler.sample_category_triplet(condition)
            a, p, n = corpus[t.anchor.track_id], corpus[t.positive.track_id], corpus[t.negative.track_id]
            assert similar(a, p, condition)
            assert not similar(a, n, condition)
            assert t.anchor.track_id != t.positive.track_id
            assert t.anchor.track_id != t.negative.track_id


def test_sampler_deterministic():
    corpus, counts = balanced_fixture()
    s1 = TripletSampler(corpus, counts, rng=7)
    s2 = TripletSampler(corpus, counts, rng=7)
    seq1 = [s1.sample_category_triplet("genre") for _ in range(50)]
    seq2 = [s2.sample_category_triplet("genre") for _ in range(50)]
    assert seq1 == seq2


def test_anchor_frequency_uniform_within_3_sigma():
    corpus, counts = balanced_fixture()
    sampler = TripletSampler(corpus, counts, rng=13)
    draws = 10_000
    tally = {t.track_id: 0 for t in corpus}
    for _ in range(draws):
        tally[sampler.sample_category_triplet("genre").anchor.track_id] += 1
    p = 1 / len(tally)
    sigma = np.sqrt(draws * p * (1 - p))
    for count in tally.values():
        assert abs(count - draws * p) <= 3 * sigma


def test_category_sampler_errors_when_impossible():
    tracks = [track("a", genre=("g00",)), track("b", genre=("g01",))]
    sampler = TripletSampler(Corpus(tracks), {"a": 300, "b": 300}, rng=0)
    with pytest.raises(CorpusError, match="genre"):
        sampler.sample_category_triplet("genre")


def test_track_triplet_overlap_rule():
    corpus, counts = balanced_fixture()
    sampler = TripletSampler(corpus, counts, rng=3)
    for _ in range(500):
        t = sampler.sample_track_triplet()
        assert t.anchor.track_id == t.positive.track_id
        assert t.negative.track_id != t.anchor.track_id
        assert patch_overlap(t.anchor, t.positive, 129) <= 64


def test_track_triplet_minimal_length_enumeration():
    # 129 + 65 frames: the only <=50%-overlap start pairs are 0 and 65.
    tracks = [track("long"), track("other")]
    counts = {"long": 129 + 65, "other": 129}
    sampler = TripletSampler(Corpus(tracks), counts, rng=21)
    seen = set()
    for _ in range(300):
        t = sampler.sample_track_triplet()
        seen.add((t.anchor.start_frame, t.positive.start_frame))
    assert seen <= {(0, 65), (65, 0)}
    assert seen == {(0, 65), (65, 0)}


def test_track_triplet_errors_when_too_short():
    tracks = [track("a"), track("b")]
    counts = {"a": 150, "b": 150}  # < 129 + 65
    sampler = TripletSampler(Corpus(tracks), counts, rng=0)
    with pytest.raises(CorpusError, match="50%"):
        sampler.sample_track_triplet()


def test_split_isolation(small_corpus, small_store):
    sampler = TripletSampler(small_corpus, small_store.frame_count, split="test", rng=5)
    test_ids = {t.track_id for t in small_corpus.split_tracks("test")}
    for _ in range(100):
        t = sampler.sample_category_triplet("genre")
        for ref in (t.anchor, t.positive, t.negative):
            assert ref.track_id in test_ids


def test_patch_starts_within_valid_range():
    corpus, counts = balanced_fixture()
    sampler = TripletSampler(corpus, counts, rng=17)
    last_valid = 400 - 129
    for _ in range(200):
        t = sampler.sample_category_triplet("tempo")
        for ref in (t.anchor, t.positive, t.negative):
            assert 0 <= ref.start_frame <= last_valid


# -- manifests -------------------------------------------------------------------


def test_triplet_manifest_round_trip(tmp_path):
    triplets = [
        Triplet(SampleRef("a", 3), SampleRef("b", 0), SampleRef("c", 12), "genre"),
        Triplet(SampleRef("a", 0), SampleRef("a", 70), SampleRef("d", 5), "track"),
    ]
    path = tmp_path / "triplets.jsonl"
    save_triplets(triplets, path)
    assert load_triplets(path) == triplets


def test_triplet_manifest_bad_line(tmp_path):
    path = tmp_path / "triplets.jsonl"
    path.write_text('{"a": {"track": "x"}}\n')
    with pytest.raises(CorpusError, match="line 1"):
        load_triplets(path)
