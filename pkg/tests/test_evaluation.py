import json

import numpy as np
import pytest

from soundalike.audio import Waveform
from soundalike.errors import ModelNotFitted, UndefinedAP, UnknownAnnotation
from soundalike.evaluation import (ApReport, BaselineEncoder, LabeledEmbeddingSet,
                                   RandomEncoder, average_precision,
                                   evaluate_encoder, map_score)
from soundalike.pipeline import ClipRef, generate_synthetic_corpus


def brute_force_ap(relevance):
    """Independent AP oracle: direct double loop over the definition."""
    positions = [i for i, r in enumerate(relevance) if r]
    if not positions:
        return None
    total = 0.0
    for k in positions:
        hits = sum(1 for i in range(k + 1) if relevance[i])
        total += hits / (k + 1)
    return total / len(positions)


def brute_force_map(embeddings, labels):
    """Enumerate every pair and category by hand; no shared code paths."""
    n = len(labels)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append((float(np.linalg.norm(embeddings[i] - embeddings[j])), i, j))
    pairs.sort(key=lambda p: p[0])  # python sort is stable: (i, j) order kept
    aps = {}
    for cat in sorted(set(labels)):
        relevance = [labels[i] == cat and labels[j] == cat for _, i, j in pairs]
        ap = brute_force_ap(relevance)
        if ap is not None:
            aps[cat] = ap
    return (sum(aps.values()) / len(aps) if aps else float("nan")), aps


# -- average precision ---------------------------------------------------------

def test_ap_perfect_ranking():
    assert average_precision([1, 1, 0, 0]) == 1.0


def test_ap_interleaved():
    assert abs(average_precision([1, 0, 1]) - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12


def test_ap_late_single_positive():
    assert abs(average_precision([0, 0, 1]) - 1.0 / 3.0) < 1e-12


def test_ap_no_positives_raises():
    with pytest.raises(UndefinedAP):
        average_precision([0, 0, 0])


def test_ap_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        rel = (rng.random(rng.integers(1, 12)) < 0.4).astype(int)
        if rel.sum() == 0:
            rel[rng.integers(0, len(rel))] = 1
        assert abs(average_precision(rel) - brute_force_ap(list(rel))) < 1e-12


def test_ap_monotone_under_positive_demotion():
    base = [1, 1, 0, 1, 0, 0]
    ap_before = average_precision(base)
    worse = [1, 1, 0, 0, 0, 1]  # same positives, one pushed later
    assert average_precision(worse) <= ap_before


# -- map_score -------------------------------------------------------------------

def labeled(embeddings, genres, moods=None, tracks=None):
    n = len(genres)
    return LabeledEmbeddingSet(
        embeddings=np.asarray(embeddings, dtype=np.float64),
        track_ids=list(tracks or ["t%d" % i for i in range(n)]),
        genres=list(genres), moods=list(moods or ["m"] * n))


def test_map_score_perfect_clusters():
    # only genre "a" has positive pairs; they rank strictly first -> mAP 1.0
    emb = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [-5.0, 5.0]])
    out = map_score(labeled(emb, ["a", "a", "b", "c"]), "genre")
    assert out["map"] == 1.0
    assert out["skipped"] == ["b", "c"]


def test_map_score_pooled_ranking_two_clusters():
    # two equally tight clusters: their positive pairs tie at distance 0.5
    # and the (i, j)-lexicographic tie break puts a's pair first, so b's AP
    # is 1/2 under pooled pair ranking (not per-query averaging)
    emb = np.array([[0.0, 0.0], [0.5, 0.0], [5.0, 5.0], [5.5, 5.0]])
    out = map_score(labeled(emb, ["a", "a", "b", "b"]), "genre")
    assert abs(out["per_category"]["a"] - 1.0) < 1e-12
    assert abs(out["per_category"]["b"] - 0.5) < 1e-12
    assert abs(out["map"] - 0.75) < 1e-12


def test_map_score_hand_computed_six_points():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(6, 3))
    genres = ["a", "a", "a", "b", "b", "b"]
    out = map_score(labeled(emb, genres), "genre")
    expected_map, expected_aps = brute_force_map(emb, genres)
    assert abs(out["map"] - expected_map) < 1e-12
    for cat, ap in expected_aps.items():
        assert abs(out["per_category"][cat] - ap) < 1e-12


def test_map_score_brute_force_property():
    rng = np.random.default_rng(2)
    for trial in range(500):
        n = int(rng.integers(2, 9))
        emb = rng.normal(size=(n, 4))
        labels = [str(rng.integers(0, 3)) for _ in range(n)]
        ours = map_score(labeled(emb, labels), "genre")
        ref_map, ref_aps = brute_force_map(emb, labels)
        assert set(ours["per_category"]) == set(ref_aps)
        for cat in ref_aps:
            assert abs(ours["per_category"][cat] - ref_aps[cat]) < 1e-12
        if ref_aps:
            assert abs(ours["map"] - ref_map) < 1e-12


def test_map_score_random_labels_near_prior():
    rng = np.random.default_rng(3)
    n = 200
    emb = rng.normal(size=(n, 8))
    labels = ["a"] * (n // 2) + ["b"] * (n // 2)
    rng.shuffle(labels)
    out = map_score(labeled(emb, labels), "genre")
    # positive-pair prior for one balanced category among all pairs
    prior = ((n // 2) * (n // 2 - 1) / 2) / (n * (n - 1) / 2)
    assert abs(out["map"] - prior) < 0.05


def test_map_score_rotation_invariant():
    rng = np.random.default_rng(4)
    emb = rng.normal(size=(30, 8))
    labels = [str(i % 3) for i in range(30)]
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    a = map_score(labeled(emb, labels), "genre")
    b = map_score(labeled(emb @ q.T, labels), "genre")
    assert abs(a["map"] - b["map"]) < 1e-9
    for cat in a["per_category"]:
        assert abs(a["per_category"][cat] - b["per_category"][cat]) < 1e-9


def test_map_score_skips_singleton_categories():
    emb = np.eye(3)
    out = map_score(labeled(emb, ["a", "a", "lonely"]), "genre")
    assert out["skipped"] == ["lonely"]
    assert "lonely" not in out["per_category"]


def test_map_score_unknown_annotation():
    with pytest.raises(UnknownAnnotation):
        labeled(np.eye(2), ["a", "b"]).labels("tempo")


def test_map_score_deterministic():
    rng = np.random.default_rng(5)
    emb = rng.normal(size=(20, 4))
    labels = [str(i % 4) for i in range(20)]
    a = map_score(labeled(emb, labels), "genre")
    b = map_score(labeled(emb, labels), "genre")
    assert a == b


# -- encoders ----------------------------------------------------------------------

def test_random_encoder_deterministic_per_clip():
    enc = RandomEncoder(seed=1)
    clip = ClipRef(track_id="t1", offset=3.5)
    a = enc.embed_clip(clip)
    b = enc.embed_clip(clip)
    assert np.array_equal(a, b)
    other = enc.embed_clip(ClipRef(track_id="t1", offset=4.5))
    assert not np.array_equal(a, other)


def test_random_encoder_uniform_moments():
    enc = RandomEncoder(seed=2)
    vecs = np.stack([enc.embed_clip(ClipRef(track_id="t%d" % i, offset=0.0))
                     for i in range(100)])
    # 12,800 uniform draws: mean 0.5 within 0.02
    assert abs(vecs.mean() - 0.5) < 0.02
    assert vecs.min() >= 0.0 and vecs.max() < 1.0
    assert vecs.shape[1] == 128


def test_baseline_encoder_requires_fit():
    enc = BaselineEncoder()
    wave = Waveform(samples=np.zeros(160000), sample_rate=16000)
    with pytest.raises(ModelNotFitted):
        enc.embed_clip(ClipRef(track_id="x", offset=0.0), wave)


def test_baseline_encoder_deterministic_on_identical_clips():
    rng = np.random.default_rng(6)
    from soundalike.dsp import pca_fit
    pca = pca_fit(rng.normal(size=(50, 20)), 20)
    enc = BaselineEncoder(pca=pca)
    wave = Waveform(samples=rng.normal(0, 0.1, 160000), sample_rate=16000)
    a = enc.embed_clip(ClipRef(track_id="x", offset=0.0), wave)
    b = enc.embed_clip(ClipRef(track_id="x", offset=0.0), wave)
    assert np.array_equal(a, b)
    assert a.shape == (20,)


def test_report_serialization(tmp_path):
    report = ApReport(encoder="random", n_embeddings=10)
    report.annotations["genre"] = {"per_category": {"a": 0.5}, "map": 0.5,
                                   "skipped": []}
    path = tmp_path / "r.json"
    report.save(path)
    data = json.loads(path.read_text())
    assert data[0]["encoder"] == "random"
    assert data[0]["annotation_type"] == "genre"
    assert data[0]["map"] == 0.5


# -- end-to-end corpus ordering (corpus-quality gate) --------------------------------

@pytest.fixture(scope="module")
def gate_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("gate")
    return generate_synthetic_corpus(root, n_tracks=60, genres=4, moods=2, seed=11)


def test_baseline_beats_random_on_genre(gate_corpus):
    random_rep = evaluate_encoder(RandomEncoder(seed=0), gate_corpus, "train",
                                  clips_per_track=5)
    baseline = BaselineEncoder().fit(gate_corpus, seed=0, clips_per_track=5)
    baseline_rep = evaluate_encoder(baseline, gate_corpus, "train",
                                    clips_per_track=5)
    assert (baseline_rep.annotations["genre"]["map"]
            >= random_rep.annotations["genre"]["map"] + 0.1)


def test_baseline_beats_random_on_track(gate_corpus):
    random_rep = evaluate_encoder(RandomEncoder(seed=0), gate_corpus, "train",
                                  clips_per_track=5)
    baseline = BaselineEncoder().fit(gate_corpus, seed=0, clips_per_track=5)
    baseline_rep = evaluate_encoder(baseline, gate_corpus, "train",
                                    clips_per_track=5)
    assert (baseline_rep.annotations["track"]["map"]
            > random_rep.annotations["track"]["map"])


def test_track_construction_perfect_map():
    # one multi-clip track collapsed to a point, distant singleton tracks: mAP 1.0
    rng = np.random.default_rng(7)
    center = rng.normal(size=4)
    emb = [center, center, center]
    tracks = ["t0", "t0", "t0"]
    for t in range(1, 5):
        emb.append(rng.normal(size=4) * 100)
        tracks.append("t%d" % t)
    out = map_score(labeled(np.array(emb), ["g"] * 7, tracks=tracks), "track")
    assert out["map"] == 1.0
    assert set(out["skipped"]) == {"t1", "t2", "t3", "t4"}
