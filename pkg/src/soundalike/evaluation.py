"""Retrieval evaluation: per-category average precision over ranked pairs.

For each category, every unordered pair of embeddings is ranked by
ascending distance (ties broken by (i, j) lexicographic order) and marked
relevant when both rows carry that category's label. mAP per annotation
type is the unweighted mean over categories that have at least one
positive pair; empty categories are recorded and skipped.

Also hosts the two reference encoders the trained model is compared
against: a per-clip uniform random embedding, and mean MFCC decorrelated
by PCA.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .dsp import PcaModel, log_mel, mel_filterbank, mfcc, pca_fit, pca_transform, stft
from .errors import EmptySplit, ModelNotFitted, UndefinedAP, UnknownAnnotation
from .nn import encode_forward
from .pipeline import ClipRef, clip_pool, clip_rng, load_clip

ANNOTATIONS = ("genre", "mood", "track")
BASELINE_MELS = 128
BASELINE_COEFFS = 20


def average_precision(relevance) -> float:
    """AP of a ranked binary relevance list: mean precision at each hit."""
    rel = np.asarray(relevance, dtype=bool)
    n_pos = int(rel.sum())
    if n_pos == 0:
        raise UndefinedAP("ranking contains no positives")
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float(np.mean(hits[ranks - 1] / ranks))


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray  # (N, d)
    track_ids: list
    genres: list
    moods: list

    def labels(self, annotation: str) -> list:
        if annotation == "genre":
            return self.genres
        if annotation == "mood":
            return self.moods
        if annotation == "track":
            return self.track_ids
        raise UnknownAnnotation("no annotation named %r" % annotation)


def _ranked_pairs(embeddings: np.ndarray):
    """All unordered pairs sorted by ascending distance, stable in (i, j).

    Distances are direct difference norms, chunked to bound memory; the
    exact arithmetic matters because ties must resolve identically to a
    naive enumeration.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    d2 = np.empty(len(iu))
    chunk = max(1, 20_000_000 // max(e.shape[1], 1))
    for start in range(0, len(iu), chunk):
        sl = slice(start, start + chunk)
        diffs = e[iu[sl]] - e[ju[sl]]
        d2[sl] = np.sum(diffs * diffs, axis=1)
    order = np.argsort(d2, kind="stable")
    return iu[order], ju[order]


def map_score(labeled: LabeledEmbeddingSet, annotation: str) -> dict:
    """Per-category AP and their mean for one annotation type."""
    labels = labeled.labels(annotation)
    n = len(labels)
    if n < 2 or labeled.embeddings.shape[0] != n:
        raise EmptySplit("need at least 2 labeled embeddings")
    iu, ju = _ranked_pairs(labeled.embeddings)
    lab = np.asarray(labels, dtype=object)
    li, lj = lab[iu], lab[ju]

    per_category = {}
    skipped = []
    for cat in sorted(set(labels)):
        relevance = (li == cat) & (lj == cat)
        if not relevance.any():
            skipped.append(cat)
            continue
        per_category[cat] = average_precision(relevance)

    if per_category:
        mean_ap = float(np.mean(list(per_category.values())))
    else:
        mean_ap = float("nan")
    return {"per_category": per_category, "map": mean_ap, "skipped": skipped}


@dataclass
class ApReport:
    encoder: str
    n_embeddings: int
    annotations: dict = field(default_factory=dict)  # annotation -> map_score dict

    def to_json(self) -> list:
        """One serialized entry per annotation type."""
        return [
            {"encoder": self.encoder, "annotation_type": ann,
             "per_category": entry["per_category"], "map": entry["map"],
             "n_embeddings": self.n_embeddings, "skipped_categories": entry["skipped"]}
            for ann, entry in self.annotations.items()
        ]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# encoders under evaluation
# ---------------------------------------------------------------------------

class RandomEncoder:
    """Uniform[0, 1) embedding per clip; deterministic in (seed, clip)."""

    name = "random"
    dim = 128

    def __init__(self, seed: int = 0):
        self.seed = seed

    def embed_clip(self, clip: ClipRef, wave: Waveform | None = None) -> np.ndarray:
        rng = clip_rng(self.seed, clip.track_id, stream=1000 + int(round(clip.offset * 1000)))
        return rng.random(self.dim)


class BaselineEncoder:
    """Mean of 20 MFCCs from 128-band log-Mel frames, rotated by PCA."""

    name = "baseline"

    def __init__(self, pca: PcaModel | None = None):
        self.pca = pca
        self._fb = None

    def _features(self, wave: Waveform) -> np.ndarray:
        if self._fb is None or self._fb.weights.shape[1] != 1025:
            self._fb = mel_filterbank(BASELINE_MELS, 2048, wave.sample_rate)
        lm = log_mel(stft(wave), self._fb)
        return mfcc(lm, BASELINE_COEFFS).mean(axis=0)

    def fit(self, catalog, split: str = "train", seed: int = 0,
            clips_per_track: int = 10):
        """Fit PCA on the MFCC frame means of the training split's clips."""
        feats = []
        for clip in clip_pool(catalog, split, seed=seed, clips_per_track=clips_per_track):
            feats.append(self._features(load_clip(catalog, clip)))
        self.pca = pca_fit(np.asarray(feats), k=BASELINE_COEFFS)
        return self

    def embed_clip(self, clip: ClipRef, wave: Waveform) -> np.ndarray:
        if self.pca is None:
            raise ModelNotFitted("baseline encoder: call fit() before embedding")
        return pca_transform(self.pca, self._features(wave))


class ModelEncoder:
    """Wraps a trained EncoderModel for the evaluation protocol."""

    name = "trained"

    def __init__(self, model, batch_size: int = 32):
        self.model = model
        self.batch_size = batch_size

    def embed_clip(self, clip: ClipRef, wave: Waveform) -> np.ndarray:
        emb, _ = encode_forward(self.model, wave.samples[None, :], "inference")
        return emb[0]

    def embed_batch(self, waves: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, len(waves), self.batch_size):
            emb, _ = encode_forward(self.model, waves[start:start + self.batch_size],
                                    "inference")
            out.append(emb)
        return np.concatenate(out, axis=0)


def embed_split(encoder, catalog, split: str, clips_per_track: int = 10,
                seed: int = 0) -> LabeledEmbeddingSet:
    clips = clip_pool(catalog, split, seed=seed, clips_per_track=clips_per_track)
    if not clips:
        raise EmptySplit("split %r has no clips" % split)

    needs_audio = not isinstance(encoder, RandomEncoder)
    if isinstance(encoder, ModelEncoder):
        waves = np.stack([load_clip(catalog, c).samples for c in clips])
        embeddings = np.asarray(encoder.embed_batch(waves), dtype=np.float64)
    else:
        rows = []
        for clip in clips:
            wave = load_clip(catalog, clip) if needs_audio else None
            rows.append(encoder.embed_clip(clip, wave))
        embeddings = np.asarray(rows, dtype=np.float64)

    metas = {t.track_id: t for t in catalog.tracks}
    return LabeledEmbeddingSet(
        embeddings=embeddings,
        track_ids=[c.track_id for c in clips],
        genres=[metas[c.track_id].genre for c in clips],
        moods=[metas[c.track_id].mood for c in clips],
    )


def evaluate_encoder(encoder, catalog, split: str, clips_per_track: int = 10,
                     seed: int = 0) -> ApReport:
    """Embed a split's pre-sampled clips and score all three annotations."""
    labeled = embed_split(encoder, catalog, split, clips_per_track, seed)
    report = ApReport(encoder=encoder.name, n_embeddings=len(labeled.track_ids))
    for ann in ANNOTATIONS:
        report.annotations[ann] = map_score(labeled, ann)
    return report
