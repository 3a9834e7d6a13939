"""Weighted triplet objective and the training loop.

A minibatch of B clips becomes 2B rows (originals then their transformed
counterparts). Four positive relations are mined online within the batch:
transform (a clip and its own transform), same_track, genre, and mood,
weighted 1.0 / 0.5 / 0.1 / 0.1. Relations take precedence in that order:
a row that is positive under a finer relation is never reused as a
positive for a coarser one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, EmptySplit, InvalidEmbedding
from .nn import AdamState, adam_step, encode_backward, encode_forward

RELATION_WEIGHTS = {"transform": 1.0, "same_track": 0.5, "genre": 0.1, "mood": 0.1}
RELATIONS = ("transform", "same_track", "genre", "mood")
DEFAULT_MARGIN = 0.2


@dataclass(frozen=True)
class TripletTerm:
    anchor_idx: int
    positive_idx: int
    negative_idx: int
    relation: str
    weight: float


@dataclass
class LossBreakdown:
    per_relation: dict = field(default_factory=dict)  # relation -> mean hinge loss
    counts: dict = field(default_factory=dict)        # relation -> term count
    total: float = 0.0

    def to_json(self) -> dict:
        return {"total": self.total, "per_relation": dict(self.per_relation),
                "counts": dict(self.counts)}


@dataclass
class TrainConfig:
    margin: float = DEFAULT_MARGIN
    learning_rate: float = 1e-3
    anneal_factor: float = 0.5
    anneal_patience: int = 3
    early_stop_patience: int = 10
    max_steps: int = 2000
    batch_size: int = 32
    val_interval: int = 50
    val_clips_per_track: int = 10
    seed: int = 0


@dataclass
class BatchMeta:
    """Metadata for the 2B mined rows: originals first, transforms after."""

    track_ids: list
    genres: list
    moods: list

    @property
    def n_clips(self) -> int:
        return len(self.track_ids)

    def counterpart(self, row: int) -> int:
        b = self.n_clips
        return row + b if row < b else row - b

    def row_track(self, row: int) -> str:
        return self.track_ids[row % self.n_clips]

    def row_genre(self, row: int) -> str:
        return self.genres[row % self.n_clips]

    def row_mood(self, row: int) -> str:
        return self.moods[row % self.n_clips]


def pairwise_distances(embeddings: np.ndarray) -> np.ndarray:
    """Euclidean distances between unit rows via sqrt(2 - 2 cos), in [0, 2]."""
    e = np.asarray(embeddings, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise InvalidEmbedding("embeddings contain non-finite values")
    gram = e @ e.T
    sq = np.clip(2.0 - 2.0 * gram, 0.0, 4.0)
    d = np.minimum(np.sqrt(sq), 2.0)
    np.fill_diagonal(d, 0.0)
    return d


def triplet_loss(d_ap: float, d_an: float, margin: float) -> float:
    return max(0.0, d_ap - d_an + margin)


def _positive_rows(meta: BatchMeta, anchor: int, relation: str) -> list:
    n = 2 * meta.n_clips
    cp = meta.counterpart(anchor)
    if relation == "transform":
        return [cp]
    out = []
    for j in range(n):
        if j == anchor or j == cp:
            continue
        same_track = meta.row_track(j) == meta.row_track(anchor)
        if relation == "same_track":
            if same_track:
                out.append(j)
        elif relation == "genre":
            if not same_track and meta.row_genre(j) == meta.row_genre(anchor):
                out.append(j)
        elif relation == "mood":
            if not same_track and meta.row_mood(j) == meta.row_mood(anchor):
                out.append(j)
    return out


def _negative_rows(meta: BatchMeta, anchor: int, relation: str) -> list:
    n = 2 * meta.n_clips
    cp = meta.counterpart(anchor)
    out = []
    for j in range(n):
        if j == anchor:
            continue
        if relation == "transform":
            if j != cp:
                out.append(j)
        elif relation == "same_track":
            if meta.row_track(j) != meta.row_track(anchor):
                out.append(j)
        elif relation == "genre":
            if meta.row_genre(j) != meta.row_genre(anchor):
                out.append(j)
        elif relation == "mood":
            if meta.row_mood(j) != meta.row_mood(anchor):
                out.append(j)
    return out


def semi_hard_negative(d_anchor: np.ndarray, d_ap: float, candidates: list) -> int:
    """Closest negative beyond the positive; else the most-violating one."""
    best, best_d = -1, np.inf
    for j in candidates:
        d = d_anchor[j]
        if d > d_ap and d < best_d:
            best, best_d = j, d
    if best >= 0:
        return best
    best, best_d = -1, np.inf
    for j in candidates:
        if d_anchor[j] < best_d:
            best, best_d = j, d_anchor[j]
    return best


def mine_triplets(meta: BatchMeta, distances: np.ndarray,
                  margin: float = DEFAULT_MARGIN) -> list:
    """One term per (anchor, relation-positive) with a semi-hard negative."""
    terms = []
    n = 2 * meta.n_clips
    for anchor in range(n):
        for relation in RELATIONS:
            negatives = _negative_rows(meta, anchor, relation)
            if not negatives:
                continue
            for pos in _positive_rows(meta, anchor, relation):
                neg = semi_hard_negative(distances[anchor], distances[anchor, pos],
                                         negatives)
                terms.append(TripletTerm(
                    anchor_idx=anchor, positive_idx=pos, negative_idx=neg,
                    relation=relation, weight=RELATION_WEIGHTS[relation]))
    return terms


def total_loss(terms: list, embeddings: np.ndarray, margin: float = DEFAULT_MARGIN):
    """Weighted sum of per-relation mean hinge losses, plus its gradient.

    Distances inside the hinge are plain Euclidean norms of embedding
    differences; for unit-norm rows they coincide with pairwise_distances.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    grad = np.zeros_like(e)
    sums = {r: 0.0 for r in RELATIONS}
    counts = {r: 0 for r in RELATIONS}

    per_term = []
    for t in terms:
        ap = e[t.anchor_idx] - e[t.positive_idx]
        an = e[t.anchor_idx] - e[t.negative_idx]
        d_ap = float(np.linalg.norm(ap))
        d_an = float(np.linalg.norm(an))
        loss = triplet_loss(d_ap, d_an, margin)
        sums[t.relation] += loss
        counts[t.relation] += 1
        per_term.append((t, loss, ap, an, d_ap, d_an))

    breakdown = LossBreakdown()
    total = 0.0
    for r in RELATIONS:
        if counts[r] > 0:
            mean = sums[r] / counts[r]
            breakdown.per_relation[r] = mean
            breakdown.counts[r] = counts[r]
            total += RELATION_WEIGHTS[r] * mean
    breakdown.total = total

    for t, loss, ap, an, d_ap, d_an in per_term:
        if loss <= 0.0:
            continue
        scale = RELATION_WEIGHTS[t.relation] / counts[t.relation]
        g_ap = ap / max(d_ap, 1e-12)
        g_an = an / max(d_an, 1e-12)
        grad[t.anchor_idx] += scale * (g_ap - g_an)
        grad[t.positive_idx] += scale * (-g_ap)
        grad[t.negative_idx] += scale * g_an
    return breakdown, grad


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train(catalog, model, config: TrainConfig, chain_config=None,
          log_path=None, sidecar_path=None, progress=None):
    """Run the optimize/validate loop; returns (best model, log records).

    Validation metric is genre mAP over the validation split's pre-sampled
    clips. The learning rate halves after `anneal_patience` non-improving
    validation rounds, and training stops early after
    `early_stop_patience` of them. When sidecar_path is given the final
    Adam state is written there so training can resume.
    """
    from .augment import EffectChainConfig
    from .evaluation import ModelEncoder, evaluate_encoder
    from .nn import save_adam_state
    from .pipeline import build_minibatch, clip_pool

    if chain_config is None:
        chain_config = EffectChainConfig()
    pool = clip_pool(catalog, "train", seed=config.seed)
    if not pool:
        raise EmptySplit("empty training split")
    if not catalog.split_tracks("validation"):
        raise EmptySplit("empty validation split")

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7E41]))
    state = AdamState(lr=config.learning_rate)
    log = []
    best_map = -1.0
    best_model = model.copy()
    rounds_since_best = 0
    anneal_wait = 0
    window_losses = []

    def run_validation(step):
        nonlocal best_map, best_model, rounds_since_best, anneal_wait
        report = evaluate_encoder(
            ModelEncoder(model), catalog, "validation",
            clips_per_track=config.val_clips_per_track, seed=config.seed)
        val_map = report.annotations["genre"]["map"]
        improved = val_map > best_map
        if improved:
            best_map = val_map
            best_model = model.copy()
            rounds_since_best = 0
            anneal_wait = 0
        else:
            rounds_since_best += 1
            anneal_wait += 1
            if anneal_wait >= config.anneal_patience:
                state.lr *= config.anneal_factor
                anneal_wait = 0
        mean_loss = {}
        if window_losses:
            keys = set().union(*[b.per_relation.keys() for b in window_losses])
            mean_loss = {k: float(np.mean([b.per_relation.get(k, 0.0)
                                           for b in window_losses])) for k in sorted(keys)}
            mean_loss["total"] = float(np.mean([b.total for b in window_losses]))
        record = {"step": step, "train_loss": mean_loss, "val_genre_map": val_map,
                  "lr": state.lr, "best": improved}
        log.append(record)
        window_losses.clear()
        if progress:
            progress(record)
        return rounds_since_best >= config.early_stop_patience

    step = 0
    while step < config.max_steps:
        batch = build_minibatch(catalog, "train", config.batch_size, rng,
                                chain_config, pool=pool)
        waves = np.concatenate([batch.originals, batch.transformed], axis=0)
        emb, cache = encode_forward(model, waves, "train")
        meta = BatchMeta(track_ids=batch.track_ids, genres=batch.genres,
                         moods=batch.moods)
        distances = pairwise_distances(emb)
        terms = mine_triplets(meta, distances, config.margin)
        breakdown, grad = total_loss(terms, emb, config.margin)
        if not np.isfinite(breakdown.total):
            raise DivergenceError("loss became non-finite at step %d" % step)
        window_losses.append(breakdown)

        grads = encode_backward(model, cache, grad)
        adam_step(model.params, grads, state)
        model.version += 1
        step += 1

        if step % config.val_interval == 0 or step == config.max_steps:
            if run_validation(step):
                break

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            for record in log:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    if sidecar_path is not None and state.t > 0:
        save_adam_state(state, sidecar_path)
    return best_model if best_map >= 0 else model, log
