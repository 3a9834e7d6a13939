"""Command-line entry points for the full workflow.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .audio import ENGINE_RATE, read_wav, resample_to_mono, to_mono
from .config import load_config
from .errors import SoundalikeError
from .evaluation import BaselineEncoder, ModelEncoder, RandomEncoder, evaluate_encoder
from .index import (EmbeddingRecord, build_index, fingerprint_file, knn,
                    load_index, save_index, search_by_track)
from .nn import EncoderModel, DEFAULT_ARCH, encode_forward, load_model, save_model
from .objective import train as train_loop
from .pipeline import (ClipRef, clip_pool, generate_synthetic_corpus, load_clip,
                       read_manifest, validate_manifest_audio, SPLITS)


def _require(parser: argparse.ArgumentParser, value, flag: str):
    if value is None:
        parser.error("missing required path: %s" % flag)
    return value


def _load_catalog(parser, args, cfg):
    manifest = args.manifest or cfg.paths.manifest
    _require(parser, manifest, "--manifest")
    if not os.path.exists(manifest):
        parser.error("manifest not found at --manifest %s" % manifest)
    return read_manifest(manifest)


def _result_rows(results):
    return [{"rank": r.rank, "track_id": r.clip.track_id,
             "offset_s": round(r.clip.offset, 3), "distance": r.distance,
             "genre": r.genre, "mood": r.mood} for r in results]


def cmd_gen_corpus(parser, args, cfg):
    catalog = generate_synthetic_corpus(
        args.out or cfg.paths.corpus_dir, n_tracks=args.tracks,
        genres=args.genres, moods=args.moods, seed=cfg.seed)
    counts = {s: len(catalog.split_tracks(s)) for s in SPLITS}
    print("wrote %d tracks to %s (splits: %s)"
          % (len(catalog.tracks), args.out or cfg.paths.corpus_dir, counts))
    return 0


def cmd_ingest(parser, args, cfg):
    catalog = _load_catalog(parser, args, cfg)
    problems = validate_manifest_audio(catalog)
    for p in problems:
        print("problem: %s" % p, file=sys.stderr)
    counts = {s: len(catalog.split_tracks(s)) for s in SPLITS}
    print("catalog: %d tracks, %d genres, %d moods, splits %s"
          % (len(catalog.tracks), len(catalog.genres), len(catalog.moods), counts))
    return 1 if problems else 0


def cmd_train(parser, args, cfg):
    catalog = _load_catalog(parser, args, cfg)
    arch = dict(DEFAULT_ARCH)
    arch.update(cfg.model_arch)
    model = EncoderModel(arch=arch, seed=cfg.seed)
    cfg.train.seed = cfg.seed

    def progress(record):
        print("step %5d  loss %.4f  val genre mAP %.4f  lr %.2e%s"
              % (record["step"], record["train_loss"].get("total", float("nan")),
                 record["val_genre_map"], record["lr"],
                 "  *" if record["best"] else ""))

    best, _log = train_loop(catalog, model, cfg.train, chain_config=cfg.chain,
                            log_path=cfg.paths.train_log,
                            sidecar_path=cfg.paths.adam_sidecar, progress=progress)
    save_model(best, cfg.paths.model)
    print("saved model to %s (train log: %s)" % (cfg.paths.model, cfg.paths.train_log))
    return 0


def cmd_embed(parser, args, cfg):
    catalog = _load_catalog(parser, args, cfg)
    if not os.path.exists(cfg.paths.model):
        parser.error("model not found at %s (config key paths.model)" % cfg.paths.model)
    model = load_model(cfg.paths.model)
    encoder = ModelEncoder(model)
    with open(cfg.paths.records, "w", encoding="utf-8") as f:
        n = 0
        for split in SPLITS:
            tracks = catalog.split_tracks(split)
            metas = {t.track_id: t for t in tracks}
            clips = clip_pool(catalog, split, seed=cfg.seed)
            for start in range(0, len(clips), 32):
                chunk = clips[start:start + 32]
                waves = np.stack([load_clip(catalog, c).samples for c in chunk])
                emb = encoder.embed_batch(waves)
                for clip, e in zip(chunk, emb):
                    meta = metas[clip.track_id]
                    f.write(json.dumps({
                        "track_id": clip.track_id,
                        "offset_s": float(np.float32(clip.offset)),
                        "split": split, "genre": meta.genre, "mood": meta.mood,
                        "embedding": [float(v) for v in e],
                    }, sort_keys=True) + "\n")
                    n += 1
    print("wrote %d embedding records to %s" % (n, cfg.paths.records))
    return 0


def cmd_build_index(parser, args, cfg):
    if not os.path.exists(cfg.paths.records):
        parser.error("records not found at %s; run `embed` first" % cfg.paths.records)
    records = []
    with open(cfg.paths.records, "r", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            records.append(EmbeddingRecord(
                clip=ClipRef(track_id=rec["track_id"], offset=rec["offset_s"]),
                embedding=np.asarray(rec["embedding"]),
                genre=rec["genre"], mood=rec["mood"]))
    fp = fingerprint_file(cfg.paths.model) if os.path.exists(cfg.paths.model) else b"\x00" * 32
    idx = build_index(records, fingerprint=fp)
    save_index(idx, cfg.paths.index)
    print("indexed %d clips (dim %d) -> %s" % (len(idx), idx.dimension, cfg.paths.index))
    return 0


def cmd_eval(parser, args, cfg):
    catalog = _load_catalog(parser, args, cfg)
    if args.encoder == "random":
        encoder = RandomEncoder(seed=cfg.seed)
    elif args.encoder == "baseline":
        encoder = BaselineEncoder().fit(catalog, seed=cfg.seed)
    else:
        if not os.path.exists(cfg.paths.model):
            parser.error("model not found at %s (config key paths.model)" % cfg.paths.model)
        encoder = ModelEncoder(load_model(cfg.paths.model))
    report = evaluate_encoder(encoder, catalog, args.split, seed=cfg.seed)
    report.save(cfg.paths.report)
    for ann, entry in report.annotations.items():
        print("%s %s mAP: %.4f" % (encoder.name, ann, entry["map"]))
    print("report written to %s" % cfg.paths.report)
    return 0


def cmd_search(parser, args, cfg):
    if not os.path.exists(cfg.paths.model):
        parser.error("model not found at %s (config key paths.model)" % cfg.paths.model)
    if not os.path.exists(cfg.paths.index):
        parser.error("index not found at %s; run `build-index` first" % cfg.paths.index)
    model = load_model(cfg.paths.model)
    idx = load_index(cfg.paths.index, expected_fingerprint=fingerprint_file(cfg.paths.model),
                     allow_fingerprint_mismatch=args.allow_fingerprint_mismatch)

    if args.wav:
        wave = resample_to_mono(read_wav(args.wav), ENGINE_RATE)
        results = search_by_track(idx, model, wave, args.k)
    else:
        if args.track is None:
            parser.error("provide --wav or --track [--offset]")
        catalog = _load_catalog(parser, args, cfg)
        clip = ClipRef(track_id=args.track, offset=args.offset)
        wave = load_clip(catalog, clip)
        emb, _ = encode_forward(model, wave.samples[None, :], "inference")
        results = knn(idx, emb[0], args.k,
                      exclude_track=None if args.include_self else args.track)

    payload = json.dumps(_result_rows(results), sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(payload + "\n")
        print("wrote %d results to %s" % (len(results), args.out))
    else:
        print(payload)
    return 0


def cmd_serve(parser, args, cfg):
    import uvicorn

    from .service import create_app

    app = create_app(cfg)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soundalike",
        description="Query-by-example music similarity engine")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed for all stochastic steps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic labeled corpus")
    p.add_argument("--tracks", type=int, default=60)
    p.add_argument("--genres", type=int, default=4)
    p.add_argument("--moods", type=int, default=2)
    p.add_argument("--out", help="output directory (default: paths.corpus_dir)")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("ingest", help="validate a catalog manifest")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the encoder")
    p.add_argument("--manifest")
    p.add_argument("--steps", type=int, dest="steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every pre-sampled catalog clip")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("build-index", help="build the kNN index from embeddings")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("eval", help="evaluate an encoder with per-category mAP")
    p.add_argument("--manifest")
    p.add_argument("--encoder", choices=["trained", "random", "baseline"],
                   default="trained")
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="query the index by example")
    p.add_argument("--manifest")
    p.add_argument("--wav", help="query audio file (>= 10 s WAV)")
    p.add_argument("--track", help="catalog track id to query from")
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--include-self", action="store_true",
                   help="keep results from the query's own track")
    p.add_argument("--allow-fingerprint-mismatch", action="store_true")
    p.add_argument("--out", help="write results JSON here instead of stdout")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("serve", help="run the HTTP search service")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed})
        if getattr(args, "steps", None) is not None:
            cfg.train.max_steps = args.steps
        if getattr(args, "batch_size", None) is not None:
            cfg.train.batch_size = args.batch_size
        return args.func(parser, args, cfg)
    except SoundalikeError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
