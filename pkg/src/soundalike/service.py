"""Read-only HTTP search service for the browser UI.

Endpoints:
  GET  /api/health                      -> {status, model_fingerprint, index_size}
  GET  /api/tracks?split=...            -> catalog listing with labels
  POST /api/search                      -> JSON catalog-clip form or multipart WAV
  GET  /api/audio/{track_id}?offset=&dur= -> WAV bytes of the requested segment

All error responses are JSON {error, code}. The service holds only the
immutable model/index/catalog loaded at startup; identical requests yield
identical responses.
"""

from __future__ import annotations

import io
import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .audio import ENGINE_RATE, Waveform, read_wav, resample_to_mono, write_wav
from .config import EngineConfig
from .errors import QueryTooShort, SoundalikeError, WavFormatError
from .index import fingerprint_file, knn, load_index, search_by_track
from .nn import encode_forward, load_model
from .pipeline import SPLITS, ClipRef, assign_split, load_clip, read_manifest

MAX_K = 100


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _result_payload(results):
    return [{"rank": r.rank, "track_id": r.clip.track_id,
             "offset_s": round(r.clip.offset, 3), "distance": float(r.distance),
             "genre": r.genre, "mood": r.mood} for r in results]


def create_app(cfg: EngineConfig, static_dir: str | None = None) -> FastAPI:
    catalog = read_manifest(cfg.paths.manifest)
    model = load_model(cfg.paths.model)
    fingerprint = fingerprint_file(cfg.paths.model)
    index = load_index(cfg.paths.index, expected_fingerprint=fingerprint)
    max_upload = cfg.service.max_upload_bytes

    app = FastAPI(title="soundalike", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def handle_api_error(_req, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.message, "code": exc.code})

    @app.exception_handler(SoundalikeError)
    async def handle_engine_error(_req, exc: SoundalikeError):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "code": "engine_error"})

    @app.get("/api/health")
    async def health():
        return {"status": "ok", "model_fingerprint": fingerprint.hex(),
                "index_size": len(index)}

    @app.get("/api/tracks")
    async def tracks(split: str | None = None):
        if split is not None and split not in SPLITS:
            raise ApiError(400, "bad_split", "split must be one of %s" % (SPLITS,))
        out = []
        for t in catalog.tracks:
            s = assign_split(t.track_id)
            if split is None or s == split:
                out.append({"track_id": t.track_id, "genre": t.genre,
                            "mood": t.mood, "duration_s": t.duration, "split": s})
        return out

    def _clamp_k(k) -> int:
        try:
            k = int(k)
        except (TypeError, ValueError):
            raise ApiError(400, "bad_k", "k must be an integer")
        if k < 1:
            raise ApiError(400, "bad_k", "k must be >= 1")
        return min(k, MAX_K)

    def _search_catalog_clip(body: dict):
        clip_spec = body.get("catalog_clip")
        if not isinstance(clip_spec, dict) or "track_id" not in clip_spec:
            raise ApiError(400, "bad_request",
                           "catalog_clip must carry track_id and offset_s")
        track_id = clip_spec["track_id"]
        try:
            catalog.by_id(track_id)
        except SoundalikeError:
            raise ApiError(404, "unknown_track", "no track %r in catalog" % track_id)
        offset = float(clip_spec.get("offset_s", 0.0))
        k = _clamp_k(body.get("k", 10))
        exclude = track_id if body.get("exclude_self", True) else None
        wave = load_clip(catalog, ClipRef(track_id=track_id, offset=offset))
        emb, _ = encode_forward(model, wave.samples[None, :], "inference")
        return _result_payload(knn(index, emb[0], k, exclude_track=exclude))

    def _search_upload(data: bytes, k) -> list:
        if len(data) > max_upload:
            raise ApiError(413, "upload_too_large",
                           "upload exceeds %d bytes" % max_upload)
        try:
            wave = read_wav(io.BytesIO(data))
        except WavFormatError as exc:
            raise ApiError(400, "bad_wav", str(exc))
        wave = resample_to_mono(wave, ENGINE_RATE)
        try:
            results = search_by_track(index, model, wave, _clamp_k(k))
        except QueryTooShort as exc:
            raise ApiError(422, "query_too_short", str(exc))
        return _result_payload(results)

    @app.post("/api/search")
    async def search(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("file")
            if upload is None:
                raise ApiError(400, "bad_request", "multipart search needs a 'file' field")
            data = await upload.read()
            k = form.get("k", 10)
            return {"results": _search_upload(data, k)}
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "bad_request", "expected JSON body or multipart form")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_request", "expected a JSON object")
        return {"results": _search_catalog_clip(body)}

    @app.get("/api/audio/{track_id}")
    async def audio(track_id: str, offset: float = 0.0, dur: float = 10.0):
        try:
            meta = catalog.by_id(track_id)
        except SoundalikeError:
            raise ApiError(404, "unknown_track", "no track %r in catalog" % track_id)
        if offset < 0 or dur <= 0:
            raise ApiError(400, "bad_range", "offset must be >= 0 and dur > 0")
        wave = read_wav(meta.audio_path)
        start = int(round(offset * wave.sample_rate))
        stop = min(int(round((offset + dur) * wave.sample_rate)), wave.n_samples)
        if start >= wave.n_samples:
            raise ApiError(400, "bad_range", "offset beyond end of track")
        segment = Waveform(samples=wave.samples[start:stop], sample_rate=wave.sample_rate)
        buf = io.BytesIO()
        write_wav(buf, segment, encoding="int16")
        return Response(content=buf.getvalue(), media_type="audio/wav")

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
