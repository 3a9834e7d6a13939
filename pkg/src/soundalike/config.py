"""Engine-wide configuration: JSON file with flat sections, CLI-overridable."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .augment import EffectChainConfig
from .errors import InvalidConfig
from .objective import TrainConfig


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    max_upload_bytes: int = 32 * 1024 * 1024

    def validate(self):
        if not 1 <= self.port <= 65535:
            raise InvalidConfig("port %d out of range" % self.port)
        return self


@dataclass
class PathsConfig:
    corpus_dir: str = "corpus"
    manifest: str = "corpus/manifest.jsonl"
    model: str = "model.sse"
    adam_sidecar: str = "model.sse.adam"
    train_log: str = "train_log.jsonl"
    records: str = "embeddings.jsonl"
    index: str = "catalog.ssix"
    report: str = "report.json"


@dataclass
class EngineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    chain: EffectChainConfig = field(default_factory=EffectChainConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    model_arch: dict = field(default_factory=dict)  # overrides for nn.DEFAULT_ARCH
    seed: int = 0


def _apply_section(obj, data: dict, section: str):
    """Return a copy of a section dataclass with `data` applied over it."""
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in known:
            raise InvalidConfig("unknown key %r in config section %r" % (key, section))
        current = getattr(obj, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        updates[key] = value
    return replace(obj, **updates)


def load_config(path=None, overrides: dict | None = None) -> EngineConfig:
    """Build an EngineConfig from an optional JSON file plus overrides.

    Overrides use dotted keys ("train.max_steps") and win over the file.
    """
    cfg = EngineConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as exc:
            raise InvalidConfig("cannot read config %s: %s" % (path, exc))
        except json.JSONDecodeError as exc:
            raise InvalidConfig("config %s is not valid JSON: %s" % (path, exc))
        for section, payload in data.items():
            if section == "seed":
                cfg.seed = int(payload)
            elif section == "model_arch":
                if not isinstance(payload, dict):
                    raise InvalidConfig("model_arch must be an object")
                cfg.model_arch = payload
            elif section in ("paths", "train", "chain", "service"):
                if not isinstance(payload, dict):
                    raise InvalidConfig("section %r must be an object" % section)
                setattr(cfg, section, _apply_section(getattr(cfg, section), payload, section))
            else:
                raise InvalidConfig("unknown config section %r" % section)

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            cfg.seed = int(value)
            continue
        section, _, key = dotted.partition(".")
        target = getattr(cfg, section, None)
        if target is None or not key:
            raise InvalidConfig("unknown override %r" % dotted)
        setattr(cfg, section, _apply_section(target, {key: value}, section))

    cfg.service.validate()
    cfg.chain.validate()
    return cfg
