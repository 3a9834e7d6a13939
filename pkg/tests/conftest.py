import json

import pytest

# tiny encoder used by CLI/service tests so the fixtures build in seconds
TINY_MODEL_ARCH = {
    "n_mels": 32,
    "rgb_channels": 2,
    "body_channels": [4, 8],
    "embed_dim": 16,
}


@pytest.fixture(scope="session")
def engine_workspace(tmp_path_factory):
    """Corpus + config + model + embeddings + index, built once via the CLI."""
    from soundalike.cli import main

    root = tmp_path_factory.mktemp("engine")
    corpus_dir = root / "corpus"
    config = {
        "paths": {
            "corpus_dir": str(corpus_dir),
            "manifest": str(corpus_dir / "manifest.jsonl"),
            "model": str(root / "model.sse"),
            "adam_sidecar": str(root / "model.sse.adam"),
            "train_log": str(root / "train_log.jsonl"),
            "records": str(root / "embeddings.jsonl"),
            "index": str(root / "catalog.ssix"),
            "report": str(root / "report.json"),
        },
        "train": {"max_steps": 4, "batch_size": 3, "val_interval": 2,
                  "val_clips_per_track": 2},
        "chain": {"p_time_stretch": 0.0, "p_pitch_shift": 0.0},
        "model_arch": TINY_MODEL_ARCH,
        "seed": 5,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))

    base = ["--config", str(config_path), "--seed", "5"]
    assert main(base + ["gen-corpus", "--tracks", "12", "--genres", "3",
                        "--moods", "2"]) == 0
    assert main(base + ["train"]) == 0
    assert main(base + ["embed"]) == 0
    assert main(base + ["build-index"]) == 0
    return {"root": root, "config_path": config_path, "config": config}
