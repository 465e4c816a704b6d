"""Model checkpoints: one ``.npz`` holding named parameter arrays plus a JSON header."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .graphspace import SearchSpace
from .gvae import ModelBundle, ScoreNormalizer
from .predictor import GnnPredictor
from .search import TrainConfig, build_models

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_bundle(path: str | Path, models: ModelBundle, cfg: TrainConfig) -> None:
    arrays = {}
    for part in ("encoder", "decoder", "head"):
        for name, arr in getattr(models, part).state_dict().items():
            arrays[f"{part}/{name}"] = arr
    if models.predictor is not None:
        for name, arr in models.predictor.state_dict().items():
            arrays[f"predictor/{name}"] = arr
    meta = {
        "format_version": FORMAT_VERSION,
        "space": models.space.to_dict(),
        "mode": models.mode,
        "train_config": asdict(cfg),
        "normalizer": asdict(models.normalizer),
        "predictor_normalizer": asdict(models.predictor.normalizer) if models.predictor is not None else None,
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def read_meta(path: str | Path) -> dict:
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path} is not a model checkpoint")
            return json.loads(data["__meta__"].tobytes().decode())
    except (ValueError, OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path} is not a readable checkpoint: {exc}") from None


def load_bundle(path: str | Path, space: SearchSpace | None = None) -> tuple[ModelBundle, TrainConfig]:
    """Rebuild a bundle; fails loudly if ``space`` disagrees with the stored one."""
    meta = read_meta(path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format_version')}")
    stored = SearchSpace.from_dict(meta["space"])
    if space is not None and stored != space:
        raise CheckpointError(f"checkpoint space {stored.to_dict()} does not match {space.to_dict()}")
    known = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in meta["train_config"].items() if k in known})
    rng = np.random.Generator(np.random.Philox(0))
    models = build_models(stored, cfg, meta["mode"], rng)
    models.normalizer = ScoreNormalizer(**meta["normalizer"])
    with np.load(path) as data:
        parts = {}
        for key in data.files:
            if key == "__meta__":
                continue
            part, name = key.split("/", 1)
            parts.setdefault(part, {})[name] = data[key]
    try:
        for part in ("encoder", "decoder", "head"):
            getattr(models, part).load_state_dict(parts.get(part, {}))
        if "predictor" in parts:
            pred = GnnPredictor(stored, cfg.gnn_channels, cfg.gnn_layers, rng, cfg.direction)
            pred.load_state_dict(parts["predictor"])
            pred.normalizer = ScoreNormalizer(**meta["predictor_normalizer"])
            models.predictor = pred
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the stored configuration: {exc}") from None
    return models, cfg
