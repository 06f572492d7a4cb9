"""Checkpoint directory format.

A checkpoint is a directory holding `manifest.json` (format version, model
config echo, parameter shapes), `vocab.json`, and one raw little-endian
float32 binary per named parameter tensor (state_dict names, e.g.
`encoder.net.0.weight.bin`).
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .editor import ModelConfig, TimGanModel
from .text import Vocabulary

FORMAT_VERSION = 1


def save_checkpoint(model: TimGanModel, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    params = {}
    for name, tensor in state.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        (path / f"{name}.bin").write_bytes(arr.tobytes())
        params[name] = list(tensor.shape)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "params": params,
    }
    if extra:
        manifest["extra"] = extra
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    model.vocab.to_json(path / "vocab.json")


def load_checkpoint(path: str | Path) -> TimGanModel:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest['format_version']}")
    config = ModelConfig(**manifest["model_config"])
    vocab = Vocabulary.from_json(path / "vocab.json")
    model = TimGanModel(vocab, config)
    state = {}
    for name, shape in manifest["params"].items():
        raw = (path / f"{name}.bin").read_bytes()
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model


def load_manifest(path: str | Path) -> dict:
    return json.loads((Path(path) / "manifest.json").read_text())
