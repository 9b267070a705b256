"""Versioned checkpoint container with an integrity digest.

Layout (a ``torch.save`` zip readable with ``weights_only=True``)::

    format            "fetnet-checkpoint"
    version           1
    generator_config  dict (GeneratorConfig fields)
    train_config      dict (TrainConfig fields) or None
    seed, step        int
    generator         state dict
    discriminator     state dict or None
    digest            sha256 hex over configs and every named array
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from ..adversary import Discriminator
from ..model import FETGenerator, GeneratorConfig

FORMAT = "fetnet-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _digest(payload: dict) -> str:
    h = hashlib.sha256()
    meta = {k: payload[k] for k in ("format", "version", "generator_config", "train_config", "seed", "step")}
    h.update(json.dumps(meta, sort_keys=True, default=list).encode())
    for part in ("generator", "discriminator"):
        state = payload.get(part) or {}
        for name in sorted(state):
            t = state[name].detach().cpu().contiguous()
            h.update(f"{part}/{name}/{t.dtype}/{tuple(t.shape)}".encode())
            h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    generator: FETGenerator,
    discriminator: Discriminator | None = None,
    train_config: dict | None = None,
    seed: int = 0,
    step: int = 0,
) -> Path:
    gcfg = generator.config.to_dict()
    gcfg["widths"] = list(gcfg["widths"])
    gcfg["placement"] = list(gcfg["placement"])
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "generator_config": gcfg,
        "train_config": train_config,
        "seed": int(seed),
        "step": int(step),
        "generator": {k: v.detach().cpu().clone() for k, v in generator.state_dict().items()},
        "discriminator": (
            {k: v.detach().cpu().clone() for k, v in discriminator.state_dict().items()}
            if discriminator is not None
            else None
        ),
    }
    payload["digest"] = _digest(payload)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:  # torch raises a variety of types for corrupt files
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    if payload.get("digest") != _digest(payload):
        raise CheckpointError(f"{path}: integrity digest mismatch")
    return payload


def load_generator(path: str | Path) -> tuple[FETGenerator, dict]:
    payload = read_checkpoint(path)
    gen = FETGenerator(GeneratorConfig.from_dict(payload["generator_config"]))
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen, payload


def load_discriminator(payload: dict, width: int = 16, kernel_size: int = 4) -> Discriminator | None:
    state = payload.get("discriminator")
    if state is None:
        return None
    disc = Discriminator(width, kernel_size)
    disc.load_state_dict(state)
    return disc
