"""Run configuration, ablation variants and run directories."""
from __future__ import annotations

import datetime as _dt
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from ..losses import LossWeights
from ..model import GeneratorConfig

OUTPUT_ROOT_ENV = "FETNET_OUTPUT_ROOT"

# each variant is a set of GeneratorConfig field overrides on top of the preset
VARIANTS: dict[str, dict[str, Any]] = {
    "full": {},
    "no_fem": {"use_fem": False},
    "no_ftm": {"use_ftm": False},
    "no_similarity": {"use_similarity": False},
    "output_mask": {"hard_mask": True},
    "no_fet_t": {"placement": ("plain", "plain", "plain", "structure", "structure"), "aggregate_fet": False},
    "no_fet_s": {"placement": ("texture", "texture", "texture", "plain", "plain")},
    "all_fet_t": {"placement": ("texture",) * 5},
    "all_fet_s": {"placement": ("structure",) * 5, "aggregate_fet": False},
}
COMPONENT_VARIANTS = ("full", "no_fem", "no_ftm", "no_similarity", "output_mask")
STRUCTURE_VARIANTS = ("full", "no_fet_t", "no_fet_s", "all_fet_t", "all_fet_s")


@dataclass
class TrainConfig:
    preset: str = "toy"
    image_size: int = 64
    batch_size: int = 4
    steps: int = 2000
    g_lr: float = 1e-3
    d_lr: float = 2e-3
    betas: tuple[float, float] = (0.5, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    deterministic: bool = True
    variant: str = "full"
    n_train: int = 8
    data_seed: int = 0
    data_dir: str | None = None
    augment: bool = False
    checkpoint_every: int = 500
    disc_width: int = 16
    disc_kernel: int = 4
    extractor: str = "random"
    vgg_weights: str | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.betas = tuple(self.betas)
        if self.g_lr <= 0 or self.d_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.image_size % 16:
            raise ValueError(f"image_size {self.image_size} is not divisible by 16")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.preset not in ("toy", "full"):
            raise ValueError(f"unknown preset {self.preset!r}")

    @classmethod
    def full_preset(cls, **kw) -> "TrainConfig":
        base = dict(preset="full", image_size=256, batch_size=6, disc_width=64)
        base.update(kw)
        return cls(**base)

    def generator_config(self) -> GeneratorConfig:
        base = GeneratorConfig.full() if self.preset == "full" else GeneratorConfig.toy()
        return base.replace(**VARIANTS[self.variant])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _coerce(text: str) -> Any:
    return yaml.safe_load(text)


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` strings (``weights.lambda_s=10`` for nested keys)."""
    d = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        target = d
        *parents, leaf = key.strip().split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = _coerce(value)
    return d


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> TrainConfig:
    d: dict = {}
    if path is not None:
        d = yaml.safe_load(Path(path).read_text()) or {}
    if overrides:
        d = apply_overrides(d, overrides)
    if d.get("preset") == "full":
        base = TrainConfig.full_preset().to_dict()
        base.update(d)
        d = base
    return TrainConfig.from_dict(d)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    out = cfg.to_dict()
    out["generator"] = cfg.generator_config().to_dict()
    out["generator"]["widths"] = list(out["generator"]["widths"])
    out["generator"]["placement"] = list(out["generator"]["placement"])
    Path(path).write_text(yaml.safe_dump(out, sort_keys=True))


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def make_run_dir(command: str, root: str | Path | None = None) -> Path:
    """Fresh ``<root>/<timestamp>-<command>`` directory."""
    root = Path(root) if root is not None else output_root()
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    path = root / f"{stamp}-{command}"
    n = 1
    while path.exists():
        path = root / f"{stamp}-{command}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path
