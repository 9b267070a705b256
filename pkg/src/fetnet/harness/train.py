"""Alternating generator/discriminator training."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..adversary import Discriminator
from ..datagen import ImageTriplet, augment, corpus_specs, generate_triplet, load_dataset
from ..fet import resize_confidence
from ..losses import (
    LOSS_COLUMNS,
    RandomConvExtractor,
    TrainingError,
    VGG16Extractor,
    adversarial_d_loss,
    adversarial_g_loss,
    compose,
    dice_loss,
    perceptual_loss,
    reconstruction_loss,
    style_loss,
    total_loss,
)
from ..model import FETGenerator
from .checkpoint import save_checkpoint
from .config import TrainConfig, save_config

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", *LOSS_COLUMNS, "total", "d_loss")


@dataclass
class TrainResult:
    generator: FETGenerator
    discriminator: Discriminator
    log_path: Path
    checkpoint_path: Path
    history: list[dict]


def seed_everything(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    """Stack H x W x C arrays into a float32 (N, C, H, W) tensor."""
    return torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).contiguous().float()


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().permute(0, 2, 3, 1).numpy()


def training_corpus(cfg: TrainConfig) -> list[ImageTriplet]:
    if cfg.data_dir:
        return list(load_dataset(cfg.data_dir))
    size = (cfg.image_size, cfg.image_size)
    return [generate_triplet(s) for s in corpus_specs(cfg.n_train, cfg.data_seed, size)]


def build_extractor(cfg: TrainConfig):
    if cfg.extractor == "vgg16":
        return VGG16Extractor(cfg.vgg_weights)
    if cfg.extractor == "random":
        return RandomConvExtractor(seed=cfg.seed)
    raise ValueError(f"unknown feature extractor {cfg.extractor!r}")


class Trainer:
    def __init__(self, cfg: TrainConfig, triplets: Sequence[ImageTriplet]):
        self.cfg = cfg
        seed_everything(cfg.seed, cfg.deterministic)
        self.generator = FETGenerator(cfg.generator_config())
        self.discriminator = Discriminator(cfg.disc_width, cfg.disc_kernel)
        self.extractor = build_extractor(cfg)
        self.g_opt = torch.optim.Adam(self.generator.parameters(), lr=cfg.g_lr, betas=cfg.betas)
        self.d_opt = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.d_lr, betas=cfg.betas)
        self.triplets = list(triplets)
        if not self.triplets:
            raise TrainingError("training corpus is empty")
        self.inputs = to_tensor([t.input for t in self.triplets])
        self.gts = to_tensor([t.gt for t in self.triplets])
        self.masks = to_tensor([t.mask for t in self.triplets])
        self.rng = torch.Generator().manual_seed(cfg.seed)
        self._order: list[int] = []

    def next_batch(self, step: int):
        n = len(self.triplets)
        idx = []
        while len(idx) < min(self.cfg.batch_size, n):
            if not self._order:
                self._order = torch.randperm(n, generator=self.rng).tolist()
            idx.append(self._order.pop())
        if not self.cfg.augment:
            return self.inputs[idx], self.gts[idx], self.masks[idx]
        aug = [augment(self.triplets[i], seed=self.cfg.seed * 1_000_003 + step * 131 + i) for i in idx]
        return (
            to_tensor([t.input for t in aug]),
            to_tensor([t.gt for t in aug]),
            to_tensor([t.mask for t in aug]),
        )

    def step(self, step: int) -> dict:
        w = self.cfg.weights
        x, gt, mask = self.next_batch(step)
        out, c_t = self.generator(x)

        self.d_opt.zero_grad(set_to_none=True)
        d_loss = adversarial_d_loss(self.discriminator(gt, mask), self.discriminator(out.detach(), mask))
        if not torch.isfinite(d_loss):
            raise TrainingError(f"discriminator loss is not finite ({d_loss.item()})", component="d_loss")
        d_loss.backward()
        self.d_opt.step()

        comp = compose(x, out, mask)
        c_full = resize_confidence(c_t, mask.shape[-2:])
        parts = {
            "rec": reconstruction_loss(out, gt, mask, w.lambda_t),
            "style": style_loss(out, comp, gt, self.extractor),
            "perc": perceptual_loss(out, comp, gt, self.extractor),
            "seg": dice_loss(c_full, mask),
            "adv": adversarial_g_loss(self.discriminator(out, mask)),
        }
        total = total_loss(parts, w)
        self.g_opt.zero_grad(set_to_none=True)
        total.backward()
        self.g_opt.step()
        row = {"step": step, **{k: float(v.detach()) for k, v in parts.items()}}
        row["total"] = float(total.detach())
        row["d_loss"] = float(d_loss.detach())
        return row

    def snapshot(self) -> tuple[dict, dict]:
        return (
            {k: v.detach().clone() for k, v in self.generator.state_dict().items()},
            {k: v.detach().clone() for k, v in self.discriminator.state_dict().items()},
        )


def train(cfg: TrainConfig, run_dir: str | Path, triplets: Sequence[ImageTriplet] | None = None) -> TrainResult:
    """Train for ``cfg.steps`` steps, logging every step to ``run_dir/train_log.csv``.

    On a non-finite loss the last good weights are written to
    ``run_dir/last_good.pt`` and a :class:`TrainingError` naming the offending
    component is raised.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")
    trainer = Trainer(cfg, triplets if triplets is not None else training_corpus(cfg))
    log_path = run_dir / "train_log.csv"
    ckpt_path = run_dir / "checkpoint.pt"
    history = []
    good = trainer.snapshot()
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for step in range(1, cfg.steps + 1):
            try:
                row = trainer.step(step)
            except TrainingError as e:
                trainer.generator.load_state_dict(good[0])
                trainer.discriminator.load_state_dict(good[1])
                save_checkpoint(
                    run_dir / "last_good.pt", trainer.generator, trainer.discriminator,
                    cfg.to_dict(), cfg.seed, step - 1,
                )
                raise TrainingError(f"step {step}: {e}", component=e.component) from e
            writer.writerow(row)
            history.append(row)
            good = trainer.snapshot()
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, trainer.generator, trainer.discriminator, cfg.to_dict(), cfg.seed, step)
            if step % 100 == 0:
                log.info("step %d total %.4f rec %.4f seg %.4f", step, row["total"], row["rec"], row["seg"])
    save_checkpoint(ckpt_path, trainer.generator, trainer.discriminator, cfg.to_dict(), cfg.seed, cfg.steps)
    trainer.generator.eval()
    return TrainResult(trainer.generator, trainer.discriminator, log_path, ckpt_path, history)
