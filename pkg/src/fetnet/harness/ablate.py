"""Train-and-evaluate comparison across generator variants."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

from ..datagen import ImageTriplet
from ..losses import TrainingError
from ..metrics import METRIC_COLUMNS
from .config import VARIANTS, TrainConfig
from .evaluate import evaluate, generator_predictor, masked_region_psnr
from .train import train, training_corpus

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("variant", "seed", *METRIC_COLUMNS, "masked_psnr", "status")


def ablate(
    cfg: TrainConfig,
    variants: Sequence[str],
    run_dir: str | Path,
    seeds: Sequence[int] | None = None,
    triplets: Sequence[ImageTriplet] | None = None,
) -> list[dict]:
    """Train every variant under identical data and seeds, evaluate on the
    training corpus, and write ``run_dir/ablation.csv`` (one row per variant
    and seed). A variant whose training aborts gets a ``failed`` row."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    triplets = list(triplets) if triplets is not None else training_corpus(cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    rows = []
    with open(run_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        for seed in seeds:
            for variant in variants:
                vcfg = cfg.replace(variant=variant, seed=seed)
                row = {"variant": variant, "seed": seed}
                try:
                    result = train(vcfg, run_dir / f"{variant}_seed{seed}", triplets)
                except TrainingError as e:
                    log.warning("variant %s seed %d aborted: %s", variant, seed, e)
                    row.update({k: "" for k in (*METRIC_COLUMNS, "masked_psnr")})
                    row["status"] = f"failed: {e}"
                else:
                    summary, _ = evaluate(result.generator, triplets)
                    row.update(summary.row())
                    row["masked_psnr"] = masked_region_psnr(generator_predictor(result.generator), triplets)
                    row["status"] = "ok"
                writer.writerow(row)
                fh.flush()
                rows.append(row)
    return rows
