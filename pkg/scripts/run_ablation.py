"""Component or structure ablation on the synthetic overfit corpus.

    python scripts/run_ablation.py --set components --steps 400 --seeds 0,1,2
"""
import argparse
import logging
from collections import defaultdict

from fetnet.harness.ablate import ablate
from fetnet.harness.config import COMPONENT_VARIANTS, STRUCTURE_VARIANTS, TrainConfig, make_run_dir

SETS = {"components": COMPONENT_VARIANTS, "structure": STRUCTURE_VARIANTS}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--set", choices=sorted(SETS), default="components")
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    seeds = [int(s) for s in args.seeds.split(",")]
    run = make_run_dir(f"ablate-{args.set}")
    rows = ablate(TrainConfig(steps=args.steps, checkpoint_every=0), SETS[args.set], run, seeds=seeds)

    by_seed = defaultdict(dict)
    for r in rows:
        by_seed[r["seed"]][r["variant"]] = r["masked_psnr"]
    print(f"{'variant':>14} " + " ".join(f"seed{s:>3}" for s in seeds))
    for v in SETS[args.set]:
        print(f"{v:>14} " + " ".join(f"{by_seed[s][v]:7.2f}" for s in seeds))
    leads = sum(all(by_seed[s]["full"] >= x for x in by_seed[s].values()) for s in seeds)
    print(f"full leads in {leads}/{len(seeds)} seeds; table at {run / 'ablation.csv'}")


if __name__ == "__main__":
    main()
