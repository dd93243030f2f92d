"""Train the scene model on a frozen 64-scene dataset and log the ELBO and MSE checkpoints."""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import torch

from apr import elbo_study as E

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "elbo_learning.json")
    args = ap.parse_args(argv)
    torch.set_num_threads(1)
    q = args.steps // 4
    cfg = replace(E.StudyConfig(), seed=args.seed, steps=args.steps, checkpoints=(q, 2 * q, 3 * q, args.steps))
    t0 = time.perf_counter()

    def log(row):
        ev = row["eval"]
        print(f"step {row['step']:5d}  elbo {ev['loss']:9.2f}  kl {ev['kl']:7.2f}  mse {ev['mse']:.5f}  "
              f"loss@train-sigma {row['train_sigma']['loss']:9.2f}", flush=True)

    res = E.run(cfg, log=log)
    res["seconds"] = round(time.perf_counter() - t0, 1)
    res["sigma_eval"] = E.SIGMA_EVAL
    print(f"elbo drop {res['elbo_drop']:.3f}, mse decreasing: {res['mse_decreasing']}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(res, indent=2) + "\n")


if __name__ == "__main__":
    main()
