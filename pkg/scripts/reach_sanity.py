"""Seeded oracle and SAC runs on the reach-only task.

    python scripts/reach_sanity.py --oracle-only   # refresh results/reach_oracle.json
    python scripts/reach_sanity.py                 # oracle plus a SAC training run
"""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import torch

from apr import reach

ROOT = Path(__file__).resolve().parents[1]


def oracle_record(cfg: reach.ReachConfig) -> dict:
    return {"seed": 10_000, "episodes": cfg.eval_episodes, "success_radius": cfg.success_radius,
            "max_steps": cfg.max_steps, "oracle_success": reach.evaluate(reach.OracleReach(), cfg)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--oracle-only", action="store_true")
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    args = ap.parse_args(argv)
    torch.set_num_threads(1)
    cfg = replace(reach.ReachConfig(), seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    rec = oracle_record(cfg)
    (args.out / "reach_oracle.json").write_text(json.dumps(rec, indent=2) + "\n")
    print(f"oracle success {rec['oracle_success']:.3f} within {cfg.success_radius} m")
    if args.oracle_only:
        return
    t0 = time.perf_counter()
    res = reach.train(cfg, log=lambda s, r: print(f"env step {s:6d}  eval success {r:.3f}", flush=True))
    out = {"seed": args.seed, "curve": res["curve"], "env_steps": res["env_steps"], "final": res["final"],
           "seconds": round(time.perf_counter() - t0, 1)}
    (args.out / "reach_sac.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
