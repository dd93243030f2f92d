"""Scripted oracle and uniform random policy on the grasping task, bounding the learnable range."""
import argparse
import json
from pathlib import Path

import numpy as np

from apr import config as C
from apr.episode import OraclePolicy, RandomPolicy
from apr.harness import evaluate_policy

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--objects", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "solvability.json")
    args = ap.parse_args(argv)
    out = {}
    for variant in ("active-target", "active-learned"):
        cfg = C.validate(C.desk_scale(variant=variant, seed=args.seed))
        for name, policy in (("oracle", OraclePolicy()), ("random", RandomPolicy(np.random.default_rng(args.seed)))):
            ev = evaluate_policy(policy, cfg, args.episodes, n_objects=args.objects)
            out[f"{variant}/{name}"] = {"success": ev.rate, "ci": [ev.ci_low, ev.ci_high], "failed": ev.failed}
            print(f"{variant:15s} {name:7s} {ev.rate:.3f}  [{ev.ci_low:.3f}, {ev.ci_high:.3f}]", flush=True)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
