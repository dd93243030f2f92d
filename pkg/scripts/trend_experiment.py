"""Active vs passive vs no-log-polar grasp training in targeted mode.

Full scale is 10k grasp attempts per run over 3 seeds. Smaller budgets give a
pilot; the output records the budget so the two are never confused.

    python scripts/trend_experiment.py --budget 10000 --seeds 0 1 2
"""
import argparse
import json
from pathlib import Path

import numpy as np

from apr import config as C
from apr.harness import read_metrics, train

ROOT = Path(__file__).resolve().parents[1]
VARIANTS = ("active-target", "passive-target", "no-logpolar")


def final_eval(run_dir: Path) -> float:
    rows = [r for r in read_metrics(run_dir) if r.get("eval_success") not in (None, "")]
    return float(rows[-1]["eval_success"])


def run(budget, seeds, eval_episodes, runs_dir: Path, variants=VARIANTS) -> dict:
    out = {"budget": budget, "seeds": list(seeds), "eval_episodes": eval_episodes, "runs": {}}
    for variant in variants:
        for seed in seeds:
            cfg = C.validate(C.desk_scale(variant=variant, seed=seed, budget=budget, train_objects=[1, 3],
                                          eval_objects=3, eval_every=max(budget // 10, 1),
                                          eval_episodes=eval_episodes, checkpoint_every=budget))
            d = train(cfg, runs_dir / f"{variant}-s{seed}")
            out["runs"][f"{variant}/{seed}"] = final_eval(d)
            print(f"{variant:15s} seed {seed}: eval success {out['runs'][f'{variant}/{seed}']:.3f}", flush=True)
    out["mean"] = {v: float(np.mean([out["runs"][f"{v}/{s}"] for s in seeds])) for v in variants}
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--budget", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--eval-episodes", type=int, default=100)
    ap.add_argument("--runs", type=Path, default=ROOT / "runs" / "trend")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args(argv)
    res = run(args.budget, args.seeds, args.eval_episodes, args.runs)
    name = "trend.json" if args.budget >= 10_000 else f"trend_pilot_{args.budget}.json"
    out = args.out or ROOT / "results" / name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(res, indent=2) + "\n")
    print(json.dumps(res["mean"], indent=2))


if __name__ == "__main__":
    main()
