"""Training loop, evaluation protocol, metrics files and learning-curve plots."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.stats import binomtest

from apr import config as C
from apr import tensor as T
from apr.agent import APRAgent, views_to_tensors
from apr.episode import ViewCollector, run_episode
from apr.sac import ReplayBuffer
from apr.scene import spawn

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "attempt", "variant", "seed", "episode_length", "sparse_reward", "lifted", "train_success",
    "eval_success", "eval_lo", "eval_hi", "elbo", "mse", "critic", "actor", "alpha",
    "fixation_critic", "encoder_grad_norm", "clamp_events", "failed", "wall_clock",
]
CHECKPOINT_NAME = "checkpoint.apr"


@dataclass
class EvalResult:
    successes: int
    episodes: int
    ci_low: float
    ci_high: float
    failed: int = 0

    @property
    def rate(self) -> float:
        return self.successes / self.episodes


def episode_seed(run_seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([run_seed, stream, index]).generate_state(1, np.uint64)[0])


def evaluate_policy(policy, cfg: C.RunConfig, n_episodes: int, object_set: str = "test",
                    n_objects: int | None = None, seed: int | None = None) -> EvalResult:
    """Success rate of ``policy`` on fresh worlds; deterministic actions when the policy supports it."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    n_objects = cfg.eval_objects if n_objects is None else n_objects
    seed = cfg.seed if seed is None else seed
    collector = ViewCollector(cfg.episode)
    prev = getattr(policy, "stochastic", None)
    if prev is not None:
        policy.stochastic = False
    successes = failed = 0
    try:
        for i in range(n_episodes):
            s = episode_seed(seed, i, stream=7)
            world = spawn(s, n_objects, object_set, cfg.world)
            rec = run_episode(world, policy, cfg.episode, T.numpy_rng(s), collector)
            successes += int(rec.sparse_reward > 0)
            failed += int(rec.failed)
    finally:
        if prev is not None:
            policy.stochastic = prev
    ci = binomtest(successes, n_episodes).proportion_ci(0.95, method="wilson")
    return EvalResult(successes, n_episodes, float(ci.low), float(ci.high), failed)


def save_agent(agent: APRAgent, cfg: C.RunConfig, run_dir: Path, attempt: int) -> Path:
    run_dir = Path(run_dir)
    tensors = agent.state_tensors()
    tensors["counters.attempt"] = torch.tensor([attempt], dtype=torch.int64)
    path = run_dir / CHECKPOINT_NAME
    T.save_checkpoint(path, tensors)
    C.save(cfg, run_dir / "config.json")
    return path


def load_agent(checkpoint) -> tuple[APRAgent, C.RunConfig]:
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    cfg = C.read(checkpoint.parent / "config.json")
    agent = APRAgent(cfg.agent_config(), cfg.world)
    agent.load_state_tensors(T.load_checkpoint(checkpoint))
    return agent, cfg


def evaluate(checkpoint, n_episodes: int) -> EvalResult:
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    agent, cfg = load_agent(checkpoint)
    return evaluate_policy(agent, cfg, n_episodes)


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return x


class Trainer:
    """Alternates episode collection and gradient updates for one run."""

    def __init__(self, cfg: C.RunConfig, run_dir, record_episodes: int = 0):
        self.cfg = C.validate(C.apply_variant(cfg))
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        torch.set_num_threads(1)
        self.agent = APRAgent(self.cfg.agent_config(), self.cfg.world)
        self.collector = ViewCollector(self.cfg.episode)
        self.replay = ReplayBuffer(self.cfg.replay_capacity, seed=self.cfg.seed + 11)
        self.fix_replay = ReplayBuffer(self.cfg.replay_capacity, seed=self.cfg.seed + 13)
        self.recent = deque(maxlen=self.cfg.moving_average)
        self.record_episodes = record_episodes
        self.update_credit = 0.0
        self.env_steps = 0
        self.last = {}

    @property
    def learned_fixation(self) -> bool:
        return not self.cfg.episode.targeted

    def _updates(self, n_steps: int):
        cfg = self.cfg
        if len(self.replay) < max(cfg.warmup_transitions, 1):
            return
        self.update_credit += n_steps * cfg.updates_per_step
        while self.update_credit >= 1.0:
            self.update_credit -= 1.0
            batch = self.replay.sample(cfg.grasp.batch_size)
            m = self.agent.grasp_update(batch)
            self.last.update(critic=m["critic"], actor=m["actor"], alpha=m["alpha_value"],
                             encoder_grad_norm=m["extra_grad_norm"])
            if cfg.representation_learning:
                g = self.agent.gqn_update([t[0] for t in self.replay.sample(cfg.gqn_batch)])
                self.last.update(elbo=g["elbo"], mse=g["mse"])

    def _fixation_update(self):
        if self.learned_fixation and len(self.fix_replay) >= self.cfg.fixation_warmup:
            m = self.agent.fixation_update(self.fix_replay.sample(self.cfg.fixation.batch_size))
            self.last["fixation_critic"] = m["critic"]

    def run(self) -> Path:
        cfg = self.cfg
        C.save(cfg, self.run_dir / "config.json")
        metrics_path = self.run_dir / "metrics.csv"
        t0 = time.perf_counter()
        lo, hi = cfg.train_objects
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_HEADER)
            for attempt in range(1, cfg.budget + 1):
                s = episode_seed(cfg.seed, attempt, stream=1)
                rng = T.numpy_rng(s)
                world = spawn(s, int(rng.integers(lo, hi + 1)), "train", cfg.world)
                rec = run_episode(world, self.agent, cfg.episode, rng, self.collector)
                if not rec.failed:
                    self.replay.extend(rec.grasp_transitions())
                    if self.learned_fixation:
                        self.fix_replay.push(rec.fixation_transition())
                    self.recent.append(rec.sparse_reward)
                    self.env_steps += rec.length
                    self._updates(rec.length)
                    self._fixation_update()
                if attempt <= self.record_episodes:
                    self._record(attempt, rec)
                if cfg.render_samples_every and attempt % cfg.render_samples_every == 0 and len(self.replay):
                    dump_triptych(self.agent, self.replay.sample(4), self.run_dir / f"samples_{attempt:06d}.png")
                row = {
                    "attempt": attempt, "variant": cfg.variant, "seed": cfg.seed,
                    "episode_length": rec.length, "sparse_reward": rec.sparse_reward,
                    "lifted": int(bool(rec.outcome and rec.outcome.lifted)),
                    "train_success": float(np.mean(self.recent)) if self.recent else 0.0,
                    "clamp_events": rec.clamp_events, "failed": int(rec.failed), **self.last,
                }
                if attempt % cfg.eval_every == 0 or attempt == cfg.budget:
                    ev = evaluate_policy(self.agent, cfg, cfg.eval_episodes)
                    row.update(eval_success=ev.rate, eval_lo=ev.ci_low, eval_hi=ev.ci_high)
                    log.info("attempt %d eval %.3f [%.3f, %.3f]", attempt, ev.rate, ev.ci_low, ev.ci_high)
                if attempt % cfg.checkpoint_every == 0 or attempt == cfg.budget:
                    save_agent(self.agent, cfg, self.run_dir, attempt)
                row["wall_clock"] = time.perf_counter() - t0
                writer.writerow([_fmt(row.get(k)) for k in METRICS_HEADER])
                fh.flush()
        return self.run_dir

    def _record(self, attempt, rec):
        path = self.run_dir / "episodes"
        path.mkdir(exist_ok=True)
        with open(path / f"episode_{attempt:06d}.json", "w") as fh:
            json.dump(rec.to_replay_dict(), fh)


def train(cfg: C.RunConfig, run_dir, record_episodes: int = 0) -> Path:
    return Trainer(cfg, run_dir, record_episodes).run()


@torch.no_grad()
def dump_triptych(agent: APRAgent, transitions, path) -> None:
    """Rows of (context, context, query ground truth, generated query) images."""
    from PIL import Image

    steps = [t[0] for t in transitions]
    contexts, query = agent.gqn_batch(steps)
    r = agent.gqn.represent(contexts)
    gen = agent.gqn.generate(r, query.v, query.g, mode="mean")
    cols = [contexts[0].images, contexts[1].images, query.images, gen]
    rows = [torch.cat([c[i, :3] for c in cols], dim=2) for i in range(len(steps))]
    grid = torch.cat(rows, dim=1).permute(1, 2, 0).clamp(0, 1).numpy()
    Image.fromarray((grid * 255).astype(np.uint8)).save(path)


# --------------------------------------------------------------------------
# plots and tables

def read_metrics(run_dir) -> list[dict]:
    with open(Path(run_dir) / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def eval_curve(rows) -> tuple[np.ndarray, np.ndarray]:
    pts = [(int(r["attempt"]), float(r["eval_success"])) for r in rows if r["eval_success"] != ""]
    if not pts:
        return np.zeros(0), np.zeros(0)
    a, s = zip(*pts)
    return np.array(a, dtype=float), np.array(s)


def summarize(run_dir) -> dict:
    """Summary statistics recomputed from a metrics file alone."""
    rows = read_metrics(run_dir)
    x, y = eval_curve(rows)
    return {
        "attempts": int(rows[-1]["attempt"]) if rows else 0,
        "final_eval": float(y[-1]) if len(y) else float("nan"),
        "train_success": float(np.mean([float(r["sparse_reward"]) for r in rows])) if rows else float("nan"),
        "mean_length": float(np.mean([int(r["episode_length"]) for r in rows])) if rows else float("nan"),
    }


def emit_plots(run_dirs, out_dir) -> dict:
    """Mean +/- std learning curves per variant (SVG) and a summary table (CSV)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list] = {}
    for d in run_dirs:
        d = Path(d)
        if not (d / "metrics.csv").is_file():
            raise FileNotFoundError(f"no metrics.csv in {d}")
        rows = read_metrics(d)
        variant = rows[0]["variant"] if rows else C.read(d / "config.json").variant
        groups.setdefault(variant, []).append((d, rows))
    curves = {}
    fig, ax = plt.subplots(figsize=(6, 4))
    summary_rows = []
    for variant, runs in sorted(groups.items()):
        series = [eval_curve(rows) for _, rows in runs]
        series = [s for s in series if len(s[0])]
        if not series:
            continue
        grid = series[0][0]
        if any(len(x) != len(grid) or not np.array_equal(x, grid) for x, _ in series):
            warnings.warn(f"{variant}: evaluation cadences differ, resampling to a common grid")
            grid = np.unique(np.concatenate([x for x, _ in series]))
        ys = np.stack([np.interp(grid, x, y) for x, y in series])
        mean, std = ys.mean(0), ys.std(0)
        curves[variant] = (grid, mean, std)
        ax.plot(grid, mean, label=variant)
        ax.fill_between(grid, mean - std, mean + std, alpha=0.25)
        summary_rows.append([variant, len(series), f"{mean[-1]:.4f}", f"{std[-1]:.4f}",
                             " ".join(str(d) for d, _ in runs)])
    ax.set_xlabel("grasp attempts")
    ax.set_ylabel("evaluation grasp success")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "learning_curves.svg")
    plt.close(fig)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "runs", "final_eval_mean", "final_eval_std", "run_dirs"])
        w.writerows(summary_rows)
    return curves
