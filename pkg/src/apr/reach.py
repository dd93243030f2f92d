"""Reach-only sanity task for the grasp SAC stack.

The gripper must bring its tool tip to a fixation point using the real
kinematic step and per-step limits, with grasping disabled and a dense
negative-distance reward. The observation is privileged: the tip-to-target
offset and the tip position, tiled over a small grid so the same
convolutional heads can consume it in place of a learned scene representation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from apr import tensor as T
from apr.episode import compute_reach_reward
from apr.sac import ReplayBuffer, SACConfig, SACStack
from apr.scene import Gripper, GripperAction, WorldConfig, WorldState, step_gripper

SCALE = 0.3  # metres per unit of the tiled state


@dataclass(frozen=True)
class ReachConfig:
    max_steps: int = 15
    success_radius: float = 0.05
    grid: int = 4
    target_lo: tuple = (-0.30, -0.20, 0.02)
    target_hi: tuple = (0.30, 0.20, 0.10)
    env_steps: int = 30_000
    warmup: int = 1_000
    eval_every: int = 2_500
    eval_episodes: int = 100
    gamma: float = 0.9
    seed: int = 0
    sac: SACConfig = field(default_factory=lambda: SACConfig(action_dim=3, width_divisor=4, gamma=0.9))


class ReachEnv:
    def __init__(self, cfg: ReachConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        # initiation height below the floor: the tip may go anywhere without ending the episode
        self.world_cfg = replace(WorldConfig(), z_initiate=-1.0)

    def reset(self, target=None):
        self.target = np.asarray(target if target is not None else
                                 self.rng.uniform(self.cfg.target_lo, self.cfg.target_hi), dtype=float)
        self.world = WorldState((), Gripper(self.world_cfg.start_tooltip), self.world_cfg)
        self.t = 0
        return self.state()

    @property
    def tip(self) -> np.ndarray:
        return np.asarray(self.world.gripper.tooltip)

    def state(self) -> np.ndarray:
        return np.concatenate([(self.target - self.tip) / SCALE, self.tip / SCALE])

    def step(self, a):
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0) * self.world_cfg.max_step_pos
        self.world = step_gripper(self.world, GripperAction(*a))
        self.t += 1
        reward = compute_reach_reward(self.tip, None, self.target, mode="distance")
        return self.state(), reward, self.t >= self.cfg.max_steps

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.tip - self.target))


def tile(states, grid: int) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(states), dtype=torch.get_default_dtype())
    return T.tile_to_grid(x.reshape(len(x), -1), grid, grid)


class OracleReach:
    """Steps straight at the target, clipped to the per-step limit."""

    def act(self, state):
        return np.clip(state[:3] * SCALE / 0.05, -1.0, 1.0)


class SACReach:
    def __init__(self, cfg: ReachConfig):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.stack = SACStack((6, cfg.grid, cfg.grid), cfg.sac, -np.ones(3), np.ones(3),
                              generator=T.torch_generator(cfg.seed + 1))

    def act(self, state, stochastic=False):
        _, a, _ = self.stack.act(tile([state], self.cfg.grid), stochastic)
        return a[0].numpy().astype(float)


def evaluate(policy, cfg: ReachConfig, n: int | None = None, seed: int = 10_000) -> float:
    env = ReachEnv(cfg, T.numpy_rng(seed))
    n = cfg.eval_episodes if n is None else n
    hits = 0
    for _ in range(n):
        s = env.reset()
        done = False
        while not done:
            s, _, done = env.step(policy.act(s))
        hits += env.distance <= cfg.success_radius
    return hits / n


def train(cfg: ReachConfig, log=None) -> dict:
    """Train SAC on the reach task; stops at the first evaluation reaching 90%."""
    agent = SACReach(cfg)
    env = ReachEnv(cfg, T.numpy_rng(cfg.seed))
    buf = ReplayBuffer(cfg.env_steps, seed=cfg.seed + 2)
    explore = T.numpy_rng(cfg.seed + 3)
    s = env.reset()
    curve = []
    for step in range(1, cfg.env_steps + 1):
        if step <= cfg.warmup:
            a = explore.uniform(-1.0, 1.0, 3)
        else:
            a = agent.act(s, stochastic=True)
        s2, r, end = env.step(a)
        # the horizon is a time limit, not a terminal state: keep bootstrapping
        buf.push((s, a, r, s2))
        s = env.reset() if end else s2
        if step > cfg.warmup:
            items = buf.sample(cfg.sac.batch_size)
            st, ac, rw, nx = zip(*items)
            agent.stack.update({
                "r": tile(st, cfg.grid), "r_next": tile(nx, cfg.grid),
                "action": torch.as_tensor(np.stack(ac), dtype=torch.get_default_dtype()),
                "reward": torch.as_tensor(rw, dtype=torch.get_default_dtype()),
                "done": torch.zeros(len(items)),
            }, gamma=cfg.gamma)
        if step % cfg.eval_every == 0:
            rate = evaluate(agent, cfg)
            curve.append((step, rate))
            if log:
                log(step, rate)
            if rate >= 0.9:
                break
    return {"curve": curve, "env_steps": curve[-1][0] if curve else 0,
            "final": curve[-1][1] if curve else 0.0, "agent": agent}
