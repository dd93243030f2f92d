"""Soft actor-critic policy stacks operating on a spatial scene representation.

Each stack holds a squashed-Gaussian actor, a state-value head, twin
action-value heads with Polyak-averaged targets, and an auto-tuned entropy
temperature. Heads are a three-layer 3x3 conv block and one linear layer;
action-value heads see the action tiled over the grid as extra channels.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from apr import tensor as T

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0
# tanh rounds to exactly +-1 in 32-bit beyond |u| ~ 9; keep actions strictly inside
_EDGE = 1e-6


@dataclass(frozen=True)
class SACConfig:
    action_dim: int = 6
    channels: tuple = (128, 64, 32)
    width_divisor: int = 4
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    init_alpha: float = 0.1
    target_entropy: float | None = None   # default -action_dim
    twin: bool = True
    batch_size: int = 64

    @property
    def widths(self) -> tuple:
        return tuple(max(c // self.width_divisor, 2) for c in self.channels)

    @property
    def entropy_target(self) -> float:
        return -float(self.action_dim) if self.target_entropy is None else self.target_entropy


class PolicyHead(nn.Module):
    def __init__(self, in_channels: int, grid: int, out_dim: int, widths=(32, 16, 8)):
        super().__init__()
        layers, c = [], in_channels
        for w in widths:
            layers += [nn.Conv2d(c, w, 3, padding=1), nn.ReLU()]
            c = w
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Linear(c * grid * grid, out_dim)

    def forward(self, x):
        return self.fc(self.conv(x).flatten(1))


class QHead(PolicyHead):
    def __init__(self, rep_channels, grid, action_dim, widths):
        super().__init__(rep_channels + action_dim, grid, 1, widths)

    def forward(self, r, a):
        s = r.shape[-1]
        return super().forward(torch.cat([r, T.tile_to_grid(a, s, s)], dim=1)).squeeze(-1)


def squashed_log_prob(pre_tanh, mu, log_std):
    """log density of ``tanh(u)`` for ``u ~ N(mu, exp(log_std)^2)``, summed over dims."""
    std = log_std.exp()
    logp = T.gaussian_log_likelihood(pre_tanh, mu, std).sum(-1)
    # log(1 - tanh(u)^2), numerically stable form
    correction = 2.0 * (math.log(2.0) - pre_tanh - F.softplus(-2.0 * pre_tanh))
    return logp - correction.sum(-1)


class SACStack(nn.Module):
    """One policy (actor, value, twin critics and targets) over ``r``.

    Actions live in ``[-1, 1]^d``; :meth:`scale` maps them to ``[low, high]``.
    """

    def __init__(self, rep_shape: tuple, cfg: SACConfig, low, high, generator=None):
        super().__init__()
        self.cfg = cfg
        c, h, w = rep_shape
        if h != w:
            raise ValueError(f"representation grid must be square, got {h}x{w}")
        d, widths = cfg.action_dim, cfg.widths
        self.actor = PolicyHead(c, h, 2 * d, widths)
        self.value = PolicyHead(c, h, 1, widths)
        self.q1 = QHead(c, h, d, widths)
        self.q2 = QHead(c, h, d, widths)
        self.q1_target = copy.deepcopy(self.q1).requires_grad_(False)
        self.q2_target = copy.deepcopy(self.q2).requires_grad_(False)
        self.log_alpha = nn.Parameter(torch.tensor(math.log(cfg.init_alpha)))
        self.register_buffer("low", torch.as_tensor(np.asarray(low), dtype=torch.get_default_dtype()))
        self.register_buffer("high", torch.as_tensor(np.asarray(high), dtype=torch.get_default_dtype()))
        self.generator = generator
        self.actor_opt = T.Adam(self.actor.parameters(), lr=cfg.lr)
        self.critic_opt = T.Adam(list(self.q1.parameters()) + list(self.q2.parameters())
                                 + list(self.value.parameters()), lr=cfg.lr)
        self.alpha_opt = T.Adam([self.log_alpha], lr=cfg.lr)
        self.updates = 0
        self.skipped = 0

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    def scale(self, a: torch.Tensor) -> torch.Tensor:
        return self.low + 0.5 * (a + 1.0) * (self.high - self.low)

    def unscale(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=self.low.dtype)
        return 2.0 * (x - self.low) / (self.high - self.low) - 1.0

    def distribution(self, r):
        mu, log_std = torch.chunk(self.actor(r), 2, dim=-1)
        return mu, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, r, stochastic=True, noise=None):
        """Normalized action in (-1, 1)^d and its log-probability."""
        mu, log_std = self.distribution(r)
        if stochastic:
            u = T.reparameterize(mu, log_std.exp(), self.generator, noise)
        else:
            u = mu
        a = torch.tanh(u).clamp(-1.0 + _EDGE, 1.0 - _EDGE)
        return a, squashed_log_prob(u, mu, log_std)

    @torch.no_grad()
    def act(self, r, stochastic=True):
        """Scaled action and log-prob for acting in the environment."""
        a, logp = self.sample(r, stochastic)
        return self.scale(a), a, logp

    def q_min(self, r, a, target=False):
        q1, q2 = (self.q1_target, self.q2_target) if target else (self.q1, self.q2)
        if not self.cfg.twin:
            return q1(r, a)
        return torch.min(q1(r, a), q2(r, a))

    def losses(self, batch: dict, gamma: float | None = None):
        """Critic, value, actor and temperature losses for one batch.

        ``batch`` keys: ``r``, ``action`` (normalized), ``reward``, ``done`` and,
        unless ``done`` is all ones, ``r_next``.
        """
        gamma = self.cfg.gamma if gamma is None else gamma
        r, a = batch["r"], batch["action"]
        reward, done = batch["reward"], batch["done"]
        alpha = self.alpha.detach()
        with torch.no_grad():
            if gamma > 0 and "r_next" in batch:
                a_next, logp_next = self.sample(batch["r_next"])
                soft_next = self.q_min(batch["r_next"], a_next, target=True) - alpha * logp_next
                y = reward + gamma * (1.0 - done) * soft_next
            else:
                y = reward
        q1 = self.q1(r, a)
        critic = F.mse_loss(q1, y)
        if self.cfg.twin:
            critic = critic + F.mse_loss(self.q2(r, a), y)
        r_pi = r.detach()
        a_pi, logp = self.sample(r_pi)
        q_pi = self.q_min(r_pi, a_pi)
        actor = (alpha * logp - q_pi).mean()
        value = F.mse_loss(self.value(r_pi).squeeze(-1), (q_pi - alpha * logp).detach())
        temperature = -(self.log_alpha * (logp.detach() + self.cfg.entropy_target)).mean()
        return {"critic": critic, "value": value, "actor": actor, "alpha": temperature,
                "q": q1.detach().mean(), "entropy": -logp.detach().mean()}

    def update(self, batch: dict, gamma: float | None = None, tau: float | None = None,
               extra_opt: T.Adam | None = None, step_extra: bool = True) -> dict:
        """One SAC step.

        ``extra_opt`` holds parameters upstream of ``r`` (the encoder): critic
        gradients are computed for them and reported as ``extra_grad_norm``,
        and applied only when ``step_extra`` is set.
        """
        out = self.losses(batch, gamma)
        if not all(torch.isfinite(v) for v in out.values()):
            self.skipped += 1
            return {k: float("nan") for k in out} | {"skipped": 1}
        extra = extra_opt.params if extra_opt is not None else []
        # all gradients before any in-place step: the actor loss runs through the critics
        grads = T.backward(out["critic"] + out["value"], self.critic_opt.params + extra)
        actor_grads = T.backward(out["actor"], self.actor_opt.params)
        alpha_grads = T.backward(out["alpha"], self.alpha_opt.params)
        nc = len(self.critic_opt.params)
        self.critic_opt.step(grads[:nc])
        extra_norm = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads[nc:]))) if extra else 0.0
        if extra and step_extra:
            extra_opt.step(grads[nc:])
        self.actor_opt.step(actor_grads)
        self.alpha_opt.step(alpha_grads)
        self.polyak(self.cfg.tau if tau is None else tau)
        self.updates += 1
        metrics = {k: float(v.detach()) for k, v in out.items()}
        metrics["alpha_value"] = float(self.alpha.detach())
        metrics["extra_grad_norm"] = extra_norm
        return metrics

    @torch.no_grad()
    def polyak(self, tau: float):
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, pt in zip(online.parameters(), target.parameters()):
                pt.mul_(1.0 - tau).add_(p, alpha=tau)

    def bandit_update(self, batch: dict, **kw) -> dict:
        """Single-step (contextual bandit) update: Q regresses directly to reward."""
        batch = dict(batch)
        batch["done"] = torch.ones_like(batch["reward"])
        batch.pop("r_next", None)
        return self.update(batch, gamma=0.0, **kw)

    def optimizer_state(self, prefix):
        out = {}
        for name in ("actor_opt", "critic_opt", "alpha_opt"):
            out.update(getattr(self, name).state_tensors(f"{prefix}.{name}"))
        return out

    def load_optimizer_state(self, prefix, tensors):
        for name in ("actor_opt", "critic_opt", "alpha_opt"):
            getattr(self, name).load_state_tensors(f"{prefix}.{name}", tensors)


class ReplayBuffer:
    """FIFO ring buffer with seeded uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.items: list = []
        self.next = 0
        self.rng = T.numpy_rng(seed)

    def __len__(self):
        return len(self.items)

    def push(self, item) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.next] = item
        self.next = (self.next + 1) % self.capacity

    def extend(self, items) -> None:
        for it in items:
            self.push(it)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if not self.items:
            raise IndexError("cannot sample from an empty replay buffer")
        return self.rng.integers(len(self.items), size=batch_size)

    def sample(self, batch_size: int) -> list:
        return [self.items[i] for i in self.sample_indices(batch_size)]
