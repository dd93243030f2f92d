"""The full agent: shared encoder, generator and the fixation and grasp SAC stacks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from apr import tensor as T
from apr.gqn import GQN, GQNConfig, Views
from apr.sac import SACConfig, SACStack
from apr.scene import WorldConfig


@dataclass(frozen=True)
class AgentConfig:
    gqn: GQNConfig = field(default_factory=GQNConfig)
    grasp: SACConfig = field(default_factory=SACConfig)
    fixation: SACConfig = field(default_factory=lambda: SACConfig(action_dim=3, gamma=0.0))
    representation_learning: bool = True  # False: no ELBO, RL critic gradients reach the encoder
    gqn_lr: float = 1e-4
    gqn_batch: int = 16
    seed: int = 0


def views_to_tensors(views) -> Views:
    imgs = np.stack([o.image for o in views]).astype(np.float32) / 255.0
    dtype = torch.get_default_dtype()
    return Views(torch.from_numpy(imgs).permute(0, 3, 1, 2).to(dtype),
                 torch.as_tensor(np.stack([o.v for o in views]), dtype=dtype),
                 torch.as_tensor(np.stack([o.g for o in views]), dtype=dtype))


class APRAgent(nn.Module):
    def __init__(self, cfg: AgentConfig, world_cfg: WorldConfig | None = None):
        super().__init__()
        self.cfg = cfg
        world_cfg = world_cfg or WorldConfig()
        torch.manual_seed(cfg.seed)
        self.gqn = GQN(cfg.gqn)
        rep = (cfg.gqn.r_channels, cfg.gqn.rep_size, cfg.gqn.rep_size)
        d = cfg.grasp.action_dim
        self.noise = T.torch_generator(cfg.seed + 1)
        self.grasp_stack = SACStack(rep, cfg.grasp, -np.ones(d), np.ones(d), generator=self.noise)
        self.fixation_stack = SACStack(rep, cfg.fixation, world_cfg.fixation_lo, world_cfg.fixation_hi,
                                       generator=self.noise)
        self.gqn_opt = T.Adam(self.gqn.parameters(), lr=cfg.gqn_lr)
        # critic gradients into the encoder; stepped only without representation learning
        self.encoder_rl_opt = T.Adam(self.gqn.encoder.parameters(), lr=cfg.grasp.lr)
        self.rng = T.numpy_rng(cfg.seed + 2)
        self.stochastic = True
        self.gqn_steps = 0

    @property
    def isolated(self) -> bool:
        return self.cfg.representation_learning

    # -- acting -------------------------------------------------------------
    def represent(self, views, n: int = 2) -> torch.Tensor:
        """``r`` from the first ``n`` views of each example; ``views`` is a list of view lists."""
        pairs = [views_to_tensors([v[i] for v in views]) for i in range(n)]
        return self.gqn.represent(pairs)

    @torch.no_grad()
    def fixation(self, views, ctx) -> np.ndarray:
        r = self.represent([views], len(views))
        point, _, _ = self.fixation_stack.act(r, self.stochastic)
        return point[0].numpy().astype(float)

    @torch.no_grad()
    def grasp(self, views, ctx) -> np.ndarray:
        r = self.represent([views])
        _, a, _ = self.grasp_stack.act(r, self.stochastic)
        return a[0].numpy().astype(float)

    # -- learning -----------------------------------------------------------
    def _rep_for_rl(self, view_lists, n: int = 2):
        if self.isolated:
            with torch.no_grad():
                return self.represent(view_lists, n)
        return self.represent(view_lists, n)

    def grasp_update(self, transitions) -> dict:
        views, actions, rewards, next_views, dones = zip(*transitions)
        dtype = torch.get_default_dtype()
        batch = {
            "r": self._rep_for_rl(list(views)),
            "action": torch.as_tensor(np.stack(actions), dtype=dtype),
            "reward": torch.as_tensor(rewards, dtype=dtype),
            "done": torch.as_tensor(dones, dtype=dtype),
        }
        with torch.no_grad():
            batch["r_next"] = self.represent(list(next_views))
        return self.grasp_stack.update(batch, extra_opt=self.encoder_rl_opt, step_extra=not self.isolated)

    def fixation_update(self, transitions) -> dict:
        views, actions, rewards = zip(*transitions)
        dtype = torch.get_default_dtype()
        batch = {
            "r": self._rep_for_rl(list(views), len(views[0])),
            "action": torch.as_tensor(np.stack(actions), dtype=dtype),
            "reward": torch.as_tensor(rewards, dtype=dtype),
        }
        return self.fixation_stack.bandit_update(batch, extra_opt=self.encoder_rl_opt,
                                                 step_extra=not self.isolated)

    def gqn_batch(self, step_views):
        """Two random context views and the remaining query from each 3-view step."""
        ctx1, ctx2, query = [], [], []
        for views in step_views:
            order = self.rng.permutation(3)
            ctx1.append(views[order[0]])
            ctx2.append(views[order[1]])
            query.append(views[order[2]])
        return [views_to_tensors(ctx1), views_to_tensors(ctx2)], views_to_tensors(query)

    def gqn_update(self, step_views) -> dict:
        if not self.cfg.representation_learning:
            return {}
        contexts, query = self.gqn_batch(step_views)
        sigma = self.cfg.gqn.sigma(self.gqn_steps)
        terms = self.gqn.elbo_terms(contexts, query, sigma, generator=self.noise)
        self.gqn_opt.step(T.backward(terms["loss"], self.gqn_opt.params))
        self.gqn_steps += 1
        return {"elbo": terms["loss"].item(), "kl": terms["kl"].item(), "nll": terms["nll"].item(),
                "mse": terms["mse"].item(), "sigma": sigma}

    # -- persistence --------------------------------------------------------
    def state_tensors(self) -> dict:
        out = {f"model.{k}": v for k, v in self.state_dict().items()}
        out.update(self.gqn_opt.state_tensors("opt.gqn"))
        out.update(self.encoder_rl_opt.state_tensors("opt.encoder_rl"))
        out.update(self.grasp_stack.optimizer_state("opt.grasp"))
        out.update(self.fixation_stack.optimizer_state("opt.fixation"))
        out["counters.gqn_steps"] = torch.tensor([self.gqn_steps], dtype=torch.int64)
        return out

    def load_state_tensors(self, tensors: dict) -> None:
        self.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
        self.gqn_opt.load_state_tensors("opt.gqn", tensors)
        self.encoder_rl_opt.load_state_tensors("opt.encoder_rl", tensors)
        self.grasp_stack.load_optimizer_state("opt.grasp", tensors)
        self.fixation_stack.load_optimizer_state("opt.fixation", tensors)
        self.gqn_steps = int(tensors["counters.gqn_steps"][0])
