"""Representation learning on a frozen dataset of rendered scenes.

Each scene contributes three fixation-aligned views. Training draws two
context views and one query per scene. Evaluation is deterministic: views 0
and 1 are the context, view 2 is the query, and the latent noise is seeded.

The Gaussian likelihood carries an additive constant ``n (ln sigma + ln sqrt(2 pi))``
that no parameter can change. Progress is therefore reported at
``SIGMA_EVAL = 1 / sqrt(2 pi)``, where that constant is exactly zero, next to
the raw loss at the training sigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from apr import tensor as T
from apr.agent import views_to_tensors
from apr.episode import EpisodeConfig, ViewCollector
from apr.gqn import GQN, GQNConfig, Views
from apr.scene import spawn

SIGMA_EVAL = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class StudyConfig:
    n_scenes: int = 64
    objects: tuple = (1, 3)
    render_size: int = 128
    obs_size: int = 32
    steps: int = 2000
    checkpoints: tuple = (500, 1000, 1500, 2000)
    batch: int = 16
    lr: float = 5e-4
    seed: int = 0
    gqn: GQNConfig = field(default_factory=lambda: GQNConfig(image_size=32, width_divisor=8, lstm_kernel=3,
                                                             sigma_anneal_steps=2000))


@dataclass
class Dataset:
    images: torch.Tensor   # [scenes, 3, C, S, S]
    v: torch.Tensor        # [scenes, 3, 6]
    g: torch.Tensor        # [scenes, 3, 9]

    def views(self, scenes, index) -> Views:
        scenes = torch.as_tensor(scenes)
        index = torch.as_tensor(index)
        return Views(self.images[scenes, index], self.v[scenes, index], self.g[scenes, index])


def build_dataset(cfg: StudyConfig) -> Dataset:
    collector = ViewCollector(EpisodeConfig(render_size=cfg.render_size, obs_size=cfg.obs_size,
                                            targeted=False))
    rng = T.numpy_rng(cfg.seed)
    per_scene = []
    for i in range(cfg.n_scenes):
        n = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
        world = spawn(cfg.seed * 100_003 + i, n)
        obj = world.objects[int(rng.integers(len(world.objects)))]
        per_scene.append(views_to_tensors(collector.collect(world, np.asarray(obj.position), rng)))
    return Dataset(torch.stack([p.images for p in per_scene]), torch.stack([p.v for p in per_scene]),
                   torch.stack([p.g for p in per_scene]))


def evaluate(model: GQN, data: Dataset, sigma: float, seed: int = 7) -> dict:
    idx = torch.arange(data.images.shape[0])
    with torch.no_grad():
        t = model.elbo_terms([data.views(idx, 0), data.views(idx, 1)], data.views(idx, 2), sigma,
                             generator=T.torch_generator(seed))
    return {k: float(t[k]) for k in ("loss", "kl", "nll", "mse")}


def run(cfg: StudyConfig, data: Dataset | None = None, log=None) -> dict:
    data = data if data is not None else build_dataset(cfg)
    torch.manual_seed(cfg.seed)
    gqn_cfg = replace(cfg.gqn, image_size=cfg.obs_size, image_channels=data.images.shape[2])
    model = GQN(gqn_cfg)
    opt = T.Adam(model.parameters(), lr=cfg.lr)
    noise = T.torch_generator(cfg.seed + 1)
    rng = T.numpy_rng(cfg.seed + 2)
    n = data.images.shape[0]

    def snapshot(step):
        row = {"step": step, "eval": evaluate(model, data, SIGMA_EVAL),
               "train_sigma": evaluate(model, data, gqn_cfg.sigma(step))}
        if log:
            log(row)
        return row

    history = [snapshot(0)]
    for step in range(1, cfg.steps + 1):
        scenes = rng.choice(n, size=cfg.batch, replace=False)
        order = np.stack([rng.permutation(3) for _ in scenes])
        ctx = [data.views(scenes, order[:, 0]), data.views(scenes, order[:, 1])]
        terms = model.elbo_terms(ctx, data.views(scenes, order[:, 2]), gqn_cfg.sigma(step - 1),
                                 generator=noise)
        opt.step(T.backward(terms["loss"], opt.params))
        if step in cfg.checkpoints:
            history.append(snapshot(step))
    first, last = history[0]["eval"], history[-1]["eval"]
    mses = [h["eval"]["mse"] for h in history if h["step"] in cfg.checkpoints]
    return {
        "history": history,
        "elbo_drop": 1.0 - last["loss"] / first["loss"],
        "checkpoint_mse": mses,
        "mse_decreasing": all(b < a for a, b in zip(mses, mses[1:])),
    }
