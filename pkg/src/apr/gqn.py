"""Multimodal scene encoder and conditional autoregressive generator.

Per-view encodings of (image, head joints ``v``, gripper pose ``g``) are summed
into the scene representation ``r``. The generator is a DRAW-style loop of
ConvLSTM updates with a learned prior and an inference network, trained by
the evidence lower bound on a held-out query view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from apr import tensor as T

V_DIM = 6
G_DIM = 9


@dataclass(frozen=True)
class GQNConfig:
    image_size: int = 64
    image_channels: int = 3          # 4 when the target mask rides along
    width_divisor: int = 4           # 1 gives the full-width 256/128 channel network
    z_channels: int = 3
    steps: int = 12
    lstm_kernel: int = 5
    condition_on_g: bool = False
    sigma_start: float = 2.0
    sigma_end: float = 0.7
    sigma_anneal_steps: int = 100_000

    @property
    def r_channels(self) -> int:
        return max(256 // self.width_divisor, 4)

    @property
    def mid_channels(self) -> int:
        return max(128 // self.width_divisor, 4)

    @property
    def h_channels(self) -> int:
        return max(128 // self.width_divisor, 4)

    @property
    def rep_size(self) -> int:
        return self.image_size // 4

    def sigma(self, step: int) -> float:
        frac = min(max(step, 0) / max(self.sigma_anneal_steps, 1), 1.0)
        return self.sigma_end + (self.sigma_start - self.sigma_end) * (1.0 - frac)


@dataclass
class Views:
    """A batch of observations: images ``[N, C, S, S]`` in [0, 1], ``v`` ``[N, 6]``, ``g`` ``[N, 9]``."""
    images: torch.Tensor
    v: torch.Tensor
    g: torch.Tensor

    def __len__(self):
        return self.images.shape[0]


@dataclass
class SceneRep:
    r: torch.Tensor
    n_views: int


class Encoder(nn.Module):
    """Seven-layer convolutional tower with two residual skips.

    Proprioception is tiled over the quarter-resolution grid and
    concatenated after the fourth layer.
    """

    def __init__(self, cfg: GQNConfig):
        super().__init__()
        self.cfg = cfg
        r, m, c = cfg.r_channels, cfg.mid_channels, cfg.image_channels
        p = V_DIM + G_DIM
        self.conv1 = nn.Conv2d(c, r, 2, stride=2)
        self.conv2 = nn.Conv2d(r, r, 2, stride=2)
        self.conv3 = nn.Conv2d(r, m, 3, padding=1)
        self.conv4 = nn.Conv2d(m, r, 2, stride=2)
        self.conv5 = nn.Conv2d(r + p, r, 3, padding=1)
        self.conv6 = nn.Conv2d(r + p, m, 3, padding=1)
        self.conv7 = nn.Conv2d(m, r, 3, padding=1)

    def forward(self, images, v, g):
        cfg = self.cfg
        if images.dim() != 4 or images.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"encoder expects images [N, {cfg.image_channels}, {cfg.image_size}, "
                             f"{cfg.image_size}], got {tuple(images.shape)}")
        if v.shape[-1] != V_DIM or g.shape[-1] != G_DIM:
            raise ValueError(f"proprioception must be v[{V_DIM}], g[{G_DIM}]; got {tuple(v.shape)}, {tuple(g.shape)}")
        x = torch.relu(self.conv1(images))
        skip = torch.relu(self.conv2(x))
        x = torch.relu(self.conv3(x))
        x = torch.relu(self.conv4(x)) + skip
        s = x.shape[-1]
        x = T.concat_channels([x, T.tile_to_grid(torch.cat([v, g], dim=1), s, s)])
        skip = torch.relu(self.conv5(x))
        x = torch.relu(self.conv6(x))
        return torch.relu(self.conv7(x)) + skip


class ConvLSTM(nn.Module):
    def __init__(self, in_channels, hidden, kernel):
        super().__init__()
        self.hidden = hidden
        self.weight = nn.Parameter(torch.empty(4 * hidden, in_channels + hidden, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(4 * hidden))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, x, h, c):
        return T.conv_lstm_cell(x, h, c, self.weight, self.bias)


class Generator(nn.Module):
    def __init__(self, cfg: GQNConfig):
        super().__init__()
        self.cfg = cfg
        h, z, r = cfg.h_channels, cfg.z_channels, cfg.r_channels
        q = V_DIM + (G_DIM if cfg.condition_on_g else 0)
        k = cfg.lstm_kernel
        x_feat = max(8 // max(cfg.width_divisor // 4, 1), 4)
        self.downsample = nn.Conv2d(cfg.image_channels, x_feat, 4, stride=4)
        self.inference_core = ConvLSTM(h + x_feat + q + r, h, k)
        self.generator_core = ConvLSTM(z + q + r, h, k)
        self.prior_head = nn.Conv2d(h, 2 * z, k, padding=k // 2)
        self.posterior_head = nn.Conv2d(h, 2 * z, k, padding=k // 2)
        self.upsample = nn.ConvTranspose2d(h, h, 4, stride=4)
        self.observation_head = nn.Conv2d(h, cfg.image_channels, 1)

    def query_features(self, v, g):
        q = torch.cat([v, g], dim=1) if self.cfg.condition_on_g else v
        s = self.cfg.rep_size
        return T.tile_to_grid(q, s, s)

    @staticmethod
    def _gaussian(head, h):
        mu, log_std = torch.chunk(head(h), 2, dim=1)
        return mu, torch.exp(log_std.clamp(-10.0, 5.0))

    def run(self, r, v, g, target=None, mode="sample", generator=None):
        """Run the L-step loop; with ``target`` the posterior drives the latents.

        Returns ``(image_mean, kl)`` where ``kl`` is the per-example KL summed
        over steps and latent dimensions (zero without a target).
        """
        cfg = self.cfg
        n, s = r.shape[0], cfg.rep_size
        if r.shape[2:] != (s, s):
            raise ValueError(f"representation grid {tuple(r.shape[2:])} != ({s}, {s})")
        hc = cfg.h_channels
        zeros = r.new_zeros((n, hc, s, s))
        h_g, c_g, h_e, c_e = zeros, zeros, zeros, zeros
        u = r.new_zeros((n, hc, cfg.image_size, cfg.image_size))
        q = self.query_features(v, g)
        x_feat = self.downsample(target) if target is not None else None
        kl = r.new_zeros(n)
        for _ in range(cfg.steps):
            mu_p, std_p = self._gaussian(self.prior_head, h_g)
            if target is not None:
                h_e, c_e = self.inference_core(torch.cat([h_g, x_feat, q, r], dim=1), h_e, c_e)
                mu_q, std_q = self._gaussian(self.posterior_head, h_e)
                z = T.reparameterize(mu_q, std_q, generator)
                kl = kl + T.gaussian_kl(mu_q, std_q, mu_p, std_p).flatten(1).sum(1)
            elif mode == "mean":
                z = mu_p
            else:
                z = T.reparameterize(mu_p, std_p, generator)
            h_g, c_g = self.generator_core(torch.cat([z, q, r], dim=1), h_g, c_g)
            u = u + self.upsample(h_g)
        return torch.sigmoid(self.observation_head(u)), kl


class GQN(nn.Module):
    """Encoder + generator pair with the ELBO objective."""

    def __init__(self, cfg: GQNConfig | None = None):
        super().__init__()
        self.cfg = cfg or GQNConfig()
        self.encoder = Encoder(self.cfg)
        self.generator = Generator(self.cfg)

    @property
    def masked(self) -> bool:
        return self.cfg.image_channels == 4

    def encode(self, views: Views) -> torch.Tensor:
        return self.encoder(views.images, views.v, views.g)

    def represent(self, contexts: list[Views]) -> torch.Tensor:
        """Summed representation of several per-view batches."""
        return aggregate([self.encode(c) for c in contexts]).r

    def generate(self, r, query_v, query_g, mode="sample", generator=None):
        if not torch.isfinite(r).all():
            raise ValueError("generate: representation has non-finite values")
        mean, _ = self.generator.run(r, query_v, query_g, mode=mode, generator=generator)
        return mean

    def elbo_terms(self, contexts: list[Views], query: Views, sigma: float, generator=None) -> dict:
        """Per-batch means of the KL and reconstruction terms."""
        if not contexts:
            raise ValueError("elbo needs at least one context view")
        r = self.represent(contexts)
        mean, kl = self.generator.run(r, query.v, query.g, target=query.images, generator=generator)
        nll_pix = -T.gaussian_log_likelihood(query.images, mean, torch.tensor(sigma, dtype=mean.dtype))
        nll_chan = nll_pix.sum(dim=(2, 3)).mean(0)  # per channel
        nll = nll_chan.sum()
        kl = kl.mean()
        loss = kl + nll
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite ELBO (kl={kl.item()}, nll={nll.item()})")
        mse = ((mean - query.images) ** 2).mean()
        out = {"loss": loss, "kl": kl, "nll": nll, "mse": mse, "mean": mean}
        out["nll_mask"] = nll_chan[3] if self.masked else loss.new_zeros(())
        return out

    def elbo_loss(self, contexts, query, sigma, generator=None) -> torch.Tensor:
        return self.elbo_terms(contexts, query, sigma, generator)["loss"]

    def reconstruct_mask(self, contexts, query, sigma, generator=None) -> torch.Tensor:
        """Mask channel's share of the reconstruction term."""
        if not self.masked:
            raise ValueError("reconstruct_mask requires the 4-channel (targeted) model")
        return self.elbo_terms(contexts, query, sigma, generator)["nll_mask"]


def aggregate(reps: list[torch.Tensor], ids=None) -> SceneRep:
    """Elementwise sum of per-view encodings.

    With ``ids`` the terms are added in sorted-id order, which makes the
    result bitwise independent of the order the views arrive in.
    """
    if not reps:
        raise ValueError("aggregate: empty list of representations")
    shapes = {tuple(r.shape) for r in reps}
    if len(shapes) != 1:
        raise ValueError(f"aggregate: mismatched shapes {sorted(shapes)}")
    if ids is not None:
        if len(ids) != len(reps):
            raise ValueError("aggregate: ids and representations differ in length")
        reps = [reps[i] for i in sorted(range(len(reps)), key=lambda i: ids[i])]
    total = reps[0]
    for r in reps[1:]:
        total = total + r
    return SceneRep(total, len(reps))


def gaussian_normalizer(n_pixels: int, sigma: float) -> float:
    """-log N(x; x, sigma) summed over ``n_pixels`` values."""
    return n_pixels * (math.log(sigma) + 0.5 * math.log(2 * math.pi))
