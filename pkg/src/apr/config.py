"""Run configuration: nested dataclasses, JSON files and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from apr.agent import AgentConfig
from apr.episode import EpisodeConfig
from apr.gqn import GQNConfig
from apr.sac import SACConfig
from apr.scene import WorldConfig

VARIANTS = ("active-target", "passive-target", "active-learned", "no-logpolar",
            "no-representation", "dof4", "dof6")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    variant: str = "active-target"
    seed: int = 0
    budget: int = 1000                 # grasp attempts
    train_objects: tuple = (1, 5)      # object count per training episode ~ U{lo..hi}
    eval_objects: int = 5
    eval_every: int = 1000
    eval_episodes: int = 100
    checkpoint_every: int = 1000
    warmup_transitions: int = 1000
    updates_per_step: float = 1.0      # gradient steps per environment step
    fixation_warmup: int = 64
    replay_capacity: int = 50_000
    moving_average: int = 500
    render_samples_every: int = 0      # 0 disables periodic triptych dumps
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    gqn: GQNConfig = field(default_factory=GQNConfig)
    grasp: SACConfig = field(default_factory=SACConfig)
    fixation: SACConfig = field(default_factory=lambda: SACConfig(action_dim=3, gamma=0.0))
    gqn_lr: float = 1e-4
    gqn_batch: int = 16

    @property
    def representation_learning(self) -> bool:
        return self.variant != "no-representation"

    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.gqn, self.grasp, self.fixation, self.representation_learning,
                           self.gqn_lr, self.gqn_batch, self.seed)


def desk_scale(**overrides) -> RunConfig:
    """Small images and narrow networks, sized for a single CPU."""
    base = RunConfig(
        episode=EpisodeConfig(render_size=128, obs_size=32),
        gqn=GQNConfig(image_size=32, width_divisor=8, lstm_kernel=3),
        grasp=SACConfig(width_divisor=4),
        fixation=SACConfig(action_dim=3, gamma=0.0, width_divisor=4),
    )
    return apply_variant(replace_path(base, overrides))


def apply_variant(cfg: RunConfig) -> RunConfig:
    """Force the structural settings each experiment variant implies."""
    v = cfg.variant
    if v not in VARIANTS:
        raise ConfigError([f"variant: unknown {v!r}, expected one of {', '.join(VARIANTS)}"])
    ep = cfg.episode
    targeted = v in ("active-target", "passive-target", "no-logpolar", "no-representation")
    mode = "passive" if v == "passive-target" else "active"
    foveate = v != "no-logpolar"
    dof = 4 if v == "dof4" else (6 if v == "dof6" else ep.dof)
    ep = dataclasses.replace(ep, targeted=targeted, mode=mode, foveate=foveate, dof=dof)
    gqn = dataclasses.replace(cfg.gqn, image_size=ep.obs_size, image_channels=ep.channels)
    grasp = dataclasses.replace(cfg.grasp, action_dim=dof)
    fixation = dataclasses.replace(cfg.fixation, action_dim=3)
    return dataclasses.replace(cfg, episode=ep, gqn=gqn, grasp=grasp, fixation=fixation)


def validate(cfg: RunConfig) -> RunConfig:
    errors = []
    if cfg.budget < 1:
        errors.append(f"budget: must be >= 1, got {cfg.budget}")
    lo, hi = cfg.train_objects
    if not 1 <= lo <= hi <= cfg.world.max_objects:
        errors.append(f"train_objects: need 1 <= lo <= hi <= {cfg.world.max_objects}, got {cfg.train_objects}")
    if not 1 <= cfg.eval_objects <= cfg.world.max_objects:
        errors.append(f"eval_objects: must lie in [1, {cfg.world.max_objects}], got {cfg.eval_objects}")
    if cfg.eval_episodes < 1:
        errors.append(f"eval_episodes: must be >= 1, got {cfg.eval_episodes}")
    if cfg.updates_per_step < 0:
        errors.append(f"updates_per_step: must be >= 0, got {cfg.updates_per_step}")
    if cfg.episode.obs_size % 4:
        errors.append(f"episode.obs_size: must be divisible by 4, got {cfg.episode.obs_size}")
    if cfg.episode.obs_size > cfg.episode.render_size:
        errors.append("episode.obs_size: must not exceed episode.render_size")
    if cfg.episode.dof not in (4, 6):
        errors.append(f"episode.dof: must be 4 or 6, got {cfg.episode.dof}")
    if cfg.episode.max_steps < 1:
        errors.append(f"episode.max_steps: must be >= 1, got {cfg.episode.max_steps}")
    if cfg.episode.fixation_radius <= 0:
        errors.append("episode.fixation_radius: must be > 0")
    if cfg.episode.reach_mode not in ("potential", "distance"):
        errors.append(f"episode.reach_mode: expected potential|distance, got {cfg.episode.reach_mode!r}")
    if cfg.replay_capacity < 1:
        errors.append("replay_capacity: must be >= 1")
    if cfg.episode.initial_views not in (1, 2):
        errors.append(f"episode.initial_views: must be 1 or 2, got {cfg.episode.initial_views}")
    if errors:
        raise ConfigError(errors)
    return cfg


# --------------------------------------------------------------------------
# (de)serialization

def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict, path: str, errors: list):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in fields:
            errors.append(f"{path}{key}: unknown field")
            continue
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            if not isinstance(val, dict):
                errors.append(f"{path}{key}: expected an object")
                continue
            kwargs[key] = _build(type(default), val, f"{path}{key}.", errors)
        else:
            kwargs[key] = _coerce(val, default, f"{path}{key}", errors)
    return cls(**kwargs)


def _coerce(val, default, path, errors):
    try:
        if isinstance(default, bool):
            if isinstance(val, str):
                if val.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(val)
                return val.lower() in ("true", "1")
            return bool(val)
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(val, float) and not val.is_integer():
                raise ValueError(val)
            return int(val)
        if isinstance(default, float):
            return float(val)
        if isinstance(default, tuple):
            if isinstance(val, str):
                val = json.loads(val)
            return tuple(val)
        if default is None and isinstance(val, str):
            return None if val.lower() == "none" else float(val)
        return val
    except (TypeError, ValueError, json.JSONDecodeError):
        errors.append(f"{path}: cannot interpret {val!r} as {type(default).__name__}")
        return default


def from_dict(data: dict) -> RunConfig:
    errors: list = []
    cfg = _build(RunConfig, data, "", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def replace_path(cfg, overrides: dict):
    """Apply dotted-path overrides, e.g. ``{"episode.obs_size": 32}``."""
    data = to_dict(cfg)
    for key, val in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError([f"{key}: unknown section {p!r}"])
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError([f"{key}: unknown field"])
        node[parts[-1]] = val
    return from_dict(data)


def parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError([f"--set {item!r}: expected key=value"])
        k, v = item.split("=", 1)
        try:
            v = json.loads(v)
        except json.JSONDecodeError:
            pass
        out[k.strip()] = v
    return out


def load(path=None, sets=None, desk: bool = True) -> RunConfig:
    """Defaults (desk-scale unless ``desk=False``), then the JSON file, then overrides, then ``APR_SEED``."""
    base = desk_scale() if desk else RunConfig()
    overrides = {}
    if path is not None:
        with open(path) as fh:
            overrides.update(_flatten(json.load(fh)))
    overrides.update(parse_sets(sets))
    if "APR_SEED" in os.environ:
        overrides["seed"] = os.environ["APR_SEED"]
    cfg = replace_path(base, overrides)
    return validate(apply_variant(cfg))


def _flatten(d: dict, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def save(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2)


def read(path) -> RunConfig:
    with open(path) as fh:
        return apply_variant(from_dict(json.load(fh)))
