"""Episode protocol: central initial view, one glimpse, then a short grasp episode.

Every grasp-episode step re-samples three viewpoints aimed at the fixation
point (or uses three static cameras in passive mode). The first two views
feed the policies' representation; the third is the generative query.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from apr import fovea, raycam
from apr.head import HeadSampler, IKError, ViewRanges
from apr.raycam import CameraPose, look_at
from apr.scene import (GraspOutcome, GripperAction, WorldState, attempt_grasp, is_grasp_initiated,
                       step_gripper)


@dataclass(frozen=True)
class EpisodeConfig:
    mode: str = "active"          # active | passive
    targeted: bool = False        # environment picks the target object and supplies its mask
    foveate: bool = True          # False: uniform downsample instead of the log-polar warp
    render_size: int = 256
    obs_size: int = 64
    dof: int = 6
    max_steps: int = 15
    fixation_radius: float = 0.10
    reach_alpha: float = 1.0
    reach_mode: str = "potential"  # potential | distance
    initial_views: int = 2
    fov_y_deg: float = 60.0
    static_radius: float = 1.0
    static_pitch_deg: float = 45.0
    static_yaws_deg: tuple = (-60.0, 60.0, 180.0)

    @property
    def channels(self) -> int:
        return 4 if self.targeted else 3

    @property
    def action_dim(self) -> int:
        return self.dof


@dataclass
class Observation:
    image: np.ndarray      # (S, S, C) uint8; channel 3, when present, is the 0/255 target mask
    v: np.ndarray          # head joints (6,)
    g: np.ndarray          # gripper pose vector (9,)
    camera: CameraPose

    def as_float(self) -> np.ndarray:
        return self.image.astype(np.float32) / 255.0


@dataclass
class StepRecord:
    views: list
    action: np.ndarray        # normalized grasp action in [-1, 1]^d
    reach_reward: float
    reward: float             # reach reward plus the sparse reward on the last step
    done: bool
    tooltip_before: np.ndarray
    tooltip_after: np.ndarray


@dataclass
class EpisodeRecord:
    world0: str
    target: int | None
    fixation: np.ndarray
    fixation_action: np.ndarray
    initial_views: list
    steps: list = field(default_factory=list)
    outcome: GraspOutcome | None = None
    sparse_reward: float = 0.0
    failed: bool = False
    error: str = ""
    clamp_events: int = 0

    @property
    def length(self) -> int:
        return len(self.steps)

    def grasp_transitions(self):
        """(views, action, reward, next_views, done) tuples for off-policy replay."""
        out = []
        for t, s in enumerate(self.steps):
            nxt = self.steps[t + 1].views if t + 1 < len(self.steps) else s.views
            out.append((s.views, s.action, s.reward, nxt, float(s.done)))
        return out

    def fixation_transition(self):
        return (self.initial_views, self.fixation_action, self.sparse_reward)

    def to_replay_dict(self) -> dict:
        return {
            "world": json.loads(self.world0),
            "target": self.target,
            "fixation": np.asarray(self.fixation).tolist(),
            "actions": [s.action.tolist() for s in self.steps],
            "outcome": None if self.outcome is None else {
                "initiated": self.outcome.initiated, "lifted": self.outcome.lifted,
                "grasped_object": self.outcome.grasped_object,
                "tooltip_at_initiation": self.outcome.tooltip_at_initiation},
            "sparse_reward": self.sparse_reward,
        }


@dataclass
class EpisodeContext:
    world: WorldState
    fixation: np.ndarray | None
    target: int | None
    step: int
    config: EpisodeConfig


class Policy(Protocol):
    def fixation(self, views: list, ctx: EpisodeContext) -> np.ndarray: ...
    def grasp(self, views: list, ctx: EpisodeContext) -> np.ndarray: ...


# --------------------------------------------------------------------------
# rewards

def compute_sparse_reward(outcome: GraspOutcome, fixation, radius: float = 0.10,
                          target: int | None = None) -> float:
    if outcome is None or not outcome.lifted:
        return 0.0
    if target is not None and outcome.grasped_object != target:
        return 0.0
    d = np.linalg.norm(np.asarray(outcome.tooltip_at_initiation) - np.asarray(fixation))
    return 1.0 if d <= radius else 0.0


def compute_reach_reward(tooltip, tooltip_prev, fixation, alpha: float = 1.0, mode: str = "potential") -> float:
    d_now = float(np.linalg.norm(np.asarray(tooltip) - np.asarray(fixation)))
    if mode == "distance":
        return -alpha * d_now
    d_prev = float(np.linalg.norm(np.asarray(tooltip_prev) - np.asarray(fixation)))
    return alpha * (d_prev - d_now)


# --------------------------------------------------------------------------
# views

def static_cameras(cfg: EpisodeConfig, world_cfg) -> list[CameraPose]:
    center = world_cfg.tray_center
    pitch = np.deg2rad(cfg.static_pitch_deg)
    cams = []
    for yaw in np.deg2rad(cfg.static_yaws_deg):
        eye = center + cfg.static_radius * np.array([np.cos(pitch) * np.cos(yaw),
                                                      np.cos(pitch) * np.sin(yaw), np.sin(pitch)])
        cams.append(look_at(eye, center, fov_y=np.deg2rad(cfg.fov_y_deg), resolution=cfg.render_size))
    return cams


def static_descriptor(cfg: EpisodeConfig, index: int) -> np.ndarray:
    """Fixed stand-in for ``v`` on a static camera (no head joints exist)."""
    yaw = np.deg2rad(cfg.static_yaws_deg[index])
    return np.array([yaw, np.deg2rad(cfg.static_pitch_deg), cfg.static_radius, 0.0, 0.0, 0.0])


class ViewCollector:
    """Renders and foveates observations for one environment instance."""

    def __init__(self, cfg: EpisodeConfig, sampler: HeadSampler | None = None):
        self.cfg = cfg
        self.sampler = sampler or HeadSampler(ranges=ViewRanges(), fov_y=np.deg2rad(cfg.fov_y_deg),
                                              resolution=cfg.render_size)
        self.grid = fovea.build_grid(cfg.obs_size, foveate=cfg.foveate)
        self._static = None
        self.renders = 0

    def observe(self, world: WorldState, cam: CameraPose, v, target: int | None) -> Observation:
        out = raycam.render(world, cam)
        self.renders += 1
        img = out.rgb
        if self.cfg.targeted:
            mask = (out.instance == target).astype(float) if target is not None else np.zeros(out.depth.shape)
            img = np.concatenate([img, mask[..., None]], axis=-1)
        small = fovea.sample(img, self.grid)
        if self.cfg.targeted:
            small[..., 3] = small[..., 3] >= 0.5
        image = np.clip(np.rint(small * 255.0), 0, 255).astype(np.uint8)
        return Observation(image, np.asarray(v, dtype=float), world.gripper.pose_vector(), cam)

    def collect(self, world: WorldState, fixation, rng, target=None, n: int = 3) -> list[Observation]:
        if self.cfg.mode == "passive":
            if self._static is None:
                self._static = static_cameras(self.cfg, world.config)
            return [self.observe(world, self._static[i], static_descriptor(self.cfg, i), target)
                    for i in range(n)]
        views = []
        for _ in range(n):
            spec = self.sampler.sample(fixation, rng)
            views.append(self.observe(world, spec.camera, spec.joints, target))
        return views


def collect_views(world, fixation, rng, cfg: EpisodeConfig | None = None, target=None,
                  collector: ViewCollector | None = None) -> list[Observation]:
    collector = collector or ViewCollector(cfg or EpisodeConfig())
    return collector.collect(world, fixation, rng, target)


# --------------------------------------------------------------------------
# episode

def scale_grasp_action(a, world_cfg, dof: int) -> GripperAction:
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    if dof == 4:
        a = np.array([a[0], a[1], a[2], 0.0, 0.0, a[3]])
    lim = np.array([world_cfg.max_step_pos] * 3 + [world_cfg.max_step_rot] * 3)
    return GripperAction(*(a * lim))


def normalize_fixation(point, world_cfg) -> np.ndarray:
    lo, hi = world_cfg.fixation_lo, world_cfg.fixation_hi
    return np.clip(2.0 * (np.asarray(point) - lo) / (hi - lo) - 1.0, -1.0 + 1e-6, 1.0 - 1e-6)


def run_episode(world: WorldState, policy: Policy, cfg: EpisodeConfig, rng: np.random.Generator,
                collector: ViewCollector | None = None) -> EpisodeRecord:
    collector = collector or ViewCollector(cfg)
    wcfg = world.config
    target = int(world.objects[rng.integers(len(world.objects))].id) if cfg.targeted else None
    record = EpisodeRecord(world.to_json(), target, np.zeros(3), np.zeros(3), [])
    try:
        center = wcfg.tray_center
        record.initial_views = collector.collect(world, center, rng, target, n=cfg.initial_views)
        ctx = EpisodeContext(world, None, target, 0, cfg)
        if cfg.targeted:
            fixation = np.array(world.object(target).position)
        else:
            fixation = np.clip(np.asarray(policy.fixation(record.initial_views, ctx), dtype=float),
                               wcfg.fixation_lo, wcfg.fixation_hi)
        record.fixation = fixation
        record.fixation_action = normalize_fixation(fixation, wcfg)
        for t in range(cfg.max_steps):
            views = collector.collect(world, fixation, rng, target, n=3)
            ctx = EpisodeContext(world, fixation, target, t, cfg)
            a = np.clip(np.asarray(policy.grasp(views, ctx), dtype=float), -1.0, 1.0)
            before = np.array(world.gripper.tooltip)
            world = step_gripper(world, scale_grasp_action(a, wcfg, cfg.dof), dof=cfg.dof)
            after = np.array(world.gripper.tooltip)
            reach = compute_reach_reward(after, before, fixation, cfg.reach_alpha, cfg.reach_mode)
            done = is_grasp_initiated(world) or t == cfg.max_steps - 1
            record.steps.append(StepRecord(views, a, reach, reach, done, before, after))
            if is_grasp_initiated(world):
                break
        if is_grasp_initiated(world):
            record.outcome = attempt_grasp(world)
        else:
            record.outcome = GraspOutcome(False, False, None, None)
        record.sparse_reward = compute_sparse_reward(record.outcome, fixation, cfg.fixation_radius, target)
        if record.steps:
            record.steps[-1].reward += record.sparse_reward
        record.clamp_events = world.clamp_events
    except IKError as exc:
        record.failed = True
        record.error = str(exc)
    return record


def replay_episode(replay: dict, cfg: EpisodeConfig) -> tuple[GraspOutcome, float]:
    """Re-execute recorded actions on the stored initial world (no rendering)."""
    world = WorldState.from_dict(replay["world"])
    fixation = np.asarray(replay["fixation"])
    for a in replay["actions"]:
        world = step_gripper(world, scale_grasp_action(a, world.config, cfg.dof), dof=cfg.dof)
        if is_grasp_initiated(world):
            break
    outcome = attempt_grasp(world) if is_grasp_initiated(world) else GraspOutcome(False, False, None, None)
    return outcome, compute_sparse_reward(outcome, fixation, cfg.fixation_radius, replay["target"])


# --------------------------------------------------------------------------
# scripted policies

class OraclePolicy:
    """Cheats with the world state: fixates an object, hovers above it, then descends.

    Fixation choice without a target: the object farthest from its nearest
    neighbour, so the capture cylinder holds it alone.
    """

    hover = 0.08

    def fixation(self, views, ctx: EpisodeContext):
        objs = ctx.world.objects
        pos = np.array([o.position for o in objs])
        if len(objs) == 1:
            return pos[0]
        dists = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(len(objs)) * 1e9
        return pos[np.argmax(dists.min(axis=1))]

    def grasp(self, views, ctx: EpisodeContext):
        w = ctx.world
        goal = np.asarray(ctx.fixation)
        tip = np.asarray(w.gripper.tooltip)
        aligned = np.linalg.norm(tip[:2] - goal[:2]) < 1e-6
        if aligned and tip[2] <= self.hover + 1e-6:
            delta = goal - tip
        else:
            delta = np.array([goal[0] - tip[0], goal[1] - tip[1], self.hover - tip[2]])
        a = delta / w.config.max_step_pos
        rot = np.zeros(3 if ctx.config.dof == 6 else 1)
        return np.clip(np.concatenate([a, rot]), -1.0, 1.0)


class RandomPolicy:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def fixation(self, views, ctx):
        wc = ctx.world.config
        return self.rng.uniform(wc.fixation_lo, wc.fixation_hi)

    def grasp(self, views, ctx):
        return self.rng.uniform(-1.0, 1.0, size=ctx.config.dof)


class ScriptedPolicy:
    """Replays a fixed fixation point and action list (zeros once exhausted)."""

    def __init__(self, fixation, actions):
        self.point = np.asarray(fixation, dtype=float)
        self.actions = [np.asarray(a, dtype=float) for a in actions]

    def fixation(self, views, ctx):
        return self.point

    def grasp(self, views, ctx):
        if ctx.step < len(self.actions):
            return self.actions[ctx.step]
        return np.zeros(ctx.config.dof)
