"""Kinematic bin world: object spawning, gripper motion and a geometric grasp model.

There is no contact physics. A grasp succeeds when an object's centroid lies
inside a capture cylinder around the tool axis at the moment the tool tip
drops below the initiation height, and the object fits between the fingers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from apr import geometry
from apr.raycam import GRIPPER_ID, GRIPPER_RGB, PALETTE, TRAY_RGB, Primitive

KINDS = ("sphere", "box", "cylinder")


@dataclass(frozen=True)
class WorldConfig:
    tray_half: tuple = (0.30, 0.20)      # inner half extents, floor at z = 0
    tray_height: float = 0.10
    wall: float = 0.01
    workspace_lo: tuple = (-0.40, -0.30, 0.00)
    workspace_hi: tuple = (0.40, 0.30, 0.50)
    max_objects: int = 5
    max_step_pos: float = 0.05
    max_step_rot: float = 0.25
    z_initiate: float = 0.07
    capture_radius: float = 0.03
    capture_half_height: float = 0.04
    max_opening: float = 0.085
    start_tooltip: tuple = (0.0, 0.0, 0.30)
    train_size: tuple = (0.015, 0.026)
    test_size: tuple = (0.026, 0.032)
    aspect: tuple = (1.0, 1.8)
    max_rejections: int = 10_000

    @property
    def tray_center(self) -> np.ndarray:
        return np.array([0.0, 0.0, 0.5 * self.tray_height])

    @property
    def fixation_lo(self) -> np.ndarray:
        return np.array([-self.tray_half[0] - 0.1, -self.tray_half[1] - 0.1, -0.1])

    @property
    def fixation_hi(self) -> np.ndarray:
        return np.array([self.tray_half[0] + 0.1, self.tray_half[1] + 0.1, self.tray_height + 0.1])


@dataclass(frozen=True)
class SceneObject:
    id: int
    kind: str
    size: tuple          # sphere (r,), box half extents (hx, hy, hz), cylinder (r, half height)
    position: tuple
    yaw: float
    color: int

    @property
    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return self.size[0]
        if self.kind == "box":
            return float(np.linalg.norm(self.size))
        return float(np.hypot(*self.size))

    @property
    def min_dimension(self) -> float:
        if self.kind == "sphere":
            return 2 * self.size[0]
        return 2 * min(self.size)

    def primitive(self) -> Primitive:
        return Primitive(self.kind, tuple(self.size), np.array(self.position),
                         geometry.rot_z(self.yaw), self.id, PALETTE[self.color % len(PALETTE)])


@dataclass(frozen=True)
class Gripper:
    tooltip: tuple
    orientation: tuple = tuple(geometry.IDENTITY_QUAT)
    opening: float = 0.085
    attached: int | None = None

    @property
    def rotation(self) -> np.ndarray:
        return geometry.quat_to_matrix(self.orientation)

    @property
    def approach_axis(self) -> np.ndarray:
        """Unit direction the fingers point along (down at the home orientation)."""
        return -self.rotation[:, 2]

    def euler(self) -> np.ndarray:
        return geometry.quat_to_euler(self.orientation)

    def pose_vector(self) -> np.ndarray:
        """``g = (x, y, z, sin a, cos a, sin b, cos b, sin c, cos c)``."""
        a, b, c = self.euler()
        return np.array([*self.tooltip, np.sin(a), np.cos(a), np.sin(b), np.cos(b), np.sin(c), np.cos(c)])

    def primitives(self) -> list[Primitive]:
        R = self.rotation
        p = np.asarray(self.tooltip)
        half_open = 0.5 * self.opening
        parts = [
            ((half_open + 0.006, 0.0, 0.025), (0.006, 0.012, 0.025)),   # finger
            ((-half_open - 0.006, 0.0, 0.025), (0.006, 0.012, 0.025)),  # finger
            ((0.0, 0.0, 0.060), (half_open + 0.012, 0.016, 0.010)),     # palm
            ((0.0, 0.0, 0.150), (0.018, 0.018, 0.080)),                 # wrist link
        ]
        return [Primitive("box", half, p + R @ np.array(off), R, GRIPPER_ID, GRIPPER_RGB)
                for off, half in parts]


@dataclass(frozen=True)
class WorldState:
    objects: tuple = ()
    gripper: Gripper | None = None
    config: WorldConfig = field(default_factory=WorldConfig)
    with_tray: bool = True
    step_count: int = 0
    clamp_events: int = 0

    def object(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def tray_primitives(self) -> list[Primitive]:
        hx, hy = self.config.tray_half
        h, w = self.config.tray_height, self.config.wall
        boxes = [
            ((0.0, 0.0, -0.5 * w), (hx + w, hy + w, 0.5 * w)),
            ((hx + 0.5 * w, 0.0, 0.5 * h), (0.5 * w, hy + w, 0.5 * h)),
            ((-hx - 0.5 * w, 0.0, 0.5 * h), (0.5 * w, hy + w, 0.5 * h)),
            ((0.0, hy + 0.5 * w, 0.5 * h), (hx, 0.5 * w, 0.5 * h)),
            ((0.0, -hy - 0.5 * w, 0.5 * h), (hx, 0.5 * w, 0.5 * h)),
        ]
        return [Primitive("box", half, np.array(c), np.eye(3), 0, TRAY_RGB) for c, half in boxes]

    def primitives(self) -> list[Primitive]:
        prims = self.tray_primitives() if self.with_tray else []
        prims += [o.primitive() for o in self.objects]
        if self.gripper is not None:
            prims += self.gripper.primitives()
        return prims

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=_jsonable)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        cfg = WorldConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["config"].items()})
        objs = tuple(SceneObject(**{**o, "size": tuple(o["size"]), "position": tuple(o["position"])})
                     for o in d["objects"])
        g = d.get("gripper")
        grip = None if g is None else Gripper(tuple(g["tooltip"]), tuple(g["orientation"]), g["opening"], g["attached"])
        return cls(objs, grip, cfg, d["with_tray"], d["step_count"], d["clamp_events"])

    @classmethod
    def from_json(cls, s: str) -> "WorldState":
        return cls.from_dict(json.loads(s))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


class SpawnError(RuntimeError):
    pass


def _random_object(rng, oid, size_range, aspect) -> tuple:
    kind = KINDS[rng.integers(len(KINDS))]
    s = rng.uniform(*size_range)
    if kind == "sphere":
        size = (s,)
    elif kind == "box":
        # smallest half extent is exactly s, so the train/test split on s holds for every kind
        a = rng.uniform(*aspect, size=2)
        size = (s, s * a[0], s * min(a[1], 1.2))
    else:
        size = (s, s * rng.uniform(*aspect))
    return kind, tuple(float(x) for x in size)


def _rest_height(kind, size) -> float:
    return size[0] if kind == "sphere" else size[-1]


def spawn(seed: int, n_objects: int, object_set: str = "train",
          config: WorldConfig | None = None) -> WorldState:
    """Place ``n_objects`` non-overlapping primitives in the tray, deterministic in ``seed``."""
    config = config or WorldConfig()
    if not 1 <= n_objects <= config.max_objects:
        raise ValueError(f"n_objects={n_objects} outside [1, {config.max_objects}]")
    if object_set not in ("train", "test"):
        raise ValueError(f"object_set must be 'train' or 'test', got {object_set!r}")
    size_range = config.train_size if object_set == "train" else config.test_size
    rng = np.random.Generator(np.random.Philox(seed))
    hx, hy = config.tray_half
    objects: list[SceneObject] = []
    rejections = 0
    while len(objects) < n_objects:
        oid = len(objects) + 1
        kind, size = _random_object(rng, oid, size_range, config.aspect)
        yaw = float(rng.uniform(-np.pi, np.pi))
        color = int(rng.integers(len(PALETTE)))
        placed = False
        while rejections < config.max_rejections:
            trial = SceneObject(oid, kind, size, (0.0, 0.0, 0.0), yaw, color)
            rb = trial.bounding_radius
            x = rng.uniform(-hx + rb, hx - rb)
            y = rng.uniform(-hy + rb, hy - rb)
            pos = np.array([x, y, _rest_height(kind, size)])
            if all(np.linalg.norm(pos - np.array(o.position)) > rb + o.bounding_radius for o in objects):
                objects.append(replace(trial, position=tuple(float(v) for v in pos)))
                placed = True
                break
            rejections += 1
        if not placed:
            raise SpawnError(f"could not place object {oid} after {config.max_rejections} rejections")
    gripper = Gripper(tuple(config.start_tooltip), opening=config.max_opening)
    return WorldState(tuple(objects), gripper, config)


@dataclass(frozen=True)
class GripperAction:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    da: float = 0.0
    db: float = 0.0
    dc: float = 0.0

    @classmethod
    def from_array(cls, a) -> "GripperAction":
        a = np.asarray(a, dtype=float)
        if a.shape == (4,):  # (dx, dy, dz, dc) top-down mode
            return cls(a[0], a[1], a[2], 0.0, 0.0, a[3])
        return cls(*a)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.da, self.db, self.dc])


def step_gripper(world: WorldState, action: GripperAction, dof: int = 6) -> WorldState:
    """Apply a clamped pose delta; tool tip is clamped to the workspace box."""
    if is_grasp_initiated(world):
        raise RuntimeError("gripper cannot move after grasp initiation")
    cfg = world.config
    g = world.gripper
    a = action.as_array()
    lim = np.array([cfg.max_step_pos] * 3 + [cfg.max_step_rot] * 3)
    clipped = np.clip(a, -lim, lim)
    clamps = int(np.any(clipped != a))
    pos = np.asarray(g.tooltip) + clipped[:3]
    bounded = np.clip(pos, cfg.workspace_lo, cfg.workspace_hi)
    clamps += int(np.any(bounded != pos))
    R = g.rotation
    if dof == 4:
        R_new = geometry.rot_z(clipped[5]) @ R
    elif dof == 6:
        R_new = R @ geometry.quat_to_matrix(geometry.euler_to_quat(clipped[3:]))
    else:
        raise ValueError(f"dof must be 4 or 6, got {dof}")
    q = geometry.normalize_quat(geometry.matrix_to_quat(R_new))
    grip = replace(g, tooltip=tuple(float(v) for v in bounded), orientation=tuple(float(v) for v in q))
    return replace(world, gripper=grip, step_count=world.step_count + 1,
                   clamp_events=world.clamp_events + clamps)


def is_grasp_initiated(world: WorldState) -> bool:
    return world.gripper.tooltip[2] < world.config.z_initiate


@dataclass(frozen=True)
class GraspOutcome:
    initiated: bool
    lifted: bool
    grasped_object: int | None
    tooltip_at_initiation: tuple | None


def capture_offsets(world: WorldState, obj: SceneObject):
    """(radial, axial) offset of an object centroid relative to the tool axis."""
    g = world.gripper
    axis = g.approach_axis
    w = np.asarray(obj.position) - np.asarray(g.tooltip)
    axial = float(w @ axis)
    radial = float(np.linalg.norm(w - axial * axis))
    return radial, axial


def attempt_grasp(world: WorldState) -> GraspOutcome:
    """Pick the in-cylinder object nearest the tool axis (lowest id breaks ties)."""
    if not is_grasp_initiated(world):
        raise RuntimeError("attempt_grasp requires an initiated grasp")
    cfg = world.config
    best = None
    for obj in world.objects:
        radial, axial = capture_offsets(world, obj)
        if radial <= cfg.capture_radius and abs(axial) <= cfg.capture_half_height \
                and obj.min_dimension < world.gripper.opening:
            if best is None or (radial, obj.id) < best:
                best = (radial, obj.id)
    tip = tuple(world.gripper.tooltip)
    if best is None:
        return GraspOutcome(True, False, None, tip)
    return GraspOutcome(True, True, best[1], tip)
