"""Pinhole raycasting renderer over analytic primitives.

Camera frame convention: x right, y up, the camera looks down its -z axis.
Pixel coordinates are continuous with (0, 0) at the top-left corner of the
image, so the image center of an ``S``-pixel image sits at ``(S/2, S/2)``
and pixel ``(i, j)`` is sampled by the ray through ``(j + 0.5, i + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from apr import geometry

BACKGROUND_ID = 0
GRIPPER_ID = 255

LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
AMBIENT = 0.35
DIFFUSE = 0.65
BACKGROUND_RGB = np.array([0.55, 0.62, 0.70])
TRAY_RGB = np.array([0.45, 0.36, 0.28])
GRIPPER_RGB = np.array([0.85, 0.85, 0.88])

# object albedo palette, indexed by an object's color index
PALETTE = np.array([
    [0.90, 0.20, 0.15],
    [0.20, 0.70, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.80, 0.15],
    [0.75, 0.25, 0.80],
    [0.15, 0.80, 0.80],
    [0.95, 0.55, 0.15],
    [0.60, 0.60, 0.60],
])


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    orientation: np.ndarray  # quaternion (x, y, z, w)
    fov_y: float = np.deg2rad(60.0)
    resolution: int = 256

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"camera quaternion norm {np.linalg.norm(q):.8f} is not 1")
        if not 0.0 < self.fov_y < np.pi:
            raise ValueError(f"fov_y={self.fov_y} outside (0, pi)")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", q)

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation; columns are the camera axes in world frame."""
        return geometry.quat_to_matrix(self.orientation)

    @property
    def focal(self) -> float:
        return 0.5 * self.resolution / np.tan(0.5 * self.fov_y)

    @property
    def optical_axis(self) -> np.ndarray:
        return -self.rotation[:, 2]

    def with_resolution(self, resolution: int) -> "CameraPose":
        return CameraPose(self.position, self.orientation, self.fov_y, resolution)


def look_at_matrix(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    up = np.asarray(up, dtype=float)
    fwd = target - eye
    dist = np.linalg.norm(fwd)
    if dist < 1e-12:
        raise ValueError("look_at: eye and target coincide")
    fwd = fwd / dist
    x = np.cross(fwd, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9 * max(np.linalg.norm(up), 1e-300):
        raise ValueError(f"look_at: up vector {up.tolist()} is parallel to the view direction")
    x = x / nx
    y = np.cross(x, fwd)
    return np.column_stack([x, y, -fwd])


def look_at(eye, target, up=(0.0, 0.0, 1.0), fov_y: float = np.deg2rad(60.0),
            resolution: int = 256) -> CameraPose:
    R = look_at_matrix(eye, target, up)
    return CameraPose(np.asarray(eye, dtype=float), geometry.matrix_to_quat(R), fov_y, resolution)


def project(point, cam: CameraPose):
    """Project a world point to continuous pixel coordinates.

    Returns ``(px, py, in_front)``; points on or behind the camera plane give
    ``in_front=False`` and NaN-free placeholder coordinates ``(-1, -1)``.
    """
    pc = cam.rotation.T @ (np.asarray(point, dtype=float) - cam.position)
    depth = -pc[2]
    if depth <= 1e-12:
        return -1.0, -1.0, False
    c = 0.5 * cam.resolution
    f = cam.focal
    return c + f * pc[0] / depth, c - f * pc[1] / depth, True


def camera_rays(cam: CameraPose):
    """Unit ray directions (S*S, 3) in world frame, row-major over pixels."""
    S = cam.resolution
    c = 0.5 * S
    f = cam.focal
    centers = np.arange(S) + 0.5
    xs = (centers - c) / f
    ys = (c - centers) / f
    X, Y = np.meshgrid(xs, ys)
    d_cam = np.stack([X.ravel(), Y.ravel(), -np.ones(S * S)], axis=1)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    return d_cam @ cam.rotation.T


# --------------------------------------------------------------------------
# primitives

@dataclass(frozen=True)
class Primitive:
    """An analytic shape in its own local frame, placed by ``position``/``rotation``.

    kind: ``sphere`` (size = (radius,)), ``box`` (size = half extents) or
    ``cylinder`` (size = (radius, half height), axis along local z).
    """
    kind: str
    size: tuple
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    instance: int = BACKGROUND_ID
    albedo: np.ndarray = field(default_factory=lambda: TRAY_RGB)


def _intersect_sphere(o, d, radius):
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - radius * radius
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, t1)
    hit &= t > 1e-9
    p = o + t[:, None] * d
    n = p / radius
    return np.where(hit, t, np.inf), n


def _intersect_box(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    tmin_axes = []
    tmax_axes = []
    for k in range(3):
        t1 = (-half[k] - o[:, k]) * inv[:, k]
        t2 = (half[k] - o[:, k]) * inv[:, k]
        # rays parallel to a slab: inside -> unbounded, outside -> empty
        par = d[:, k] == 0.0
        if par.any():
            inside = np.abs(o[:, k]) <= half[k]
            t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
            t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tmin_axes.append(np.minimum(t1, t2))
        tmax_axes.append(np.maximum(t1, t2))
    tnear = np.maximum(np.maximum(tmin_axes[0], tmin_axes[1]), tmin_axes[2])
    tfar = np.minimum(np.minimum(tmax_axes[0], tmax_axes[1]), tmax_axes[2])
    axis = np.where(tmin_axes[0] >= tnear, 0, np.where(tmin_axes[1] >= tnear, 1, 2))
    hit = (tnear <= tfar) & (tnear > 1e-9)
    n = np.zeros_like(o)
    rows = np.arange(len(o))
    n[rows, axis] = -np.sign(d[rows, axis])
    return np.where(hit, tnear, np.inf), n


def _intersect_cylinder(o, d, radius, half_h):
    # lateral surface
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius * radius
    disc = b * b - a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = np.where(ok, (-b - sq) / np.where(ok, a, 1.0), np.inf)
    z_side = o[:, 2] + t_side * d[:, 2]
    side_hit = ok & (t_side > 1e-9) & (np.abs(z_side) <= half_h)
    t_side = np.where(side_hit, t_side, np.inf)
    # caps
    with np.errstate(divide="ignore", invalid="ignore"):
        tz = np.where(d[:, 2] < 0, (half_h - o[:, 2]) / d[:, 2], (-half_h - o[:, 2]) / d[:, 2])
    tz = np.where(np.isfinite(tz), tz, np.inf)
    px = o[:, 0] + tz * d[:, 0]
    py = o[:, 1] + tz * d[:, 1]
    cap_hit = (tz > 1e-9) & (px * px + py * py <= radius * radius)
    t_cap = np.where(cap_hit, tz, np.inf)
    use_cap = t_cap < t_side
    t = np.where(use_cap, t_cap, t_side)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n_side = np.stack([p[:, 0], p[:, 1], np.zeros(len(o))], axis=1) / radius
    n_cap = np.zeros_like(o)
    n_cap[:, 2] = -np.sign(d[:, 2])
    n = np.where(use_cap[:, None], n_cap, n_side)
    return t, n


def bounding_radius(prim: Primitive) -> float:
    if prim.kind == "sphere":
        return prim.size[0]
    if prim.kind == "box":
        return float(np.linalg.norm(prim.size))
    return float(np.hypot(prim.size[0], prim.size[1]))


def intersect(prim: Primitive, origin: np.ndarray, dirs: np.ndarray):
    """Ray distances (inf for miss) and world-frame normals for one primitive.

    Only rays that hit the primitive's bounding sphere are intersected exactly.
    """
    t = np.full(len(dirs), np.inf)
    normals = np.zeros_like(dirs)
    oc = origin - prim.position
    rb = bounding_radius(prim) * (1 + 1e-9)
    b = dirs @ oc
    disc = b * b - (oc @ oc - rb * rb)
    cand = np.nonzero((disc >= 0) & (-b + np.sqrt(np.maximum(disc, 0.0)) > 0))[0]
    if len(cand) == 0:
        return t, normals
    tc, nc = _intersect_local(prim, oc, dirs[cand])
    t[cand] = tc
    normals[cand] = nc
    return t, normals


def _intersect_local(prim: Primitive, oc: np.ndarray, dirs: np.ndarray):
    R = prim.rotation
    o = np.broadcast_to(oc @ R, dirs.shape)  # world -> local
    d = dirs @ R
    if prim.kind == "sphere":
        t, n = _intersect_sphere(o, d, prim.size[0])
    elif prim.kind == "box":
        t, n = _intersect_box(o, d, prim.size)
    elif prim.kind == "cylinder":
        t, n = _intersect_cylinder(o, d, prim.size[0], prim.size[1])
    else:
        raise ValueError(f"unknown primitive kind {prim.kind!r}")
    return t, n @ R.T


@dataclass
class RenderOutput:
    rgb: np.ndarray       # (S, S, 3) in [0, 1]
    depth: np.ndarray     # (S, S), +inf on miss
    instance: np.ndarray  # (S, S) int, 0 = background / tray


def shade(albedo, normals):
    lam = np.clip(normals @ LIGHT_DIR, 0.0, None)
    return np.clip(np.asarray(albedo)[None, :] * (AMBIENT + DIFFUSE * lam)[:, None], 0.0, 1.0)


def render_primitives(prims, cam: CameraPose) -> RenderOutput:
    S = cam.resolution
    dirs = camera_rays(cam)
    n_rays = len(dirs)
    depth = np.full(n_rays, np.inf)
    inst = np.zeros(n_rays, dtype=np.int64)
    normals = np.zeros((n_rays, 3))
    which = np.full(n_rays, -1)
    for k, prim in enumerate(prims):
        t, n = intersect(prim, cam.position, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        which = np.where(closer, k, which)
        normals[closer] = n[closer]
    rgb = np.tile(BACKGROUND_RGB, (n_rays, 1))
    for k, prim in enumerate(prims):
        sel = which == k
        if sel.any():
            rgb[sel] = shade(prim.albedo, normals[sel])
            inst[sel] = prim.instance
    return RenderOutput(rgb.reshape(S, S, 3), depth.reshape(S, S), inst.reshape(S, S))


def render(world, cam: CameraPose) -> RenderOutput:
    """Render a world state (anything exposing ``primitives()``) from ``cam``."""
    return render_primitives(world.primitives(), cam)
