"""The camera-carrying head: a 6R serial arm.

Forward kinematics from a standard Denavit-Hartenberg table, a geometric
Jacobian, damped-least-squares inverse kinematics and the fixation-sphere
viewpoint sampler that yields the joint vector ``v`` fed to the encoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from apr import geometry
from apr.raycam import CameraPose, look_at_matrix


class IKError(RuntimeError):
    """IK did not converge; ``residual`` holds the final (position, angle) error."""

    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


# rows: (a, alpha, d, theta_offset), standard DH
DEFAULT_DH = (
    (0.0, np.pi / 2, 0.25, 0.0),
    (-0.80, 0.0, 0.0, 0.0),
    (-0.75, 0.0, 0.0, 0.0),
    (0.0, np.pi / 2, 0.12, 0.0),
    (0.0, -np.pi / 2, 0.10, 0.0),
    (0.0, 0.0, 0.08, 0.0),
)


@dataclass(frozen=True)
class DHChain:
    dh: tuple = DEFAULT_DH
    base_position: tuple = (-0.6, 0.0, 0.9)
    base_yaw: float = 0.0

    def __post_init__(self):
        if len(self.dh) != 6:
            raise ValueError(f"head chain needs 6 joints, got {len(self.dh)}")
        object.__setattr__(self, "dh", tuple(tuple(float(x) for x in row) for row in self.dh))

    @property
    def base(self) -> np.ndarray:
        return geometry.homogeneous(geometry.rot_z(self.base_yaw), self.base_position)


# flange +z is the optical axis; camera frame looks down its own -z
_TOOL = np.diag([1.0, -1.0, -1.0, 1.0])


def _dh_transform(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def joint_frames(chain: DHChain, q) -> list[np.ndarray]:
    """Frames 0..6 in world coordinates (frame 0 is the base)."""
    T = chain.base
    frames = [T]
    for (a, alpha, d, off), qi in zip(chain.dh, q):
        T = T @ _dh_transform(a, alpha, d, qi + off)
        frames.append(T)
    return frames


def fk_matrix(chain: DHChain, q) -> np.ndarray:
    return joint_frames(chain, q)[-1] @ _TOOL


def fk(chain: DHChain, q, fov_y=np.deg2rad(60.0), resolution=256) -> CameraPose:
    T = fk_matrix(chain, q)
    return CameraPose(T[:3, 3].copy(), geometry.matrix_to_quat(T[:3, :3]), fov_y, resolution)


def _jacobian_from_frames(frames) -> np.ndarray:
    F = np.stack(frames[:6])
    z = F[:, :3, 2]
    r = frames[-1][:3, 3] - F[:, :3, 3]
    lin = np.stack([
        z[:, 1] * r[:, 2] - z[:, 2] * r[:, 1],
        z[:, 2] * r[:, 0] - z[:, 0] * r[:, 2],
        z[:, 0] * r[:, 1] - z[:, 1] * r[:, 0],
    ])
    return np.vstack([lin, z.T])


def jacobian(chain: DHChain, q) -> np.ndarray:
    """6x6 geometric Jacobian, rows (linear; angular) in the world frame.

    The camera shares the flange origin, so this is also the camera Jacobian.
    """
    return _jacobian_from_frames(joint_frames(chain, q))


def pose_error(T_target: np.ndarray, T: np.ndarray) -> np.ndarray:
    dp = T_target[:3, 3] - T[:3, 3]
    dw = geometry.rotation_log(T_target[:3, :3] @ T[:3, :3].T)
    return np.concatenate([dp, dw])


def ik(chain: DHChain, target, seed, *, damping=0.05, max_iter=200,
       tol=1e-9, accept=1e-3):
    """Damped least squares toward a camera pose (``CameraPose`` or 4x4 matrix).

    The damping adapts to progress: it shrinks after an accepted step and
    grows when a step fails to reduce the residual. Raises :class:`IKError`
    when the position/orientation residual is above ``accept`` after
    ``max_iter`` iterations.
    """
    if isinstance(target, CameraPose):
        T_target = geometry.homogeneous(target.rotation, target.position)
    else:
        T_target = np.asarray(target, dtype=float)
    q = np.array(seed, dtype=float)
    frames = joint_frames(chain, q)
    e = pose_error(T_target, frames[-1] @ _TOOL)
    err = np.linalg.norm(e)
    lam = damping
    for _ in range(max_iter):
        if err < tol:
            break
        J = _jacobian_from_frames(frames)
        dq = J.T @ np.linalg.solve(J @ J.T + lam * lam * np.eye(6), e)
        q_new = q + dq
        frames_new = joint_frames(chain, q_new)
        e_new = pose_error(T_target, frames_new[-1] @ _TOOL)
        err_new = np.linalg.norm(e_new)
        if err_new < err:
            q, e, err, frames = q_new, e_new, err_new, frames_new
            lam = max(lam * 0.5, 1e-6)
        else:
            lam = min(lam * 4.0, 10.0)
    q = geometry.wrap_angle(q)
    res = (float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:])))
    if res[0] > accept or res[1] > accept:
        raise IKError(f"ik did not converge: residual pos={res[0]:.3g} m rot={res[1]:.3g} rad", res)
    return q


@dataclass(frozen=True)
class ViewRanges:
    yaw: tuple = (-np.pi, np.pi)
    pitch: tuple = (np.deg2rad(30.0), np.deg2rad(65.0))
    distance: tuple = (0.4, 0.7)


@dataclass(frozen=True)
class ViewSpec:
    fixation: np.ndarray
    camera: CameraPose
    joints: np.ndarray
    yaw: float
    pitch: float
    distance: float


def camera_target(fixation, yaw, pitch, distance) -> np.ndarray:
    """4x4 camera pose on the fixation sphere, looking at the fixation point."""
    fixation = np.asarray(fixation, dtype=float)
    offset = distance * np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)])
    eye = fixation + offset
    return geometry.homogeneous(look_at_matrix(eye, fixation), eye)


def seed_guesses(chain: DHChain, T_target: np.ndarray):
    """A few elbow/wrist configurations with the base joint aimed at the target."""
    p = np.linalg.solve(chain.base, np.append(T_target[:3, 3], 1.0))[:3]
    j1 = np.arctan2(p[1], p[0])
    for base in (j1 + np.pi, j1):
        for elbow in ((-0.6, 1.6, -2.5), (-2.4, -1.6, -0.6)):
            yield np.array([base, elbow[0], elbow[1], elbow[2], -np.pi / 2, 0.0])


@dataclass
class HeadSampler:
    """Samples fixation-aligned viewpoints and solves the head joints for them."""
    chain: DHChain = field(default_factory=DHChain)
    ranges: ViewRanges = field(default_factory=ViewRanges)
    fov_y: float = np.deg2rad(60.0)
    resolution: int = 256
    ik_tol: float = 1e-3
    max_tries: int = 20
    attempts: int = 0
    failures: int = 0

    def solve(self, T_target, seed=None):
        seeds = ([np.asarray(seed)] if seed is not None else []) + list(seed_guesses(self.chain, T_target))
        last = None
        for s in seeds:
            self.attempts += 1
            try:
                return ik(self.chain, T_target, s, accept=self.ik_tol)
            except IKError as exc:
                self.failures += 1
                last = exc
        raise last

    def sample(self, fixation, rng: np.random.Generator, seed=None) -> ViewSpec:
        fixation = np.asarray(fixation, dtype=float)
        last = None
        for _ in range(self.max_tries):
            yaw = rng.uniform(*self.ranges.yaw)
            pitch = rng.uniform(*self.ranges.pitch)
            dist = rng.uniform(*self.ranges.distance)
            T = camera_target(fixation, yaw, pitch, dist)
            try:
                q = self.solve(T, seed)
            except IKError as exc:
                last = exc
                continue
            cam = fk(self.chain, q, self.fov_y, self.resolution)
            return ViewSpec(fixation, cam, q, yaw, pitch, dist)
        raise IKError(f"no reachable viewpoint around fixation {fixation.tolist()} "
                      f"after {self.max_tries} tries", None if last is None else last.residual)
