"""Small rigid-body helpers shared by the renderer, the head arm and the gripper.

Quaternions are stored scalar-last, ``(x, y, z, w)``, matching
:class:`scipy.spatial.transform.Rotation`.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def quat_to_matrix(q) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    # canonical sign keeps serialized snapshots stable
    return -q if q[3] < 0 else q


def quat_mul(a, b) -> np.ndarray:
    return (Rotation.from_quat(a) * Rotation.from_quat(b)).as_quat()


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def euler_to_quat(angles) -> np.ndarray:
    """Extrinsic x-y-z Euler angles ``(a, b, c)`` to a quaternion."""
    return Rotation.from_euler("xyz", angles).as_quat()


def quat_to_euler(q) -> np.ndarray:
    return Rotation.from_quat(q).as_euler("xyz")


def yaw_quat(yaw: float) -> np.ndarray:
    return np.array([0.0, 0.0, np.sin(yaw / 2), np.cos(yaw / 2)])


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    if cos > 0.99:
        # small angle: skew part is accurate, avoids the arccos cancellation
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        s = np.linalg.norm(w)
        return w if s < 1e-12 else w * (np.arcsin(min(s, 1.0)) / s)
    return Rotation.from_matrix(R).as_rotvec()


def homogeneous(R: np.ndarray, p) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def wrap_angle(x):
    """Wrap angles to ``[-pi, pi)``."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi
