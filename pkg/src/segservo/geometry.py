"""Rigid transforms and small rotation helpers.

Frames follow the usual robotics convention: a Pose maps points from its
own (child) frame into the parent frame, p_parent = R @ p_child + t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-6


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise ValueError("rotation axis must be non-zero")
    x, y, z = a / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic roll-pitch-yaw: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    rx = rotation_about_axis(np.array([1.0, 0.0, 0.0]), roll)
    ry = rotation_about_axis(np.array([0.0, 1.0, 0.0]), pitch)
    rz = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw)
    return rz @ ry @ rx


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation matrix via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid transform: 3x3 rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must have shape (3,), got {t.shape}")
        if np.abs(r @ r.T - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation matrix is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation matrix must be proper (det +1)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_xyz_rpy(xyz, rpy) -> "Pose":
        roll, pitch, yaw = (float(v) for v in rpy)
        return Pose(rotation_from_rpy(roll, pitch, yaw), np.asarray(xyz, dtype=np.float64))

    def compose(self, other: "Pose") -> "Pose":
        """self then other: the returned pose maps other's frame to self's parent."""
        return Pose(
            orthonormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt.copy(), -(rt @ self.translation))

    def transform_point(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return self.rotation @ p + self.translation

    def transform_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation
