"""Simulated world: kinematic chains, pinhole cameras, and silhouettes.

World frame convention: x forward, y left, z up, floor at z = 0.
Camera frame convention (optical): x right, y down, z forward along the
boresight.  A world point p projects to pixel

    (u, v) = (cx, cy) + focal * (p_cam.x, p_cam.y) / p_cam.z

with (cx, cy) the principal point in the pixel grid of masks.py (origin
at the top-left pixel center).  Silhouette rendering casts one ray per
pixel center and marks the pixel foreground when the ray hits the solid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BehindCameraError,
    LimitViolationError,
    MissingJointError,
    UnknownObjectError,
)
from .geometry import Pose, orthonormalize, rotation_about_axis
from .masks import BinaryMask

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class Joint:
    """One degree of freedom: a rotation or translation about a fixed axis.

    origin is the fixed transform from the previous link frame to this
    joint's frame; the joint motion is applied after it.
    """

    name: str
    kind: str
    axis: np.ndarray
    limits: Tuple[float, float]
    origin: Pose = field(default_factory=Pose.identity)

    def __post_init__(self) -> None:
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        a = np.array(self.axis, dtype=np.float64)
        if a.shape != (3,) or not np.linalg.norm(a) > 0.0:
            raise ValueError("joint axis must be a non-zero 3-vector")
        a = a / np.linalg.norm(a)
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ValueError(f"joint {self.name}: limits must satisfy lo < hi")
        object.__setattr__(self, "limits", (lo, hi))

    def motion(self, value: float) -> Pose:
        if self.kind == REVOLUTE:
            return Pose(rotation_about_axis(self.axis, value), np.zeros(3))
        return Pose(np.eye(3), self.axis * value)


@dataclass(frozen=True)
class KinematicChain:
    """Ordered joints from the world frame out to a tool (camera) frame."""

    name: str
    joints: Tuple[Joint, ...]
    tool: Pose = field(default_factory=Pose.identity)

    def __post_init__(self) -> None:
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ValueError(f"chain {self.name}: duplicate joint names")
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def joint_names(self) -> Tuple[str, ...]:
        return tuple(j.name for j in self.joints)


def forward_kinematics(chain: KinematicChain, q: Mapping[str, float]) -> Pose:
    """Tool pose in the world frame for joint state q.

    Raises MissingJointError when q lacks a chain joint and
    LimitViolationError when a value is outside its limits.
    """
    pose = Pose.identity()
    for joint in chain.joints:
        if joint.name not in q:
            raise MissingJointError(f"no value for joint {joint.name!r}")
        value = float(q[joint.name])
        lo, hi = joint.limits
        if not (lo <= value <= hi):
            raise LimitViolationError(
                f"joint {joint.name!r} value {value} outside [{lo}, {hi}]"
            )
        pose = pose.compose(joint.origin).compose(joint.motion(value))
    pose = pose.compose(chain.tool)
    return Pose(orthonormalize(pose.rotation), pose.translation)


def clamp_to_limits(
    chain: KinematicChain, q: Mapping[str, float]
) -> Tuple[Dict[str, float], List[str]]:
    """Clamp chain joints to their limits; returns (state, clamped names)."""
    out = dict(q)
    clamped: List[str] = []
    for joint in chain.joints:
        if joint.name not in out:
            continue
        lo, hi = joint.limits
        v = float(out[joint.name])
        c = min(max(v, lo), hi)
        if c != v:
            clamped.append(joint.name)
        out[joint.name] = c
    return out, clamped


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics over the integer pixel grid."""

    focal: float
    width: int
    height: int
    cx: float
    cy: float

    @staticmethod
    def centered(focal: float, width: int, height: int) -> "CameraModel":
        return CameraModel(
            focal=float(focal),
            width=int(width),
            height=int(height),
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
        )


def project_point(camera: CameraModel, camera_pose: Pose, point) -> Tuple[float, float]:
    """Pixel (u, v) of a world point; BehindCameraError when z_cam <= 0."""
    p_cam = camera_pose.inverse().transform_point(point)
    if p_cam[2] <= 0.0:
        raise BehindCameraError(f"point has camera depth {p_cam[2]}")
    u = camera.cx + camera.focal * p_cam[0] / p_cam[2]
    v = camera.cy + camera.focal * p_cam[1] / p_cam[2]
    return float(u), float(v)


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Box:
    """Axis-aligned in its own frame; half_extents are half side lengths."""

    half_extents: Tuple[float, float, float]


@dataclass(frozen=True)
class Disk:
    """Flat circular plate in its own x-y plane (normal +z)."""

    radius: float


Shape = Union[Sphere, Box, Disk]


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    shape: Shape
    pose: Pose


@dataclass(frozen=True)
class Scene:
    """Static world description: chains, cameras, and rigid objects."""

    chains: Dict[str, KinematicChain]
    cameras: Dict[str, CameraModel]
    camera_chain: Dict[str, str]
    objects: Tuple[SceneObject, ...]

    def get_object(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise UnknownObjectError(f"no object with id {object_id!r}")

    def replace_object(self, updated: SceneObject) -> "Scene":
        found = False
        objs = []
        for obj in self.objects:
            if obj.object_id == updated.object_id:
                objs.append(updated)
                found = True
            else:
                objs.append(obj)
        if not found:
            raise UnknownObjectError(f"no object with id {updated.object_id!r}")
        return Scene(self.chains, self.cameras, self.camera_chain, tuple(objs))


_RAY_CACHE: Dict[CameraModel, np.ndarray] = {}


def _pixel_rays(camera: CameraModel) -> np.ndarray:
    """Unit ray directions through every pixel center, camera frame, (H*W, 3)."""
    rays = _RAY_CACHE.get(camera)
    if rays is None:
        us = (np.arange(camera.width) - camera.cx) / camera.focal
        vs = (np.arange(camera.height) - camera.cy) / camera.focal
        gu, gv = np.meshgrid(us, vs)
        d = np.stack([gu, gv, np.ones_like(gu)], axis=-1).reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d.flags.writeable = False
        rays = d
        _RAY_CACHE[camera] = rays
    return rays


def _hits_sphere(origin, dirs, sphere: Sphere, pose: Pose) -> np.ndarray:
    oc = pose.translation - origin
    proj = dirs @ oc
    t = np.clip(proj, 0.0, None)
    dist2 = (oc @ oc) - 2.0 * t * proj + t * t
    return dist2 <= sphere.radius * sphere.radius


def _hits_box(origin, dirs, box: Box, pose: Pose) -> np.ndarray:
    inv = pose.inverse()
    o = inv.transform_point(origin)
    d = dirs @ inv.rotation.T
    h = np.asarray(box.half_extents, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
    zero = d == 0.0
    inside = np.abs(o) <= h
    near = np.where(zero, np.where(inside, -np.inf, np.inf), near)
    far = np.where(zero, np.where(inside, np.inf, -np.inf), far)
    tmin = near.max(axis=1)
    tmax = far.min(axis=1)
    return tmax >= np.maximum(tmin, 0.0)


def _hits_disk(origin, dirs, disk: Disk, pose: Pose) -> np.ndarray:
    normal = pose.rotation[:, 2]
    denom = dirs @ normal
    num = (pose.translation - origin) @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    valid = (denom != 0.0) & (t > 0.0)
    with np.errstate(invalid="ignore"):
        pts = origin + dirs * t[:, None]
        r2 = np.sum((pts - pose.translation) ** 2, axis=1)
    return valid & (r2 <= disk.radius * disk.radius)


def render_silhouette(
    camera: CameraModel, camera_pose: Pose, obj: SceneObject
) -> BinaryMask:
    """Exact per-pixel silhouette of one object, no occlusion handling."""
    dirs_cam = _pixel_rays(camera)
    dirs = dirs_cam @ camera_pose.rotation.T
    origin = camera_pose.translation
    if isinstance(obj.shape, Sphere):
        hit = _hits_sphere(origin, dirs, obj.shape, obj.pose)
    elif isinstance(obj.shape, Box):
        hit = _hits_box(origin, dirs, obj.shape, obj.pose)
    elif isinstance(obj.shape, Disk):
        hit = _hits_disk(origin, dirs, obj.shape, obj.pose)
    else:
        raise TypeError(f"unsupported shape {type(obj.shape).__name__}")
    return BinaryMask(hit.reshape(camera.height, camera.width))


def camera_pose_for(
    scene: Scene, camera_name: str, q: Mapping[str, float]
) -> Pose:
    chain = scene.chains[scene.camera_chain[camera_name]]
    return forward_kinematics(chain, q)
