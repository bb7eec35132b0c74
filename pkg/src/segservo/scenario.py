"""Config files: a scene description plus a scenario to run against it.

Both files are TOML.  The scene file declares cameras, kinematic
chains, and rigid objects.  The scenario file names the operation to
run (learn, servo_step, approach_depth, grasp, trials), points at a
scene file (relative paths resolve against the scenario file), and
holds the operation's parameters.  All validation errors surface as
ConfigError so the command line can report them as usage problems.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .errors import ConfigError
from .geometry import Pose
from .perception import NoiseModel
from .scene import (
    Box,
    CameraModel,
    Disk,
    Joint,
    KinematicChain,
    Scene,
    SceneObject,
    Sphere,
)

KIND_LEARN = "learn"
KIND_SERVO_STEP = "servo_step"
KIND_APPROACH = "approach_depth"
KIND_GRASP = "grasp"
KIND_TRIALS = "trials"
KINDS = (KIND_LEARN, KIND_SERVO_STEP, KIND_APPROACH, KIND_GRASP, KIND_TRIALS)

DEFAULT_TARGET = (320.0, 240.0)
GRASP_TARGET = (220.0, 240.0)


def _require(table: Mapping, key: str, context: str):
    if key not in table:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return table[key]


def _as_float(value, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context}: expected an integer, got {value!r}")
    return int(value)


def _as_vec(value, length: int, context: str) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"{context}: expected a list of {length} numbers")
    return tuple(_as_float(v, context) for v in value)


def _pose_from(table: Mapping, context: str, xyz_key="xyz", rpy_key="rpy") -> Pose:
    xyz = _as_vec(table.get(xyz_key, [0.0, 0.0, 0.0]), 3, f"{context}.{xyz_key}")
    rpy = _as_vec(table.get(rpy_key, [0.0, 0.0, 0.0]), 3, f"{context}.{rpy_key}")
    return Pose.from_xyz_rpy(xyz, rpy)


def _load_toml(path: Path) -> Dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _build_shape(table: Mapping, context: str):
    kind = _require(table, "shape", context)
    if kind == "sphere":
        r = _as_float(_require(table, "radius", context), f"{context}.radius")
        if r <= 0:
            raise ConfigError(f"{context}: radius must be positive")
        return Sphere(r)
    if kind == "box":
        he = _as_vec(
            _require(table, "half_extents", context), 3, f"{context}.half_extents"
        )
        if min(he) <= 0:
            raise ConfigError(f"{context}: half_extents must be positive")
        return Box(he)
    if kind == "disk":
        r = _as_float(_require(table, "radius", context), f"{context}.radius")
        if r <= 0:
            raise ConfigError(f"{context}: radius must be positive")
        return Disk(r)
    raise ConfigError(f"{context}: unknown shape {kind!r}")


def load_scene(path) -> Scene:
    """Parse a scene TOML file into a Scene."""
    path = Path(path)
    data = _load_toml(path)

    chains: Dict[str, KinematicChain] = {}
    for name, chain_tbl in data.get("chains", {}).items():
        ctx = f"chains.{name}"
        joints = []
        for i, joint_tbl in enumerate(chain_tbl.get("joints", [])):
            jctx = f"{ctx}.joints[{i}]"
            try:
                joints.append(
                    Joint(
                        name=str(_require(joint_tbl, "name", jctx)),
                        kind=str(_require(joint_tbl, "kind", jctx)),
                        axis=np.array(
                            _as_vec(_require(joint_tbl, "axis", jctx), 3, jctx)
                        ),
                        limits=tuple(
                            _as_vec(_require(joint_tbl, "limits", jctx), 2, jctx)
                        ),
                        origin=_pose_from(
                            joint_tbl, jctx, "origin_xyz", "origin_rpy"
                        ),
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"{jctx}: {exc}") from exc
        if not joints:
            raise ConfigError(f"{ctx}: chain has no joints")
        tool = _pose_from(chain_tbl, ctx, "tool_xyz", "tool_rpy")
        try:
            chains[name] = KinematicChain(name=name, joints=tuple(joints), tool=tool)
        except ValueError as exc:
            raise ConfigError(f"{ctx}: {exc}") from exc

    cameras: Dict[str, CameraModel] = {}
    camera_chain: Dict[str, str] = {}
    for name, cam_tbl in data.get("cameras", {}).items():
        ctx = f"cameras.{name}"
        focal = _as_float(_require(cam_tbl, "focal", ctx), f"{ctx}.focal")
        width = _as_int(_require(cam_tbl, "width", ctx), f"{ctx}.width")
        height = _as_int(_require(cam_tbl, "height", ctx), f"{ctx}.height")
        if focal <= 0 or width <= 0 or height <= 0:
            raise ConfigError(f"{ctx}: focal, width, height must be positive")
        chain_name = str(_require(cam_tbl, "chain", ctx))
        if chain_name not in chains:
            raise ConfigError(f"{ctx}: unknown chain {chain_name!r}")
        cx = _as_float(cam_tbl.get("cx", (width - 1) / 2.0), f"{ctx}.cx")
        cy = _as_float(cam_tbl.get("cy", (height - 1) / 2.0), f"{ctx}.cy")
        cameras[name] = CameraModel(
            focal=focal, width=width, height=height, cx=cx, cy=cy
        )
        camera_chain[name] = chain_name

    if not cameras:
        raise ConfigError(f"{path}: scene declares no cameras")

    objects: List[SceneObject] = []
    for i, obj_tbl in enumerate(data.get("objects", [])):
        ctx = f"objects[{i}]"
        obj_id = str(_require(obj_tbl, "id", ctx))
        shape = _build_shape(obj_tbl, ctx)
        pose = _pose_from(obj_tbl, ctx)
        objects.append(SceneObject(object_id=obj_id, shape=shape, pose=pose))
    ids = [o.object_id for o in objects]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate object ids")

    return Scene(
        chains=chains,
        cameras=cameras,
        camera_chain=camera_chain,
        objects=tuple(objects),
    )


@dataclass(frozen=True)
class ServoSettings:
    """Servo behavior parameters shared by every operation."""

    preset: str
    camera: str
    object_id: str
    lam: float = 0.3
    alpha: float = 0.1
    tolerance: float = 5.0
    max_steps: int = 100
    epsilon: float = 1e-9
    seed_value: float = 0.001
    target: Tuple[float, float] = DEFAULT_TARGET


@dataclass(frozen=True)
class LearnSettings:
    max_episodes: int = 5


@dataclass(frozen=True)
class ApproachSettings:
    """Descend-and-observe parameters for depth estimation."""

    joint: str
    step: float
    min_value: float
    max_observations: int = 26
    window: int = 5
    depth_tolerance: float = 0.005
    jacobian: Optional[Path] = None


@dataclass(frozen=True)
class GraspSettings:
    """Grasp pipeline parameters, heights in meters, gripper metric dims."""

    z_gripper: float = 0.25
    separation_m: float = 0.135
    finger_length_m: float = 0.04
    finger_width_m: float = 0.02
    lift: float = 0.15
    retries: int = 2
    grid_step: float = math.pi / 36.0
    capture_radius: float = 0.02
    capture_above: float = 0.01
    capture_below: float = 0.06
    force_failures: int = 0
    jacobian: Optional[Path] = None
    grasp_jacobian: Optional[Path] = None


@dataclass(frozen=True)
class TrialsSettings:
    items: Tuple[str, ...]
    heights: Tuple[float, ...]
    position: Tuple[float, float]
    depth_tolerance: float = 0.01
    jacobian: Optional[Path] = None


@dataclass(frozen=True)
class ServoStepSettings:
    jacobian: Optional[Path]
    placements: Tuple[Dict[str, float], ...]
    learn: bool = False


@dataclass(frozen=True)
class Scenario:
    """One fully-resolved run description."""

    kind: str
    scene_path: Path
    scene: Scene
    seed: int
    out: Optional[Path]
    initial_q: Dict[str, float]
    servo: ServoSettings
    noise: Optional[NoiseModel]
    learn: LearnSettings = field(default_factory=LearnSettings)
    approach: Optional[ApproachSettings] = None
    grasp: Optional[GraspSettings] = None
    trials: Optional[TrialsSettings] = None
    servo_step: Optional[ServoStepSettings] = None


def _parse_servo(table: Mapping, scene: Scene, context: str) -> ServoSettings:
    preset = str(_require(table, "preset", context))
    camera = str(_require(table, "camera", context))
    if camera not in scene.cameras:
        raise ConfigError(f"{context}: unknown camera {camera!r}")
    object_id = str(_require(table, "object", context))
    try:
        scene.get_object(object_id)
    except Exception as exc:
        raise ConfigError(f"{context}: unknown object {object_id!r}") from exc
    cam = scene.cameras[camera]
    default_target = GRASP_TARGET if preset == "base_grasp" else DEFAULT_TARGET
    target = tuple(
        _as_vec(table.get("target", list(default_target)), 2, f"{context}.target")
    )
    if not (0 <= target[0] < cam.width and 0 <= target[1] < cam.height):
        raise ConfigError(f"{context}: target {target} outside the image")
    settings = ServoSettings(
        preset=preset,
        camera=camera,
        object_id=object_id,
        lam=_as_float(table.get("lambda", 0.3), f"{context}.lambda"),
        alpha=_as_float(table.get("alpha", 0.1), f"{context}.alpha"),
        tolerance=_as_float(table.get("tolerance", 5.0), f"{context}.tolerance"),
        max_steps=_as_int(table.get("max_steps", 100), f"{context}.max_steps"),
        epsilon=_as_float(table.get("epsilon", 1e-9), f"{context}.epsilon"),
        seed_value=_as_float(table.get("seed_value", 0.001), f"{context}.seed_value"),
        target=(target[0], target[1]),
    )
    if settings.lam <= 0:
        raise ConfigError(f"{context}: lambda must be positive")
    if settings.alpha <= 0:
        raise ConfigError(f"{context}: alpha must be positive")
    if settings.tolerance <= 0:
        raise ConfigError(f"{context}: tolerance must be positive")
    if settings.max_steps < 1:
        raise ConfigError(f"{context}: max_steps must be at least 1")
    return settings


def _parse_noise(table: Optional[Mapping], seed: int) -> Optional[NoiseModel]:
    if table is None:
        return None
    ctx = "noise"
    try:
        model = NoiseModel(
            seed=seed,
            boundary_px=_as_int(table.get("boundary_px", 0), f"{ctx}.boundary_px"),
            dropout_prob=_as_float(
                table.get("dropout_prob", 0.0), f"{ctx}.dropout_prob"
            ),
            blob_rate=_as_float(table.get("blob_rate", 0.0), f"{ctx}.blob_rate"),
            blob_size=tuple(
                _as_vec(table.get("blob_size", [2.0, 6.0]), 2, f"{ctx}.blob_size")
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc
    return model if model.active else None


def _parse_q(table: Mapping, context: str) -> Dict[str, float]:
    return {str(k): _as_float(v, f"{context}.{k}") for k, v in table.items()}


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario TOML file."""
    path = Path(path)
    data = _load_toml(path)
    base = path.parent

    kind = str(_require(data, "kind", str(path)))
    if kind not in KINDS:
        raise ConfigError(f"{path}: unknown kind {kind!r}; choices: {KINDS}")

    scene_rel = str(_require(data, "scene", str(path)))
    scene_path = _resolve(base, scene_rel)
    scene = load_scene(scene_path)

    seed = _as_int(data.get("seed", 0), "seed")
    out = data.get("out")
    out_path = _resolve(base, str(out)) if out is not None else None

    servo = _parse_servo(_require(data, "servo", str(path)), scene, "servo")
    noise = _parse_noise(data.get("noise"), seed)
    initial_q = _parse_q(data.get("initial_q", {}), "initial_q")

    learn = LearnSettings(
        max_episodes=_as_int(
            data.get("learn", {}).get("max_episodes", 5), "learn.max_episodes"
        )
    )
    if learn.max_episodes < 1:
        raise ConfigError("learn.max_episodes must be at least 1")

    approach = None
    if "approach" in data:
        tbl = data["approach"]
        ctx = "approach"
        approach = ApproachSettings(
            joint=str(_require(tbl, "joint", ctx)),
            step=_as_float(_require(tbl, "step", ctx), f"{ctx}.step"),
            min_value=_as_float(_require(tbl, "min_value", ctx), f"{ctx}.min_value"),
            max_observations=_as_int(
                tbl.get("max_observations", 26), f"{ctx}.max_observations"
            ),
            window=_as_int(tbl.get("window", 5), f"{ctx}.window"),
            depth_tolerance=_as_float(
                tbl.get("depth_tolerance", 0.005), f"{ctx}.depth_tolerance"
            ),
            jacobian=(
                _resolve(base, str(tbl["jacobian"])) if "jacobian" in tbl else None
            ),
        )
        if approach.step == 0.0:
            raise ConfigError(f"{ctx}.step must be non-zero")
        if approach.max_observations < 2:
            raise ConfigError(f"{ctx}.max_observations must be at least 2")
        if approach.window < 2:
            raise ConfigError(f"{ctx}.window must be at least 2")
    elif kind in (KIND_APPROACH, KIND_GRASP, KIND_TRIALS):
        raise ConfigError(f"{path}: kind {kind!r} requires an [approach] table")

    grasp = None
    if "grasp" in data:
        tbl = data["grasp"]
        ctx = "grasp"
        grasp = GraspSettings(
            z_gripper=_as_float(tbl.get("z_gripper", 0.25), f"{ctx}.z_gripper"),
            separation_m=_as_float(
                tbl.get("separation_m", 0.135), f"{ctx}.separation_m"
            ),
            finger_length_m=_as_float(
                tbl.get("finger_length_m", 0.04), f"{ctx}.finger_length_m"
            ),
            finger_width_m=_as_float(
                tbl.get("finger_width_m", 0.02), f"{ctx}.finger_width_m"
            ),
            lift=_as_float(tbl.get("lift", 0.15), f"{ctx}.lift"),
            retries=_as_int(tbl.get("retries", 2), f"{ctx}.retries"),
            grid_step=_as_float(
                tbl.get("grid_step", math.pi / 36.0), f"{ctx}.grid_step"
            ),
            capture_radius=_as_float(
                tbl.get("capture_radius", 0.02), f"{ctx}.capture_radius"
            ),
            capture_above=_as_float(
                tbl.get("capture_above", 0.01), f"{ctx}.capture_above"
            ),
            capture_below=_as_float(
                tbl.get("capture_below", 0.06), f"{ctx}.capture_below"
            ),
            force_failures=_as_int(
                tbl.get("force_failures", 0), f"{ctx}.force_failures"
            ),
            jacobian=(
                _resolve(base, str(tbl["jacobian"])) if "jacobian" in tbl else None
            ),
            grasp_jacobian=(
                _resolve(base, str(tbl["grasp_jacobian"]))
                if "grasp_jacobian" in tbl
                else None
            ),
        )
        if grasp.z_gripper <= 0 or grasp.lift <= 0:
            raise ConfigError(f"{ctx}: z_gripper and lift must be positive")
        if grasp.retries < 0:
            raise ConfigError(f"{ctx}: retries must be non-negative")
        if grasp.grid_step <= 0:
            raise ConfigError(f"{ctx}: grid_step must be positive")
    elif kind == KIND_GRASP:
        raise ConfigError(f"{path}: kind 'grasp' requires a [grasp] table")

    trials = None
    if "trials" in data:
        tbl = data["trials"]
        ctx = "trials"
        items = tuple(str(v) for v in _require(tbl, "items", ctx))
        if not items:
            raise ConfigError(f"{ctx}.items must be non-empty")
        for item in items:
            try:
                scene.get_object(item)
            except Exception as exc:
                raise ConfigError(f"{ctx}: unknown object {item!r}") from exc
        heights = tuple(
            _as_float(v, f"{ctx}.heights") for v in _require(tbl, "heights", ctx)
        )
        if not heights:
            raise ConfigError(f"{ctx}.heights must be non-empty")
        trials = TrialsSettings(
            items=items,
            heights=heights,
            position=tuple(
                _as_vec(_require(tbl, "position", ctx), 2, f"{ctx}.position")
            ),
            depth_tolerance=_as_float(
                tbl.get("depth_tolerance", 0.01), f"{ctx}.depth_tolerance"
            ),
            jacobian=(
                _resolve(base, str(tbl["jacobian"])) if "jacobian" in tbl else None
            ),
        )
    elif kind == KIND_TRIALS:
        raise ConfigError(f"{path}: kind 'trials' requires a [trials] table")

    servo_step = None
    if "servo_step" in data:
        tbl = data["servo_step"]
        ctx = "servo_step"
        placements_raw = _require(tbl, "placements", ctx)
        if not isinstance(placements_raw, list) or not placements_raw:
            raise ConfigError(f"{ctx}.placements must be a non-empty list")
        placements = tuple(
            _parse_q(p, f"{ctx}.placements[{i}]") for i, p in enumerate(placements_raw)
        )
        servo_step = ServoStepSettings(
            jacobian=(
                _resolve(base, str(tbl["jacobian"])) if "jacobian" in tbl else None
            ),
            placements=placements,
            learn=bool(tbl.get("learn", False)),
        )
    elif kind == KIND_SERVO_STEP:
        raise ConfigError(f"{path}: kind 'servo_step' requires a [servo_step] table")

    return Scenario(
        kind=kind,
        scene_path=scene_path,
        scene=scene,
        seed=seed,
        out=out_path,
        initial_q=initial_q,
        servo=servo,
        noise=noise,
        learn=learn,
        approach=approach,
        grasp=grasp,
        trials=trials,
        servo_step=servo_step,
    )
