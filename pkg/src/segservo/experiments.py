"""Experiment runners: wire scenes, servo loops, and estimators together.

Every runner writes its outputs under one directory and returns a
summary dict (also written as summary.json).  All file content is a
pure function of the scenario config, so reruns are byte-identical:
floats are serialized with repr, newlines are always \\n, and nothing
records wall-clock time or absolute paths.

Failure outcomes (lost object, no convergence, failed grasp) still
write their outputs, then raise a typed error so the command line can
exit with the failure status.  A trial suite is the exception: each
trial's failure is recorded in the report and the suite completes.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import grasp as grasp_mod
from .depth import (
    DepthEstimate,
    DepthObservation,
    estimate_converged,
    estimate_depth,
)
from .errors import (
    ConfigError,
    DegenerateSystemError,
    GraspFailedError,
    NonConvergenceError,
    ObjectLostError,
    ReplayMismatchError,
)
from .geometry import Pose
from .perception import make_feature_source, make_segmenter
from .scenario import ApproachSettings, Scenario, ServoSettings
from .scene import (
    Box,
    Disk,
    KinematicChain,
    Scene,
    SceneObject,
    Sphere,
    clamp_to_limits,
    forward_kinematics,
)
from .servo import (
    EpisodeResult,
    JacobianFile,
    OUTCOME_CONVERGED,
    OUTCOME_OBJECT_LOST,
    PseudoJacobian,
    ServoConfig,
    coupling_preset,
    load_jacobian,
    save_jacobian,
    servo_episode,
)

DEFAULT_OUT = Path("segservo_out")
OUT_ENV_VAR = "SEGSERVO_OUT"


# ---------------------------------------------------------------- output


def fmt(value) -> str:
    """One deterministic cell: repr for floats, 1/0 for bools."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        # float() first: np.float64 subclasses float but reprs differently
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_csv(path: Path) -> Tuple[List[str], List[List[str]]]:
    text = Path(path).read_text(encoding="ascii")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise ConfigError(f"{path}: empty CSV")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def write_json(path: Path, obj) -> None:
    import json

    path.write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n",
        encoding="ascii",
        newline="\n",
    )


def resolve_out_dir(cli_out: Optional[Path], scenario_out: Optional[Path]) -> Path:
    """--out beats the environment override, which beats the scenario."""
    if cli_out is not None:
        out = Path(cli_out)
    elif os.environ.get(OUT_ENV_VAR):
        out = Path(os.environ[OUT_ENV_VAR])
    elif scenario_out is not None:
        out = scenario_out
    else:
        out = DEFAULT_OUT
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- world


@dataclass
class World:
    """Mutable holder so segmenters see object motion between frames."""

    scene: Scene

    def move_object(self, object_id: str, new_pose: Pose) -> None:
        obj = self.scene.get_object(object_id)
        self.scene = self.scene.replace_object(replace(obj, pose=new_pose))

    def translate_object(self, object_id: str, delta: np.ndarray) -> None:
        obj = self.scene.get_object(object_id)
        self.move_object(
            object_id, Pose(obj.pose.rotation, obj.pose.translation + delta)
        )


def object_top_height(obj: SceneObject) -> float:
    """World z of the object's highest point (boxes may be rotated)."""
    t = obj.pose.translation
    if isinstance(obj.shape, Sphere):
        return float(t[2] + obj.shape.radius)
    if isinstance(obj.shape, Box):
        h = np.asarray(obj.shape.half_extents)
        return float(t[2] + np.abs(obj.pose.rotation[2, :]) @ h)
    if isinstance(obj.shape, Disk):
        return float(t[2])
    raise TypeError(f"unsupported shape {type(obj.shape).__name__}")


def object_bottom_offset(shape) -> float:
    """Height of the shape's center above the surface it rests on."""
    if isinstance(shape, Sphere):
        return float(shape.radius)
    if isinstance(shape, Box):
        return float(shape.half_extents[2])
    if isinstance(shape, Disk):
        return 0.0005
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def depth_reference_height(obj: SceneObject) -> float:
    """Height the area-vs-distance law actually measures for a shape.

    A flat-topped solid seen from above scales about its top surface,
    so the estimate tracks the top.  A sphere's silhouette scales about
    its center (the angular radius depends on the center distance), so
    the estimate tracks the center height.
    """
    if isinstance(obj.shape, Sphere):
        return float(obj.pose.translation[2])
    return object_top_height(obj)


def horizontal_extent(obj: SceneObject, direction: np.ndarray) -> float:
    """Full object width along a horizontal unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    if isinstance(obj.shape, Sphere):
        return 2.0 * obj.shape.radius
    if isinstance(obj.shape, Box):
        h = np.asarray(obj.shape.half_extents)
        return float(2.0 * np.abs(d @ obj.pose.rotation) @ h)
    if isinstance(obj.shape, Disk):
        n = obj.pose.rotation[:, 2]
        overlap = float(d @ n)
        return 2.0 * obj.shape.radius * math.sqrt(max(0.0, 1.0 - overlap * overlap))
    raise TypeError(f"unsupported shape {type(obj.shape).__name__}")


# ---------------------------------------------------------------- shared


def _chain_for(scene: Scene, camera_name: str) -> KinematicChain:
    return scene.chains[scene.camera_chain[camera_name]]


def _servo_config(servo: ServoSettings, chain: KinematicChain) -> ServoConfig:
    coupling = coupling_preset(servo.preset)
    missing = [j for j in coupling.joints if j not in chain.joint_names]
    if missing:
        raise ConfigError(
            f"preset {servo.preset!r} joints {missing} not in chain {chain.name!r}"
        )
    return ServoConfig(
        coupling=coupling,
        target=servo.target,
        lam=servo.lam,
        alpha=servo.alpha,
        tolerance=servo.tolerance,
        max_steps=servo.max_steps,
        epsilon=servo.epsilon,
        seed_value=servo.seed_value,
    )


def _validate_initial_q(chain: KinematicChain, q: Mapping[str, float]) -> None:
    for joint in chain.joints:
        if joint.name not in q:
            raise ConfigError(f"initial_q is missing chain joint {joint.name!r}")
        lo, hi = joint.limits
        if not (lo <= q[joint.name] <= hi):
            raise ConfigError(
                f"initial_q[{joint.name!r}] = {q[joint.name]} outside [{lo}, {hi}]"
            )


def _setup(scenario: Scenario, world: World):
    """Common plumbing: chain, servo config, source, clamp, frame counter."""
    servo = scenario.servo
    chain = _chain_for(world.scene, servo.camera)
    config = _servo_config(servo, chain)
    _validate_initial_q(chain, scenario.initial_q)
    segmenter = make_segmenter(
        lambda: world.scene, servo.camera, servo.object_id, scenario.noise
    )
    source = make_feature_source(segmenter)

    def clamp(q: Mapping[str, float]):
        return clamp_to_limits(chain, q)

    return chain, config, source, clamp, segmenter


def _load_jacobian_file(path: Optional[Path]) -> Optional[JacobianFile]:
    if path is None:
        return None
    try:
        return load_jacobian(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"jacobian file not found: {path}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _coupled_pairs(jac: PseudoJacobian) -> List[Tuple[str, str]]:
    out = []
    for i, joint in enumerate(jac.coupling.joints):
        for c, feat in enumerate(jac.coupling.features):
            if jac.coupling.matrix[i, c]:
                out.append((joint, feat))
    return out


def _trajectory_rows(
    label: int, episode: EpisodeResult, chain: KinematicChain
) -> List[List]:
    rows = []
    for rec in episode.steps:
        row = [label, rec.step, rec.frame]
        row.extend(rec.q[name] for name in chain.joint_names)
        row.extend(
            [
                rec.area,
                rec.s_x,
                rec.s_y,
                rec.e_x,
                rec.e_y,
                rec.error_norm,
                rec.update_applied,
                ";".join(rec.clamped),
            ]
        )
        rows.append(row)
    return rows


def _trajectory_header(first_label: str, chain: KinematicChain) -> List[str]:
    return (
        [first_label, "step", "frame"]
        + [f"q_{name}" for name in chain.joint_names]
        + [
            "s_A_px",
            "s_x_px",
            "s_y_px",
            "e_x_px",
            "e_y_px",
            "e_norm_px",
            "update_applied",
            "clamped",
        ]
    )


# ---------------------------------------------------------------- learn


def run_learn(scenario: Scenario, out_dir: Path) -> Dict:
    """Learn a pseudo-jacobian from scratch while centering the target.

    Losing the object ends the episode; the robot is placed back at the
    start pose and a new episode resumes from the latest estimate, up
    to learn.max_episodes episodes in total.
    """
    world = World(scenario.scene)
    chain, config, source, clamp, _ = _setup(scenario, world)
    frames = itertools.count()

    jac: Optional[PseudoJacobian] = None
    episodes: List[EpisodeResult] = []
    for _ in range(scenario.learn.max_episodes):
        result = servo_episode(
            config,
            source,
            scenario.initial_q,
            frames,
            jacobian=jac,
            clamp=clamp,
            learn=True,
        )
        episodes.append(result)
        jac = result.jacobian
        if result.outcome != OUTCOME_OBJECT_LOST:
            break

    pairs = _coupled_pairs(jac)
    update_header = ["row", "episode", "step", "update", "applied"] + [
        f"J_{joint}__{feat}" for joint, feat in pairs
    ]
    seed_entries = {
        pair: config.seed_value for pair in pairs
    }
    update_rows: List[List] = [
        [0, 0, -1, 0, 0] + [seed_entries[p] for p in pairs]
    ]
    row_idx = 1
    traj_rows: List[List] = []
    for ep_idx, ep in enumerate(episodes):
        traj_rows.extend(_trajectory_rows(ep_idx, ep, chain))
        for upd in ep.updates:
            update_rows.append(
                [row_idx, ep_idx, upd.step, upd.update, upd.applied]
                + [upd.entries[p] for p in pairs]
            )
            row_idx += 1

    write_csv(out_dir / "trajectory.csv", _trajectory_header("episode", chain), traj_rows)
    write_csv(out_dir / "updates.csv", update_header, update_rows)
    saved = JacobianFile(
        jacobian=jac,
        alpha=config.alpha,
        lam=config.lam,
        target=tuple(config.target),
    )
    save_jacobian(saved, out_dir / "jacobian.txt")

    last = episodes[-1]
    updates_applied = sum(ep.updates_applied for ep in episodes)
    summary = {
        "operation": "learn",
        "outcome": last.outcome,
        "episodes": len(episodes),
        "steps_total": sum(len(ep.steps) for ep in episodes),
        "updates_applied": updates_applied,
        "final_error_norm_px": (
            last.steps[-1].error_norm if last.steps else None
        ),
        "jacobian": {
            f"{joint}/{feat}": jac.entry(joint, feat) for joint, feat in pairs
        },
        "files": ["trajectory.csv", "updates.csv", "jacobian.txt", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    if last.outcome == OUTCOME_OBJECT_LOST:
        raise ObjectLostError(
            f"object lost in all {len(episodes)} episodes; outputs in {out_dir}"
        )
    if last.outcome != OUTCOME_CONVERGED:
        raise NonConvergenceError(
            f"learning ended with outcome {last.outcome!r}; outputs in {out_dir}"
        )
    return summary


# ---------------------------------------------------------------- servo step


def run_servo_step(scenario: Scenario, out_dir: Path) -> Dict:
    """Servo to the target from each placement with a fixed estimate."""
    settings = scenario.servo_step
    if settings is None:
        raise ConfigError("scenario has no [servo_step] table")
    world = World(scenario.scene)
    chain, config, source, clamp, _ = _setup(scenario, world)
    loaded = _load_jacobian_file(settings.jacobian)
    frames = itertools.count()

    rows: List[List] = []
    outcomes: List[Dict] = []
    for idx, placement in enumerate(settings.placements):
        q0 = dict(scenario.initial_q)
        q0.update(placement)
        _validate_initial_q(chain, q0)
        jac = loaded.jacobian if loaded is not None else None
        result = servo_episode(
            config,
            source,
            q0,
            frames,
            jacobian=jac,
            clamp=clamp,
            learn=settings.learn,
        )
        rows.extend(_trajectory_rows(idx, result, chain))
        outcomes.append(
            {
                "placement": idx,
                "outcome": result.outcome,
                "steps": len(result.steps),
                "final_error_norm_px": (
                    result.steps[-1].error_norm if result.steps else None
                ),
            }
        )

    write_csv(out_dir / "steps.csv", _trajectory_header("placement", chain), rows)
    ok = all(o["outcome"] == OUTCOME_CONVERGED for o in outcomes)
    summary = {
        "operation": "servo_step",
        "outcome": "converged" if ok else "failed",
        "placements": outcomes,
        "files": ["steps.csv", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    if not ok:
        bad = [o for o in outcomes if o["outcome"] != OUTCOME_CONVERGED]
        raise NonConvergenceError(
            f"{len(bad)} placement(s) did not converge; outputs in {out_dir}"
        )
    return summary


# ---------------------------------------------------------------- approach


OBS_HEADER = ["step", "z_camera_m", "s_A_px", "z_hat_m", "c_hat", "residual_rms"]


@dataclass
class ApproachOutcome:
    """Result of one descend-and-observe pass."""

    outcome: str
    observations: List[DepthObservation]
    estimates: List[Optional[DepthEstimate]]
    final: Optional[DepthEstimate]
    q: Dict[str, float]
    jacobian: Optional[PseudoJacobian]
    centering_steps: int
    rows: List[List]


def _observation_rows(
    observations: Sequence[DepthObservation],
    estimates: Sequence[Optional[DepthEstimate]],
) -> List[List]:
    rows = []
    for i, obs in enumerate(observations):
        est = estimates[i]
        if est is None:
            rows.append([i, obs.z_camera, obs.area, None, None, None])
        else:
            rows.append(
                [i, obs.z_camera, obs.area, est.z_object, est.c_object, est.residual_rms]
            )
    return rows


def _approach_pass(
    scenario: Scenario,
    world: World,
    chain: KinematicChain,
    config: ServoConfig,
    source,
    clamp,
    approach: ApproachSettings,
    q0: Mapping[str, float],
    frames: Iterator[int],
    jacobian: Optional[PseudoJacobian],
) -> ApproachOutcome:
    """Alternate centering and observing while lowering one joint.

    An observation is taken only from a converged (centered) servo
    state; a centering failure aborts the pass.  The pass ends when the
    running depth estimate stabilizes (window/tolerance), or with a
    non-success outcome when observations or joint travel run out.
    """
    if approach.joint not in chain.joint_names:
        raise ConfigError(
            f"approach joint {approach.joint!r} not in chain {chain.name!r}"
        )
    q = dict(q0)
    jac = jacobian
    observations: List[DepthObservation] = []
    estimates: List[Optional[DepthEstimate]] = []
    solved: List[DepthEstimate] = []
    centering_steps = 0
    outcome = "observations_exhausted"

    for _ in range(approach.max_observations):
        result = servo_episode(
            config, source, q, frames, jacobian=jac, clamp=clamp, learn=True
        )
        centering_steps += len(result.steps)
        jac = result.jacobian
        q = result.final_q
        if result.outcome != OUTCOME_CONVERGED:
            outcome = f"centering_{result.outcome}"
            break
        measured = result.steps[-1]
        z_cam = float(forward_kinematics(chain, q).translation[2])
        observations.append(DepthObservation(z_camera=z_cam, area=measured.area))
        est: Optional[DepthEstimate] = None
        if len(observations) >= 2:
            try:
                est = estimate_depth(observations)
            except DegenerateSystemError:
                est = None
        estimates.append(est)
        if est is not None:
            solved.append(est)
            if estimate_converged(solved, approach.window, approach.depth_tolerance):
                outcome = "converged"
                break

        # descend one increment, honoring both the configured floor and
        # the joint's own limits
        value = q[approach.joint] + approach.step
        if approach.step < 0 and value < approach.min_value:
            outcome = "travel_exhausted"
            break
        if approach.step > 0 and value > approach.min_value:
            outcome = "travel_exhausted"
            break
        proposal = dict(q)
        proposal[approach.joint] = value
        proposal, clamped = clamp_to_limits(chain, proposal)
        if clamped and abs(proposal[approach.joint] - q[approach.joint]) < 1e-12:
            outcome = "joint_limit"
            break
        q = proposal

    return ApproachOutcome(
        outcome=outcome,
        observations=observations,
        estimates=estimates,
        final=solved[-1] if solved else None,
        q=q,
        jacobian=jac,
        centering_steps=centering_steps,
        rows=_observation_rows(observations, estimates),
    )


def run_approach_depth(scenario: Scenario, out_dir: Path) -> Dict:
    """Estimate object height by descending toward it while centered."""
    approach = scenario.approach
    if approach is None:
        raise ConfigError("scenario has no [approach] table")
    world = World(scenario.scene)
    chain, config, source, clamp, _ = _setup(scenario, world)
    loaded = _load_jacobian_file(approach.jacobian)
    jac = loaded.jacobian if loaded is not None else None
    frames = itertools.count()

    result = _approach_pass(
        scenario, world, chain, config, source, clamp, approach,
        scenario.initial_q, frames, jac,
    )

    write_csv(out_dir / "observations.csv", OBS_HEADER, result.rows)
    target_obj = world.scene.get_object(scenario.servo.object_id)
    summary = {
        "operation": "approach_depth",
        "outcome": result.outcome,
        "observations": len(result.observations),
        "centering_steps": result.centering_steps,
        "z_hat_m": result.final.z_object if result.final else None,
        "c_hat": result.final.c_object if result.final else None,
        "residual_rms": result.final.residual_rms if result.final else None,
        "z_true_top_m": object_top_height(target_obj),
        "z_model_m": depth_reference_height(target_obj),
        "files": ["observations.csv", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    if result.outcome != "converged":
        raise NonConvergenceError(
            f"approach ended with outcome {result.outcome!r}; outputs in {out_dir}"
        )
    return summary


def replay_depth_csv(csv_path: Path, out_dir: Path) -> Dict:
    """Re-run the estimator over a logged observation file.

    Only the step, z_camera_m, and s_A_px columns are read; estimate
    columns are recomputed from scratch and written to a fresh
    observations.csv in the output directory.
    """
    header, raw_rows = read_csv(csv_path)
    for col in ("step", "z_camera_m", "s_A_px"):
        if col not in header:
            raise ConfigError(f"{csv_path}: missing column {col!r}")
    iz = header.index("z_camera_m")
    ia = header.index("s_A_px")
    observations = []
    for row in raw_rows:
        observations.append(
            DepthObservation(z_camera=float(row[iz]), area=int(float(row[ia])))
        )
    if len(observations) < 2:
        raise ConfigError(f"{csv_path}: need at least 2 observations")

    estimates: List[Optional[DepthEstimate]] = []
    for m in range(1, len(observations) + 1):
        if m < 2:
            estimates.append(None)
            continue
        try:
            estimates.append(estimate_depth(observations[:m]))
        except DegenerateSystemError:
            estimates.append(None)

    write_csv(
        out_dir / "observations.csv",
        OBS_HEADER,
        _observation_rows(observations, estimates),
    )
    final = next((e for e in reversed(estimates) if e is not None), None)
    if final is None:
        raise ConfigError(f"{csv_path}: observations never form a solvable system")
    summary = {
        "operation": "approach_depth_replay",
        "outcome": "replayed",
        "observations": len(observations),
        "z_hat_m": final.z_object,
        "c_hat": final.c_object,
        "residual_rms": final.residual_rms,
        "files": ["observations.csv", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- grasp


def _gripper_tip_camera_frame(
    camera, target: Tuple[float, float], z_gripper: float
) -> np.ndarray:
    """Closed-fingertip position in the camera frame.

    The gripper is mounted so that its fingertips project exactly onto
    the servo target pixel at fingertip depth, which is what makes
    centering the object at that pixel line it up with the grasp.
    """
    ox = (target[0] - camera.cx) * z_gripper / camera.focal
    oy = (target[1] - camera.cy) * z_gripper / camera.focal
    return np.array([ox, oy, z_gripper])


def _closing_direction_world(camera_pose: Pose, roll: float) -> np.ndarray:
    """Horizontal world direction along which the fingers close."""
    dir_cam = np.array([-math.sin(roll), math.cos(roll), 0.0])
    d = camera_pose.rotation @ dir_cam
    d[2] = 0.0
    n = np.linalg.norm(d)
    if n == 0.0:
        return np.array([1.0, 0.0])
    return (d / n)[:2]


def run_grasp(scenario: Scenario, out_dir: Path) -> Dict:
    """Full pick attempt: center, approach, descend, orient, lift, verify."""
    settings = scenario.grasp
    approach = scenario.approach
    if settings is None or approach is None:
        raise ConfigError("grasp runs need [grasp] and [approach] tables")
    world = World(scenario.scene)
    chain, config, source, clamp, segmenter = _setup(scenario, world)
    camera = world.scene.cameras[scenario.servo.camera]
    object_id = scenario.servo.object_id

    high_file = _load_jacobian_file(settings.jacobian)
    low_file = _load_jacobian_file(settings.grasp_jacobian)
    jac_high = high_file.jacobian if high_file is not None else None
    jac_low = low_file.jacobian if low_file is not None else None

    frames = itertools.count()
    log_rows: List[List] = []
    forced_left = settings.force_failures
    success = False
    final_roll: Optional[float] = None
    final_estimate: Optional[DepthEstimate] = None
    attempts_used = 0

    def log(attempt, stage, status, **extra):
        log_rows.append(
            [
                attempt,
                stage,
                status,
                extra.get("frame"),
                extra.get("e_norm"),
                extra.get("area"),
                extra.get("z_camera"),
                extra.get("z_hat"),
                extra.get("wrist_roll"),
                extra.get("detail", ""),
            ]
        )

    for attempt in range(settings.retries + 1):
        attempts_used = attempt + 1
        # every attempt restarts from the survey pose; a failed attempt
        # leaves the arm low or lifted, with too little travel left for
        # another approach pass
        q = dict(scenario.initial_q)

        # 1. center at the survey height
        result = servo_episode(
            config, source, q, frames, jacobian=jac_high, clamp=clamp, learn=True
        )
        jac_high = result.jacobian
        q = result.final_q
        z_cam = float(forward_kinematics(chain, q).translation[2])
        log(
            attempt, "center_high", result.outcome,
            e_norm=result.steps[-1].error_norm if result.steps else None,
            z_camera=z_cam,
        )
        if result.outcome != OUTCOME_CONVERGED:
            continue

        # 2. descend while estimating the object top height
        ap = _approach_pass(
            scenario, world, chain, config, source, clamp, approach, q, frames,
            jac_high,
        )
        jac_high = ap.jacobian
        q = ap.q
        log(
            attempt, "approach", ap.outcome,
            z_camera=float(forward_kinematics(chain, q).translation[2]),
            z_hat=ap.final.z_object if ap.final else None,
        )
        if ap.outcome != "converged" or ap.final is None:
            continue
        final_estimate = ap.final

        # 3. move the camera to the grasp standoff height
        standoff = grasp_mod.grasp_standoff(ap.final.z_object, settings.z_gripper)
        z_now = float(forward_kinematics(chain, q).translation[2])
        proposal = dict(q)
        proposal[approach.joint] = q[approach.joint] + (standoff - z_now)
        proposal, _ = clamp_to_limits(chain, proposal)
        q = proposal
        z_at = float(forward_kinematics(chain, q).translation[2])
        if abs(z_at - standoff) > 1e-6:
            log(attempt, "descend", "unreachable", z_camera=z_at)
            continue
        log(attempt, "descend", "ok", z_camera=z_at)

        # 4. re-center at grasp height with the fine estimate
        result = servo_episode(
            config, source, q, frames, jacobian=jac_low, clamp=clamp, learn=True
        )
        jac_low = result.jacobian
        q = result.final_q
        log(
            attempt, "center_grasp", result.outcome,
            e_norm=result.steps[-1].error_norm if result.steps else None,
            z_camera=float(forward_kinematics(chain, q).translation[2]),
        )
        if result.outcome != OUTCOME_CONVERGED:
            continue

        # 5. choose the wrist roll from the segmented silhouette
        frame = next(frames)
        mask = segmenter(q, frame)
        template = grasp_mod.template_for_depth(
            focal=camera.focal,
            depth=settings.z_gripper,
            center=config.target,
            separation_m=settings.separation_m,
            finger_length_m=settings.finger_length_m,
            finger_width_m=settings.finger_width_m,
        )
        search = grasp_mod.select_wrist_roll(mask, template, settings.grid_step)
        q["wrist_roll"] = search.best_roll
        final_roll = search.best_roll
        log(
            attempt, "wrist_select", "ok", frame=frame,
            wrist_roll=search.best_roll, detail=f"score={search.best_score!r}",
        )

        # 6. close: physical capture test against the true world state
        frame = next(frames)
        grasp_mask = segmenter(q, frame)
        area_at_grasp = int(np.count_nonzero(grasp_mask.pixels))
        cam_pose = forward_kinematics(chain, q)
        obj = world.scene.get_object(object_id)
        tip = cam_pose.transform_point(
            _gripper_tip_camera_frame(camera, config.target, settings.z_gripper)
        )
        top = object_top_height(obj)
        miss = math.hypot(
            tip[0] - obj.pose.translation[0], tip[1] - obj.pose.translation[1]
        )
        depth_ok = (top - settings.capture_below) <= tip[2] <= (top + settings.capture_above)
        width = horizontal_extent(obj, _closing_direction_world(cam_pose, search.best_roll))
        size_ok = width <= settings.separation_m
        captured = (miss <= settings.capture_radius) and depth_ok and size_ok
        if forced_left > 0:
            captured = False
            forced_left -= 1
            detail = "forced_slip"
        else:
            detail = (
                f"miss={miss!r} depth_ok={int(depth_ok)} size_ok={int(size_ok)}"
            )
        log(
            attempt, "close", "captured" if captured else "slipped",
            frame=frame, area=area_at_grasp,
            z_camera=float(cam_pose.translation[2]), detail=detail,
        )

        # 7. lift; a captured object travels with the camera
        before = forward_kinematics(chain, q).translation.copy()
        proposal = dict(q)
        proposal[approach.joint] = q[approach.joint] + settings.lift
        proposal, _ = clamp_to_limits(chain, proposal)
        q = proposal
        after = forward_kinematics(chain, q).translation
        if captured:
            world.translate_object(object_id, after - before)
        frame = next(frames)
        raised_mask = segmenter(q, frame)
        area_raised = int(np.count_nonzero(raised_mask.pixels))
        log(
            attempt, "lift", "ok", frame=frame, area=area_raised,
            z_camera=float(after[2]),
        )

        # 8. verify from silhouette areas alone
        verified = grasp_mod.grasp_succeeded(area_raised, area_at_grasp)
        log(
            attempt, "verify", "success" if verified else "failure",
            area=area_raised,
            detail=f"baseline={area_at_grasp}",
        )
        if verified:
            success = True
            break

    write_csv(
        out_dir / "grasp.csv",
        [
            "attempt", "stage", "status", "frame", "e_norm_px", "area_px",
            "z_camera_m", "z_hat_m", "wrist_roll_rad", "detail",
        ],
        log_rows,
    )
    summary = {
        "operation": "grasp",
        "outcome": "success" if success else "grasp_failed",
        "attempts": attempts_used,
        "wrist_roll_rad": final_roll,
        "z_hat_m": final_estimate.z_object if final_estimate else None,
        "files": ["grasp.csv", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    if not success:
        raise GraspFailedError(
            f"no verified grasp in {attempts_used} attempt(s); outputs in {out_dir}"
        )
    return summary


# ---------------------------------------------------------------- trials


def run_trials(scenario: Scenario, out_dir: Path) -> Dict:
    """Sweep items and support heights; report servo and depth success.

    Individual trial failures (lost object, no convergence) are caught
    and recorded; the suite always runs to completion.
    """
    trials = scenario.trials
    approach = scenario.approach
    if trials is None or approach is None:
        raise ConfigError("trials runs need [trials] and [approach] tables")

    loaded = _load_jacobian_file(trials.jacobian)
    report_rows: List[List] = []
    successes = {"vs": 0, "de": 0}

    for item in trials.items:
        for height in trials.heights:
            world = World(scenario.scene)
            base_obj = world.scene.get_object(item)
            z_center = height + object_bottom_offset(base_obj.shape)
            world.move_object(
                item,
                Pose(
                    base_obj.pose.rotation,
                    np.array(
                        [trials.position[0], trials.position[1], z_center]
                    ),
                ),
            )
            trial_servo = replace(scenario.servo, object_id=item)
            trial_scenario = replace(scenario, servo=trial_servo)
            chain, config, source, clamp, _ = _setup(trial_scenario, world)
            frames = itertools.count()
            jac = loaded.jacobian if loaded is not None else None

            vs_ok = False
            de_ok = False
            z_hat: Optional[float] = None
            z_err: Optional[float] = None
            detail = ""
            try:
                result = servo_episode(
                    config, source, scenario.initial_q, frames,
                    jacobian=jac, clamp=clamp, learn=True,
                )
                vs_ok = result.outcome == OUTCOME_CONVERGED
                detail = result.outcome
                if vs_ok:
                    ap = _approach_pass(
                        trial_scenario, world, chain, config, source, clamp,
                        approach, result.final_q, frames, result.jacobian,
                    )
                    detail = ap.outcome
                    if ap.final is not None:
                        z_hat = ap.final.z_object
                        z_ref = depth_reference_height(world.scene.get_object(item))
                        z_err = z_hat - z_ref
                        de_ok = (
                            ap.outcome == "converged"
                            and abs(z_err) <= trials.depth_tolerance
                        )
            except Exception as exc:  # noqa: BLE001 - suite must finish
                detail = f"error:{type(exc).__name__}"

            successes["vs"] += int(vs_ok)
            successes["de"] += int(de_ok)
            report_rows.append(
                [item, height, vs_ok, de_ok, z_hat, z_err, detail]
            )

    write_csv(
        out_dir / "report.csv",
        ["item", "height_m", "vs_success", "de_success", "z_hat_m", "z_err_m", "detail"],
        report_rows,
    )
    total = len(report_rows)
    summary = {
        "operation": "trials",
        "outcome": "completed",
        "trials": total,
        "vs_successes": successes["vs"],
        "de_successes": successes["de"],
        "files": ["report.csv", "summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- replay


def run_replay(scenario: Scenario, trajectory_csv: Path, out_dir: Path) -> Dict:
    """Re-render a logged trajectory and demand bit-identical features.

    Works for trajectories from learn and servo_step runs (the world is
    static there).  Every row's joint state and frame index are pushed
    back through the kinematics, renderer, noise, and feature code; the
    reproduced area and centroid must match the logged text exactly.
    """
    world = World(scenario.scene)
    chain, config, source, _, _ = _setup(scenario, world)
    header, rows = read_csv(trajectory_csv)
    needed = ["frame", "s_A_px", "s_x_px", "s_y_px"]
    q_cols = [h for h in header if h.startswith("q_")]
    for col in needed:
        if col not in header:
            raise ConfigError(f"{trajectory_csv}: missing column {col!r}")
    if not q_cols:
        raise ConfigError(f"{trajectory_csv}: no q_* joint columns")
    idx = {h: header.index(h) for h in header}

    mismatches = []
    for row_number, row in enumerate(rows):
        q = {col[2:]: float(row[idx[col]]) for col in q_cols}
        frame = int(row[idx["frame"]])
        measured = source(q, frame)
        if measured is None:
            mismatches.append((row_number, "object_missing"))
            continue
        s_a, s_x, s_y = measured
        expected = (row[idx["s_A_px"]], row[idx["s_x_px"]], row[idx["s_y_px"]])
        actual = (fmt(s_a), fmt(s_x), fmt(s_y))
        if expected != actual:
            mismatches.append((row_number, f"{expected} != {actual}"))

    summary = {
        "operation": "replay",
        "outcome": "match" if not mismatches else "mismatch",
        "rows_checked": len(rows),
        "mismatches": len(mismatches),
        "first_mismatch": (
            {"row": mismatches[0][0], "detail": mismatches[0][1]}
            if mismatches
            else None
        ),
        "files": ["summary.json"],
    }
    write_json(out_dir / "summary.json", summary)
    if mismatches:
        raise ReplayMismatchError(
            f"{len(mismatches)} of {len(rows)} rows failed to reproduce"
        )
    return summary
