"""Visual servo control with an online-learned pseudo-jacobian.

The controller drives image features s = (s_x, s_y) toward a target s*
by commanding joint increments dq = -lambda * Jp @ (s - s*).  Jp is an
estimate of the inverse image jacobian, refined after every motion by a
rank-one secant update masked elementwise with a binary coupling matrix
H so that only chosen joint/feature pairs ever become non-zero:

    Jp <- Jp + alpha * ((dq - Jp de) dq^T Jp / (dq^T Jp de)) o H

where dq is the achieved joint step, de the resulting feature change,
and o the elementwise product.  The update is skipped (never scaled or
clipped) when the scalar denominator is smaller than epsilon or the
result would not be finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .errors import DimensionMismatchError

DEFAULT_FEATURES: Tuple[str, ...] = ("s_x", "s_y")
DEFAULT_SEED_VALUE = 0.001
DEFAULT_ALPHA = 0.1
DEFAULT_EPSILON = 1e-9

#: Joint-to-feature couplings for the stock controller behaviors.  Each
#: entry maps a joint name to the features it is allowed to influence.
COUPLING_PRESETS: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "head": {
        "head_pan": ("s_x",),
        "head_tilt": ("s_y",),
    },
    "arm_lift": {
        "arm_lift": ("s_x",),
        "arm_roll": ("s_y",),
    },
    "arm_wrist": {
        "wrist_flex": ("s_x",),
        "arm_roll": ("s_y",),
    },
    "arm_both": {
        "arm_lift": ("s_x",),
        "wrist_flex": ("s_x",),
        "arm_roll": ("s_y",),
    },
    "base": {
        "base_forward": ("s_x",),
        "base_lateral": ("s_y",),
    },
    "base_grasp": {
        "base_forward": ("s_x",),
        "base_lateral": ("s_y",),
    },
}


@dataclass(frozen=True)
class CouplingMatrix:
    """Binary joints-by-features gate for the jacobian estimate."""

    joints: Tuple[str, ...]
    features: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (len(self.joints), len(self.features)):
            raise DimensionMismatchError(
                f"coupling matrix shape {m.shape} does not match "
                f"{len(self.joints)} joints x {len(self.features)} features"
            )
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError("coupling matrix entries must be 0 or 1")
        if not m.any():
            raise ValueError("coupling matrix must have at least one 1")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "features", tuple(self.features))

    @staticmethod
    def from_pairs(
        pairs: Mapping[str, Sequence[str]],
        features: Sequence[str] = DEFAULT_FEATURES,
    ) -> "CouplingMatrix":
        joints = tuple(pairs.keys())
        feats = tuple(features)
        m = np.zeros((len(joints), len(feats)))
        for i, joint in enumerate(joints):
            for feat in pairs[joint]:
                if feat not in feats:
                    raise ValueError(f"unknown feature {feat!r}")
            m[i, [feats.index(f) for f in pairs[joint]]] = 1.0
        return CouplingMatrix(joints, feats, m)


def coupling_preset(name: str) -> CouplingMatrix:
    if name not in COUPLING_PRESETS:
        raise KeyError(
            f"unknown coupling preset {name!r}; "
            f"choices: {sorted(COUPLING_PRESETS)}"
        )
    return CouplingMatrix.from_pairs(COUPLING_PRESETS[name])


@dataclass(frozen=True)
class PseudoJacobian:
    """Current inverse-jacobian estimate, zero outside the coupling."""

    coupling: CouplingMatrix
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.coupling.matrix.shape:
            raise DimensionMismatchError(
                f"values shape {v.shape} does not match coupling "
                f"{self.coupling.matrix.shape}"
            )
        if np.any((self.coupling.matrix == 0.0) & (v != 0.0)):
            raise ValueError("values must be zero where the coupling is zero")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def entry(self, joint: str, feature: str) -> float:
        i = self.coupling.joints.index(joint)
        j = self.coupling.features.index(feature)
        return float(self.values[i, j])


def initial_pseudojacobian(
    coupling: CouplingMatrix, seed_value: float = DEFAULT_SEED_VALUE
) -> PseudoJacobian:
    """Start estimate: seed_value at every coupled entry, zero elsewhere."""
    return PseudoJacobian(coupling, seed_value * coupling.matrix)


def hadamard_broyden_update(
    jacobian: PseudoJacobian,
    dq: np.ndarray,
    de: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    epsilon: float = DEFAULT_EPSILON,
) -> Tuple[PseudoJacobian, bool]:
    """One masked secant update; returns (new estimate, applied flag).

    dq is the achieved joint step (ordered like coupling.joints) and de
    the feature change it produced (ordered like coupling.features).
    """
    dq = np.asarray(dq, dtype=np.float64)
    de = np.asarray(de, dtype=np.float64)
    v = jacobian.values
    n, k = v.shape
    if dq.shape != (n,):
        raise DimensionMismatchError(f"dq shape {dq.shape}, expected ({n},)")
    if de.shape != (k,):
        raise DimensionMismatchError(f"de shape {de.shape}, expected ({k},)")
    with np.errstate(over="ignore", invalid="ignore"):
        jde = v @ de
        denom = float(dq @ jde)
        if abs(denom) < epsilon:
            return jacobian, False
        numer = np.outer(dq - jde, dq) @ v
        candidate = v + alpha * (numer / denom) * jacobian.coupling.matrix
    if not np.isfinite(candidate).all():
        return jacobian, False
    return PseudoJacobian(jacobian.coupling, candidate), True


def feature_error(measured: Sequence[float], target: Sequence[float]) -> np.ndarray:
    m = np.asarray(measured, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if m.shape != t.shape:
        raise DimensionMismatchError(
            f"feature shapes differ: {m.shape} vs {t.shape}"
        )
    return m - t


def control_step(
    jacobian: PseudoJacobian, error: np.ndarray, lam: float
) -> np.ndarray:
    """Joint increments dq = -lambda * Jp @ e, ordered like coupling.joints."""
    e = np.asarray(error, dtype=np.float64)
    if e.shape != (len(jacobian.coupling.features),):
        raise DimensionMismatchError(
            f"error shape {e.shape}, expected "
            f"({len(jacobian.coupling.features)},)"
        )
    return -lam * (jacobian.values @ e)


def converged(error: np.ndarray, tolerance: float) -> bool:
    return bool(np.linalg.norm(np.asarray(error, dtype=np.float64)) <= tolerance)


@dataclass(frozen=True)
class ServoConfig:
    """Gains and stopping rules for one servo behavior."""

    coupling: CouplingMatrix
    target: Tuple[float, ...]
    lam: float = 0.3
    alpha: float = DEFAULT_ALPHA
    tolerance: float = 5.0
    max_steps: int = 100
    epsilon: float = DEFAULT_EPSILON
    seed_value: float = DEFAULT_SEED_VALUE

    def __post_init__(self) -> None:
        if len(self.target) != len(self.coupling.features):
            raise DimensionMismatchError(
                "target length does not match coupling features"
            )
        if not self.lam > 0.0:
            raise ValueError("lambda must be positive")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


# A measurement callback: (joint state, frame index) -> (s_A, s_x, s_y)
# or None when the tracked object is not visible in that frame.
FeatureSource = Callable[[Mapping[str, float], int], Optional[Tuple[int, float, float]]]


@dataclass(frozen=True)
class StepRecord:
    """One control step: what was seen and what was commanded."""

    step: int
    frame: int
    q: Dict[str, float]
    area: int
    s_x: float
    s_y: float
    e_x: float
    e_y: float
    error_norm: float
    update_applied: bool
    clamped: Tuple[str, ...]


@dataclass(frozen=True)
class UpdateRecord:
    """Jacobian entries right after one applied (or skipped) update."""

    update: int
    step: int
    applied: bool
    entries: Dict[Tuple[str, str], float]


OUTCOME_CONVERGED = "converged"
OUTCOME_MAX_STEPS = "max_steps"
OUTCOME_OBJECT_LOST = "object_lost"
OUTCOME_STALLED = "stalled"

_STALL_EPS = 1e-12


@dataclass
class EpisodeResult:
    outcome: str
    steps: List[StepRecord]
    updates: List[UpdateRecord]
    jacobian: PseudoJacobian
    final_q: Dict[str, float]
    updates_applied: int


def _entries(j: PseudoJacobian) -> Dict[Tuple[str, str], float]:
    out: Dict[Tuple[str, str], float] = {}
    for i, joint in enumerate(j.coupling.joints):
        for c, feat in enumerate(j.coupling.features):
            if j.coupling.matrix[i, c]:
                out[(joint, feat)] = float(j.values[i, c])
    return out


def servo_episode(
    config: ServoConfig,
    source: FeatureSource,
    initial_q: Mapping[str, float],
    frame_counter: Iterator[int],
    jacobian: Optional[PseudoJacobian] = None,
    clamp: Optional[Callable[[Mapping[str, float]], Tuple[Dict[str, float], List[str]]]] = None,
    learn: bool = True,
) -> EpisodeResult:
    """Run one measure/update/move loop until convergence or failure.

    The update uses the achieved joint step (after any clamping), read
    back as the difference between consecutive joint states.  When the
    source reports the object missing, the episode ends with outcome
    'object_lost' and the caller decides whether to retry.
    """
    if jacobian is None:
        jacobian = initial_pseudojacobian(config.coupling, config.seed_value)
    joints = config.coupling.joints
    q = dict(initial_q)
    prev_q: Optional[Dict[str, float]] = None
    prev_e: Optional[np.ndarray] = None
    steps: List[StepRecord] = []
    updates: List[UpdateRecord] = []
    applied_count = 0
    outcome = OUTCOME_MAX_STEPS

    for step in range(config.max_steps):
        frame = next(frame_counter)
        measured = source(q, frame)
        if measured is None:
            outcome = OUTCOME_OBJECT_LOST
            break
        s_a, s_x, s_y = measured
        e = feature_error((s_x, s_y), config.target)

        applied = False
        if learn and prev_q is not None and prev_e is not None:
            dq = np.array([q[j] - prev_q[j] for j in joints])
            de = e - prev_e
            jacobian, applied = hadamard_broyden_update(
                jacobian, dq, de, config.alpha, config.epsilon
            )
            if applied:
                applied_count += 1
            updates.append(
                UpdateRecord(
                    update=applied_count,
                    step=step,
                    applied=applied,
                    entries=_entries(jacobian),
                )
            )

        prev_q = dict(q)
        prev_e = e

        done = converged(e, config.tolerance)
        stalled = False
        clamped_names: Tuple[str, ...] = ()
        if not done:
            dq_cmd = control_step(jacobian, e, config.lam)
            proposal = dict(q)
            for name, delta in zip(joints, dq_cmd):
                proposal[name] = proposal.get(name, 0.0) + float(delta)
            if clamp is not None:
                proposal, clamped = clamp(proposal)
                clamped_names = tuple(clamped)
            # No effective motion (for example every change was clamped
            # away at a limit) can never reduce the error: give up now
            # rather than spin until max_steps.
            stalled = all(
                abs(proposal[name] - q[name]) < _STALL_EPS for name in joints
            )
            q = proposal

        steps.append(
            StepRecord(
                step=step,
                frame=frame,
                q=dict(prev_q),
                area=int(s_a),
                s_x=float(s_x),
                s_y=float(s_y),
                e_x=float(e[0]),
                e_y=float(e[1]),
                error_norm=float(np.linalg.norm(e)),
                update_applied=applied,
                clamped=clamped_names,
            )
        )
        if done:
            outcome = OUTCOME_CONVERGED
            break
        if stalled:
            outcome = OUTCOME_STALLED
            break

    final_q = dict(q)
    return EpisodeResult(
        outcome=outcome,
        steps=steps,
        updates=updates,
        jacobian=jacobian,
        final_q=final_q,
        updates_applied=applied_count,
    )


_JACOBIAN_MAGIC = "segservo-jacobian v1"


@dataclass(frozen=True)
class JacobianFile:
    """Everything needed to resume or replay a servo behavior."""

    jacobian: PseudoJacobian
    alpha: float
    lam: float
    target: Tuple[float, ...]


def format_jacobian(saved: JacobianFile) -> str:
    """Plain-text form; floats use repr so reload is bit-exact."""
    j = saved.jacobian
    lines = [
        _JACOBIAN_MAGIC,
        f"alpha {saved.alpha!r}",
        f"lambda {saved.lam!r}",
        "features " + " ".join(j.coupling.features),
        "target " + " ".join(repr(float(v)) for v in saved.target),
        f"joints {len(j.coupling.joints)}",
    ]
    for i, name in enumerate(j.coupling.joints):
        coupling = " ".join(str(int(v)) for v in j.coupling.matrix[i])
        values = " ".join(repr(float(v)) for v in j.values[i])
        lines.append(f"joint {name} coupling {coupling} values {values}")
    return "\n".join(lines) + "\n"


def parse_jacobian(text: str) -> JacobianFile:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _JACOBIAN_MAGIC:
        raise ValueError(f"expected header {_JACOBIAN_MAGIC!r}")
    fields: Dict[str, str] = {}
    idx = 1
    for key in ("alpha", "lambda", "features", "target", "joints"):
        parts = lines[idx].split(None, 1)
        if len(parts) != 2 or parts[0] != key:
            raise ValueError(f"expected {key!r} on line {idx + 1}")
        fields[key] = parts[1]
        idx += 1
    features = tuple(fields["features"].split())
    target = tuple(float(tok) for tok in fields["target"].split())
    n_joints = int(fields["joints"])
    joint_lines = lines[idx:]
    if len(joint_lines) != n_joints:
        raise ValueError(
            f"expected {n_joints} joint lines, found {len(joint_lines)}"
        )
    names = []
    coupling_rows = []
    value_rows = []
    k = len(features)
    for ln in joint_lines:
        toks = ln.split()
        if (
            len(toks) != 4 + 2 * k
            or toks[0] != "joint"
            or toks[2] != "coupling"
            or toks[3 + k] != "values"
        ):
            raise ValueError(f"malformed joint line: {ln!r}")
        names.append(toks[1])
        coupling_rows.append([int(t) for t in toks[3 : 3 + k]])
        value_rows.append([float(t) for t in toks[4 + k :]])
    coupling = CouplingMatrix(tuple(names), features, np.array(coupling_rows, dtype=np.float64))
    jac = PseudoJacobian(coupling, np.array(value_rows, dtype=np.float64))
    return JacobianFile(
        jacobian=jac,
        alpha=float(fields["alpha"]),
        lam=float(fields["lambda"]),
        target=target,
    )


def save_jacobian(saved: JacobianFile, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_jacobian(saved))


def load_jacobian(path) -> JacobianFile:
    with open(path, "r", encoding="ascii") as fh:
        return parse_jacobian(fh.read())
