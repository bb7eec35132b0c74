"""Monocular depth from silhouette area under camera motion.

For a camera looking at a fixed object along a translation axis, the
silhouette pixel area s_A shrinks with the square of distance, so

    (z_camera - z_object) * sqrt(s_A) = c_object

holds with c_object a constant of the object and the intrinsics.  Each
observation i taken at known camera height z_camera_i contributes one
linear equation in the unknowns (z_object, c_object):

    sqrt(s_A_i) * z_object + c_object = z_camera_i * sqrt(s_A_i)

and the stack is solved by least squares.  Two observations at distinct
areas suffice; more observations average out rasterization noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateSystemError, InsufficientDataError

_RELATIVE_SPREAD_FLOOR = 1e-12


@dataclass(frozen=True)
class DepthObservation:
    """One paired reading: camera height along the axis and mask area."""

    z_camera: float
    area: int

    def __post_init__(self) -> None:
        if self.area <= 0:
            raise ValueError("area must be a positive pixel count")


@dataclass(frozen=True)
class DepthEstimate:
    """Least-squares fit over a batch of observations."""

    z_object: float
    c_object: float
    count: int
    residual_rms: float


def _system(observations: Sequence[DepthObservation]) -> Tuple[np.ndarray, np.ndarray]:
    roots = np.sqrt(np.array([o.area for o in observations], dtype=np.float64))
    z_cam = np.array([o.z_camera for o in observations], dtype=np.float64)
    a = np.stack([roots, np.ones_like(roots)], axis=1)
    b = z_cam * roots
    return a, b


def estimate_depth(observations: Sequence[DepthObservation]) -> DepthEstimate:
    """Fit (z_object, c_object) to the observations.

    Raises InsufficientDataError with fewer than two observations and
    DegenerateSystemError when all areas agree to within floating-point
    spread, which leaves the two unknowns unseparable.
    """
    if len(observations) < 2:
        raise InsufficientDataError(
            f"need at least 2 observations, got {len(observations)}"
        )
    a, b = _system(observations)
    roots = a[:, 0]
    spread = roots.max() - roots.min()
    if spread <= _RELATIVE_SPREAD_FLOOR * max(roots.max(), 1.0):
        raise DegenerateSystemError(
            "all areas are identical; depth and scale cannot be separated"
        )
    solution, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    z_object, c_object = (float(v) for v in solution)
    residuals = a @ solution - b
    rms = float(np.sqrt(np.mean(residuals**2)))
    return DepthEstimate(
        z_object=z_object,
        c_object=c_object,
        count=len(observations),
        residual_rms=rms,
    )


def incremental_estimates(
    observations: Sequence[DepthObservation],
) -> List[DepthEstimate]:
    """Estimates over every prefix of length 2..n, in order.

    Prefixes whose areas are all identical are skipped (no estimate can
    be formed yet); the list still ends with the full-batch estimate
    whenever that one is solvable.
    """
    out: List[DepthEstimate] = []
    for m in range(2, len(observations) + 1):
        try:
            out.append(estimate_depth(observations[:m]))
        except DegenerateSystemError:
            continue
    return out


def estimate_converged(
    estimates: Sequence[DepthEstimate], window: int, tolerance: float
) -> bool:
    """True when the last `window` depth estimates span < tolerance."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(estimates) < window:
        return False
    tail = np.array([e.z_object for e in estimates[-window:]])
    return bool(tail.max() - tail.min() < tolerance)
