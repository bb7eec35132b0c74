"""Grasp pose selection and verification from segmentation masks.

The wrist roll is chosen by sweeping a two-finger gripper template over
a grid of image-plane rotations and keeping the angle whose template
overlaps the object silhouette least (smallest Jaccard index): fingers
should straddle the object, not cover it.  Ties keep the first (lowest)
angle in grid order.

The camera standoff for closing the gripper is the estimated object
top height plus the fixed camera-to-fingertip distance.  A grasp is
verified after lifting by comparing silhouette areas: the object rose
with the gripper only if it still fills more than half of the area it
had at the grasp pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import EmptyMaskError, InvalidBaselineError
from .masks import BinaryMask, jaccard

DEFAULT_GRID_STEP = math.pi / 36.0
GRASP_AREA_FACTOR = 0.5


@dataclass(frozen=True)
class GripperTemplate:
    """Two parallel finger rectangles in image space.

    At roll zero the fingers run along image x and sit symmetrically
    above and below the center, separated along image y (the closing
    direction).  All lengths are pixels; center is (x, y).
    """

    center: Tuple[float, float]
    separation: float
    finger_length: float
    finger_width: float

    def __post_init__(self) -> None:
        if self.separation <= 0.0 or self.finger_length <= 0.0 or self.finger_width <= 0.0:
            raise ValueError("template dimensions must be positive")

    def mask(self, roll: float, width: int, height: int) -> BinaryMask:
        ys, xs = np.ogrid[0:height, 0:width]
        dx = xs - self.center[0]
        dy = ys - self.center[1]
        u = dx * math.cos(roll) + dy * math.sin(roll)
        v = -dx * math.sin(roll) + dy * math.cos(roll)
        along = np.abs(u) <= self.finger_length / 2.0
        across = np.abs(np.abs(v) - self.separation / 2.0) <= self.finger_width / 2.0
        return BinaryMask(along & across)


def template_for_depth(
    focal: float,
    depth: float,
    center: Tuple[float, float],
    separation_m: float,
    finger_length_m: float,
    finger_width_m: float,
) -> GripperTemplate:
    """Project metric gripper dimensions to pixels at a camera depth."""
    if depth <= 0.0:
        raise ValueError("depth must be positive")
    scale = focal / depth
    return GripperTemplate(
        center=center,
        separation=separation_m * scale,
        finger_length=finger_length_m * scale,
        finger_width=finger_width_m * scale,
    )


@dataclass(frozen=True)
class WristSearch:
    """Result of the rotation grid search."""

    angles: np.ndarray
    scores: np.ndarray
    best_index: int

    @property
    def best_roll(self) -> float:
        return float(self.angles[self.best_index])

    @property
    def best_score(self) -> float:
        return float(self.scores[self.best_index])


def roll_grid(step: float = DEFAULT_GRID_STEP) -> np.ndarray:
    """Rotation candidates k*step covering [0, pi)."""
    if step <= 0.0:
        raise ValueError("grid step must be positive")
    count = int(np.ceil((math.pi - 1e-12) / step))
    return step * np.arange(count)


def select_wrist_roll(
    object_mask: BinaryMask,
    template: GripperTemplate,
    step: float = DEFAULT_GRID_STEP,
) -> WristSearch:
    """Pick the grid angle minimizing template/object overlap.

    The first angle attaining the minimum wins ties.  Raises
    EmptyMaskError when the object mask has no foreground.
    """
    if not object_mask.pixels.any():
        raise EmptyMaskError("cannot pick a wrist roll for an empty mask")
    angles = roll_grid(step)
    h, w = object_mask.pixels.shape
    scores = np.empty(len(angles))
    for i, roll in enumerate(angles):
        scores[i] = jaccard(object_mask, template.mask(float(roll), w, h))
    best = int(np.argmin(scores))
    return WristSearch(angles=angles, scores=scores, best_index=best)


def grasp_standoff(z_object_top: float, z_gripper: float) -> float:
    """Camera height that puts closed fingertips at the object top."""
    return z_object_top + z_gripper


def grasp_succeeded(area_raised: int, area_at_grasp: int) -> bool:
    """Post-lift check: object still fills > half its grasp-time area.

    The comparison is strict; exactly half does not pass.  Raises
    InvalidBaselineError when the grasp-time area is not positive.
    """
    if area_at_grasp <= 0:
        raise InvalidBaselineError(
            f"grasp-time area must be positive, got {area_at_grasp}"
        )
    return area_raised > GRASP_AREA_FACTOR * area_at_grasp
