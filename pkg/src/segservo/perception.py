"""Segmentation measurements, optionally corrupted by seeded noise.

Noise is applied to the exact rendered silhouette in a fixed order:
boundary morphology (grow or shrink by a fixed pixel radius), then
per-pixel foreground dropout, then spurious elliptical blobs.  All
randomness comes from numpy's default_rng seeded with the pair
(seed, frame_index), so any frame can be regenerated bit-exactly in
isolation.  With no noise configured the RNG is never created.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, area, centroid
from .scene import Scene, forward_kinematics, render_silhouette


@dataclass(frozen=True)
class NoiseModel:
    """Segmentation corruption parameters; all default to off."""

    seed: int = 0
    boundary_px: int = 0
    dropout_prob: float = 0.0
    blob_rate: float = 0.0
    blob_size: Tuple[float, float] = (2.0, 6.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.blob_rate < 0.0:
            raise ValueError("blob_rate must be non-negative")
        lo, hi = self.blob_size
        if not 0.0 < lo <= hi:
            raise ValueError("blob_size must satisfy 0 < lo <= hi")

    @property
    def active(self) -> bool:
        return (
            self.boundary_px != 0
            or self.dropout_prob > 0.0
            or self.blob_rate > 0.0
        )


def _disk_structure(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (xx * xx + yy * yy) <= radius * radius


def _stamp_ellipse(
    pixels: np.ndarray, cx: float, cy: float, a: float, b: float, theta: float
) -> None:
    h, w = pixels.shape
    ys, xs = np.ogrid[0:h, 0:w]
    dx = xs - cx
    dy = ys - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    pixels |= (u * u) / (a * a) + (v * v) / (b * b) <= 1.0


def apply_noise(mask: BinaryMask, model: NoiseModel, frame_index: int) -> BinaryMask:
    """Corrupt one frame; a pure function of (mask, model, frame_index)."""
    if not model.active:
        return mask
    pixels = mask.pixels.copy()
    if model.boundary_px > 0:
        pixels = ndimage.binary_dilation(
            pixels, structure=_disk_structure(model.boundary_px)
        )
    elif model.boundary_px < 0:
        pixels = ndimage.binary_erosion(
            pixels, structure=_disk_structure(-model.boundary_px)
        )
    rng = np.random.default_rng([model.seed, frame_index])
    if model.dropout_prob > 0.0:
        draw = rng.random(pixels.shape)
        pixels &= ~(draw < model.dropout_prob)
    if model.blob_rate > 0.0:
        count = int(rng.poisson(model.blob_rate))
        h, w = pixels.shape
        lo, hi = model.blob_size
        for _ in range(count):
            cx = rng.uniform(0.0, w)
            cy = rng.uniform(0.0, h)
            a = rng.uniform(lo, hi)
            b = rng.uniform(lo, hi)
            theta = rng.uniform(0.0, np.pi)
            _stamp_ellipse(pixels, cx, cy, a, b, theta)
    return BinaryMask(pixels)


#: Renders the tracked object as seen from joint state q at a frame index.
Segmenter = Callable[[Mapping[str, float], int], BinaryMask]


def make_segmenter(
    scene_for_frame: Callable[[], Scene],
    camera_name: str,
    object_id: str,
    noise: Optional[NoiseModel] = None,
) -> Segmenter:
    """Build a segmenter over a possibly-changing scene.

    scene_for_frame is called per frame so callers that move objects
    between frames (grasp transport, trial resets) stay consistent.
    """

    def segment(q: Mapping[str, float], frame_index: int) -> BinaryMask:
        scene = scene_for_frame()
        camera = scene.cameras[camera_name]
        chain = scene.chains[scene.camera_chain[camera_name]]
        pose = forward_kinematics(chain, q)
        mask = render_silhouette(camera, pose, scene.get_object(object_id))
        if noise is not None:
            mask = apply_noise(mask, noise, frame_index)
        return mask

    return segment


def make_feature_source(
    segmenter: Segmenter,
) -> Callable[[Mapping[str, float], int], Optional[Tuple[int, float, float]]]:
    """Adapt a segmenter to the servo loop's measurement interface.

    Returns (area, centroid_x, centroid_y), or None when the mask is
    empty, which the servo loop treats as losing the object.
    """

    def source(q: Mapping[str, float], frame_index: int):
        mask = segmenter(q, frame_index)
        if not mask.pixels.any():
            return None
        c = centroid(mask)
        return area(mask), c.x, c.y

    return source
