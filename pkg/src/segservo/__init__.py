"""Segmentation-driven visual servoing in a deterministic simulated world.

The package provides:

- binary mask features (area, centroid) and mask file I/O (masks)
- a synthetic world: kinematic chains, a pinhole camera, and exact
  per-pixel silhouette rendering (geometry, scene)
- optional seeded segmentation noise (perception)
- a visual servo controller whose inverse-jacobian estimate is learned
  online by a coupling-masked secant update (servo)
- monocular depth estimation from silhouette area under camera motion
  (depth)
- gripper-template grasp orientation selection and area-based grasp
  verification (grasp)
- experiment runners and a command line around them (scenario,
  experiments, cli)
"""

from .errors import SegServoError

__all__ = ["SegServoError"]
__version__ = "0.1.0"
