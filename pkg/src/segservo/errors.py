"""Exception types shared across the package."""


class SegServoError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SegServoError):
    """A config file is missing, malformed, or inconsistent."""


class DimensionMismatchError(SegServoError):
    """Two arrays that must share a shape do not."""


class EmptyMaskError(SegServoError):
    """An operation that needs foreground pixels got an all-background mask."""


class EmptyUnionError(SegServoError):
    """Jaccard overlap is undefined because both masks are empty."""


class MissingJointError(SegServoError):
    """A joint state vector lacks a value for a joint in the chain."""


class LimitViolationError(SegServoError):
    """A joint value lies outside its configured limits."""


class BehindCameraError(SegServoError):
    """A point at or behind the image plane cannot be projected."""


class UnknownObjectError(SegServoError):
    """A scene lookup referenced an object id that does not exist."""


class InsufficientDataError(SegServoError):
    """Fewer observations than the estimator needs."""


class DegenerateSystemError(SegServoError):
    """The regression system has no unique solution."""


class InvalidBaselineError(SegServoError):
    """A reference measurement needed for a comparison is unusable."""


class ObjectLostError(SegServoError):
    """The tracked object left the camera view and could not be recovered."""


class GraspFailedError(SegServoError):
    """The grasp pipeline exhausted its retries without a verified grasp."""


class NonConvergenceError(SegServoError):
    """An iterative procedure hit its step budget before meeting tolerance."""


class ReplayMismatchError(SegServoError):
    """A replayed trajectory failed to reproduce its logged measurements."""
