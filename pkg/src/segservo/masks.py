"""Binary segmentation masks and the image features derived from them.

Pixel convention used everywhere in this package: pixel (0, 0) is the
top-left pixel and coordinates refer to pixel centers.  The x axis runs
right along columns, the y axis runs down along rows.  Centroids are
real-valued, so a feature can sit between pixel centers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .errors import DimensionMismatchError, EmptyMaskError, EmptyUnionError


class Centroid(NamedTuple):
    """Sub-pixel centroid of a mask's foreground, (x, y) order."""

    x: float
    y: float


@dataclass(frozen=True)
class BinaryMask:
    """Immutable boolean image, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise DimensionMismatchError(
                f"mask must be 2-D, got shape {arr.shape}"
            )
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask values must be 0 or 1")
            arr = arr.astype(np.bool_)
        else:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self) -> int:
        return hash((self.pixels.shape, self.pixels.tobytes()))


def area(mask: BinaryMask) -> int:
    """Foreground pixel count."""
    return int(np.count_nonzero(mask.pixels))


def centroid(mask: BinaryMask) -> Centroid:
    """Mean (x, y) position of the foreground pixel centers.

    Raises EmptyMaskError when the mask has no foreground.
    """
    ys, xs = np.nonzero(mask.pixels)
    if xs.size == 0:
        raise EmptyMaskError("centroid of an empty mask is undefined")
    return Centroid(float(xs.mean()), float(ys.mean()))


def features(mask: BinaryMask) -> tuple[int, float, float]:
    """(area, centroid_x, centroid_y) in one pass."""
    c = centroid(mask)
    return area(mask), c.x, c.y


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two same-shaped masks.

    Raises DimensionMismatchError on shape mismatch and EmptyUnionError
    when both masks are empty (0/0 is undefined, not 0).
    """
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatchError(
            f"mask shapes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    inter = int(np.count_nonzero(a.pixels & b.pixels))
    union = int(np.count_nonzero(a.pixels | b.pixels))
    if union == 0:
        raise EmptyUnionError("jaccard of two empty masks is undefined")
    return inter / union


def to_text(mask: BinaryMask) -> str:
    """Serialize to the portable bitmap text form.

    Layout: a 'P1' magic line, a 'width height' line, then height rows
    of space-separated 0/1 values.  Round-trips exactly through
    from_text for every mask.
    """
    buf = io.StringIO()
    buf.write("P1\n")
    buf.write(f"{mask.width} {mask.height}\n")
    for row in mask.pixels:
        buf.write(" ".join("1" if v else "0" for v in row))
        buf.write("\n")
    return buf.getvalue()


def from_text(text: str) -> BinaryMask:
    """Parse the text form produced by to_text."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != "P1":
        raise ValueError("expected a P1 header line")
    try:
        width, height = (int(tok) for tok in lines[1].split())
    except (IndexError, ValueError) as exc:
        raise ValueError("expected a 'width height' line") from exc
    if width <= 0 or height <= 0:
        raise ValueError("mask dimensions must be positive")
    tokens = " ".join(lines[2:]).split()
    if len(tokens) != width * height:
        raise ValueError(
            f"expected {width * height} pixel values, got {len(tokens)}"
        )
    values = np.array([int(tok) for tok in tokens], dtype=np.int64)
    if not np.isin(values, (0, 1)).all():
        raise ValueError("pixel values must be 0 or 1")
    return BinaryMask(values.reshape(height, width).astype(np.bool_))


def save(mask: BinaryMask, path: Union[str, "io.PathLike[str]"]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(to_text(mask))


def load(path: Union[str, "io.PathLike[str]"]) -> BinaryMask:
    with open(path, "r", encoding="ascii") as fh:
        return from_text(fh.read())
