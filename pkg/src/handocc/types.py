"""Core raster types shared by the whole pipeline.

Conventions used everywhere:

* images are float32 arrays of shape (H, W, 3) with values in [0, 1]
* foreground masks are uint8 arrays of shape (H, W) with values in {0, 1}
* label maps are uint8 arrays of shape (H, W) over {0, 1, 2} meaning
  background, object, hand

H and W must be divisible by 32 so the five stride-2 encoder stages line up
with the decoder upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKGROUND = 0
OBJECT = 1
HAND = 2

STRIDE_MULTIPLE = 32


@dataclass
class SampleMeta:
    object_name: str
    pose_id: str
    origin: str = "synthetic"  # "synthetic" or "real"
    seed: int = 0
    seen: bool = True


@dataclass
class SampleTuple:
    """One training/eval unit: hand photo, object render, masks, labels."""

    hand_image: np.ndarray
    hand_fg: np.ndarray
    object_render: np.ndarray
    object_fg: np.ndarray
    gt: np.ndarray
    meta: SampleMeta = field(default_factory=lambda: SampleMeta("", ""))

    @property
    def height(self) -> int:
        return self.hand_image.shape[0]

    @property
    def width(self) -> int:
        return self.hand_image.shape[1]


def check_image(img: np.ndarray, name: str = "image") -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name}: expected (H, W, 3), got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name}: values outside [0, 1]")
    h, w = img.shape[:2]
    if h % STRIDE_MULTIPLE or w % STRIDE_MULTIPLE:
        raise ValueError(f"{name}: {h}x{w} not divisible by {STRIDE_MULTIPLE}")


def check_mask(mask: np.ndarray, name: str = "mask") -> None:
    if mask.ndim != 2:
        raise ValueError(f"{name}: expected (H, W), got {mask.shape}")
    values = np.unique(mask)
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name}: values outside {{0, 1}}")


def check_trimask(gt: np.ndarray, hand_fg: np.ndarray, object_fg: np.ndarray) -> None:
    """Label containment: hand labels inside hand_fg, object labels inside
    object_fg, nothing labeled outside both, and every overlap pixel decided."""
    if gt.shape != hand_fg.shape or gt.shape != object_fg.shape:
        raise ValueError("trimask/foreground shape mismatch")
    if not np.isin(np.unique(gt), (BACKGROUND, OBJECT, HAND)).all():
        raise ValueError("trimask: labels outside {0, 1, 2}")
    hand = hand_fg.astype(bool)
    obj = object_fg.astype(bool)
    if ((gt == HAND) & ~hand).any():
        raise ValueError("trimask: hand label outside hand foreground")
    if ((gt == OBJECT) & ~obj).any():
        raise ValueError("trimask: object label outside object foreground")
    if ((gt != BACKGROUND) & ~hand & ~obj).any():
        raise ValueError("trimask: nonzero label outside both foregrounds")
    overlap = hand & obj
    if (overlap & (gt == BACKGROUND)).any():
        raise ValueError("trimask: background label inside the overlap region")


def validate_sample(sample: SampleTuple) -> None:
    check_image(sample.hand_image, "hand_image")
    check_image(sample.object_render, "object_render")
    check_mask(sample.hand_fg, "hand_fg")
    check_mask(sample.object_fg, "object_fg")
    shapes = {
        sample.hand_image.shape[:2],
        sample.object_render.shape[:2],
        sample.hand_fg.shape,
        sample.object_fg.shape,
        sample.gt.shape,
    }
    if len(shapes) != 1:
        raise ValueError(f"sample rasters disagree on H x W: {shapes}")
    check_trimask(sample.gt, sample.hand_fg, sample.object_fg)


def derive_overlap(hand_fg: np.ndarray, object_fg: np.ndarray) -> np.ndarray:
    """Pixelwise intersection of the hand and object foregrounds.

    This is the only region where the occlusion decision is nontrivial.
    """
    if hand_fg.shape != object_fg.shape:
        raise ValueError(
            f"foreground shape mismatch: {hand_fg.shape} vs {object_fg.shape}"
        )
    return (hand_fg.astype(bool) & object_fg.astype(bool)).astype(np.uint8)
