"""Network input assembly and training-time augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .types import BACKGROUND, HAND, OBJECT, SampleTuple

DEFAULT_TINT = (0.0, 0.0, 1.0)


def network_input(
    hand_image: np.ndarray,
    hand_fg: np.ndarray,
    object_fg: np.ndarray,
    tint: tuple[float, float, float] = DEFAULT_TINT,
) -> np.ndarray:
    """Build the six-channel network input.

    Channels 0-2 hold the background-removed hand. Channels 3-5 hold the
    naive overlay: the tinted object silhouette drawn strictly above the
    hand, zero elsewhere. Correcting that overlay is the network's job.
    """
    if hand_image.shape[:2] != hand_fg.shape or hand_fg.shape != object_fg.shape:
        raise ValueError("network_input: raster shapes disagree")
    hand = hand_fg.astype(bool)[..., None]
    obj = object_fg.astype(bool)[..., None]
    masked_hand = np.where(hand, hand_image, 0.0)
    tint_arr = np.asarray(tint, np.float32).reshape(1, 1, 3)
    overlay = np.where(obj, tint_arr, masked_hand)
    return np.concatenate([masked_hand, overlay], axis=2).astype(np.float32)


def preprocess_pair(
    sample: SampleTuple, tint: tuple[float, float, float] = DEFAULT_TINT
) -> np.ndarray:
    return network_input(sample.hand_image, sample.hand_fg, sample.object_fg, tint)


@dataclass
class AugmentPolicy:
    p_hflip: float = 0.5
    p_rotate: float = 0.5
    max_rotate_deg: float = 20.0
    p_sharpness: float = 0.3
    sharpness_range: tuple[float, float] = (0.6, 1.8)
    p_brightness: float = 0.5
    brightness_range: tuple[float, float] = (-0.15, 0.15)
    p_contrast: float = 0.5
    contrast_range: tuple[float, float] = (0.8, 1.25)


def _rotate_image(img: np.ndarray, angle: float) -> np.ndarray:
    out = ndimage.rotate(img, angle, axes=(1, 0), reshape=False, order=1,
                         mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _rotate_labels(mask: np.ndarray, angle: float) -> np.ndarray:
    # nearest-neighbor keeps label maps categorical; the identical sampling
    # grid across rasters keeps labels consistent with the foregrounds
    return ndimage.rotate(mask, angle, axes=(1, 0), reshape=False, order=0,
                          mode="constant", cval=0).astype(mask.dtype)


def _adjust_sharpness(img: np.ndarray, factor: float) -> np.ndarray:
    blurred = ndimage.uniform_filter(img, size=(3, 3, 1), mode="nearest")
    return np.clip(blurred + factor * (img - blurred), 0.0, 1.0).astype(np.float32)


def _adjust_brightness(img: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(img + delta, 0.0, 1.0).astype(np.float32)


def _adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = float(img.mean())
    return np.clip(mean + (img - mean) * factor, 0.0, 1.0).astype(np.float32)


def _reclip_labels(gt, hand_fg, object_fg):
    hand = hand_fg.astype(bool)
    obj = object_fg.astype(bool)
    out = np.full_like(gt, BACKGROUND)
    out[(gt == OBJECT) & obj] = OBJECT
    out[(gt == HAND) & hand] = HAND
    return out


def augment(sample: SampleTuple, rng: np.random.Generator,
            policy: AugmentPolicy | None = None) -> SampleTuple:
    """Apply the flip/rotate/sharpness/brightness/contrast policy.

    Geometric transforms hit every raster (labels with nearest-neighbor
    resampling); photometric transforms hit the two images only.
    """
    policy = policy or AugmentPolicy()
    hand_image = sample.hand_image
    object_render = sample.object_render
    hand_fg = sample.hand_fg
    object_fg = sample.object_fg
    gt = sample.gt

    if rng.random() < policy.p_hflip:
        hand_image = hand_image[:, ::-1].copy()
        object_render = object_render[:, ::-1].copy()
        hand_fg = hand_fg[:, ::-1].copy()
        object_fg = object_fg[:, ::-1].copy()
        gt = gt[:, ::-1].copy()

    if rng.random() < policy.p_rotate:
        angle = float(rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg))
        if angle != 0.0:
            hand_image = _rotate_image(hand_image, angle)
            object_render = _rotate_image(object_render, angle)
            hand_fg = _rotate_labels(hand_fg, angle)
            object_fg = _rotate_labels(object_fg, angle)
            gt = _rotate_labels(gt, angle)

    if rng.random() < policy.p_sharpness:
        factor = float(rng.uniform(*policy.sharpness_range))
        hand_image = _adjust_sharpness(hand_image, factor)
        object_render = _adjust_sharpness(object_render, factor)

    if rng.random() < policy.p_brightness:
        delta = float(rng.uniform(*policy.brightness_range))
        hand_image = _adjust_brightness(hand_image, delta)
        object_render = _adjust_brightness(object_render, delta)

    if rng.random() < policy.p_contrast:
        factor = float(rng.uniform(*policy.contrast_range))
        hand_image = _adjust_contrast(hand_image, factor)
        object_render = _adjust_contrast(object_render, factor)

    gt = _reclip_labels(gt, hand_fg, object_fg)
    return SampleTuple(
        hand_image=hand_image,
        hand_fg=hand_fg,
        object_render=object_render,
        object_fg=object_fg,
        gt=gt,
        meta=replace(sample.meta),
    )
