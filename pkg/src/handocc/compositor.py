"""Label-map post-processing and final frame composition."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .data import DEFAULT_TINT, network_input
from .errors import ConfigError
from .model import nets_from_checkpoint, load_checkpoint
from .storage import read_manifest, load_sample, image_to_u8
from .types import BACKGROUND, HAND, OBJECT


@dataclass
class PostprocessConfig:
    median_kernel: int = 3
    close_kernel: int = 5
    close_shape: str = "disk"  # "disk" or "square"

    def validate(self) -> None:
        for name, k in (("median_kernel", self.median_kernel),
                        ("close_kernel", self.close_kernel)):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be an odd integer >= 1, got {k}")
        if self.close_shape not in ("disk", "square"):
            raise ConfigError("close_shape must be 'disk' or 'square'")


@dataclass
class ComposedFrame:
    pixels: np.ndarray      # (H, W, 3) float32
    provenance: np.ndarray  # (H, W) uint8, which source supplied each pixel


def _footprint(kernel: int, shape: str) -> np.ndarray:
    if shape == "square":
        return np.ones((kernel, kernel), bool)
    r = kernel // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def binary_close(mask: np.ndarray, kernel: int, shape: str = "disk") -> np.ndarray:
    """Dilation then erosion on a zero-padded canvas, so border behaviour
    matches the closing of the mask embedded in an empty plane (and the
    operation stays exactly idempotent)."""
    if kernel <= 1:
        return mask.astype(bool)
    fp = _footprint(kernel, shape)
    pad = kernel
    padded = np.pad(mask.astype(bool), pad, mode="constant", constant_values=False)
    dilated = ndimage.maximum_filter(padded, footprint=fp, mode="constant", cval=False)
    closed = ndimage.minimum_filter(dilated, footprint=fp, mode="constant", cval=False)
    return closed[pad:-pad, pad:-pad]


def median_labels(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Windowed majority vote over the label classes; ties keep the center
    pixel's label (a numeric median is meaningless on categories)."""
    if kernel <= 1:
        return mask.copy()
    window = np.ones((kernel, kernel), np.int32)
    counts = np.stack([
        ndimage.convolve((mask == c).astype(np.int32), window,
                         mode="constant", cval=0)
        for c in (BACKGROUND, OBJECT, HAND)
    ])
    best = counts.max(axis=0)
    winner = counts.argmax(axis=0).astype(np.uint8)
    center_count = np.take_along_axis(
        counts, mask.astype(np.intp)[None], axis=0)[0]
    return np.where(center_count == best, mask, winner).astype(np.uint8)


def postprocess(mask: np.ndarray, cfg: PostprocessConfig | None = None,
                hand_fg: np.ndarray | None = None,
                object_fg: np.ndarray | None = None) -> np.ndarray:
    """Majority-vote median, then a morphological close of the hand layer.

    When the foregrounds are supplied the output is rebuilt against them:
    outside the overlap the labels are fully determined by the silhouettes,
    and inside it the closed hand layer decides, with the object layer as
    its complement.
    """
    cfg = cfg or PostprocessConfig()
    cfg.validate()
    smoothed = median_labels(mask.astype(np.uint8), cfg.median_kernel)
    hand_layer = binary_close(smoothed == HAND, cfg.close_kernel, cfg.close_shape)
    if hand_fg is None or object_fg is None:
        out = smoothed.copy()
        out[hand_layer] = HAND
        return out
    hand = hand_fg.astype(bool)
    obj = object_fg.astype(bool)
    overlap = hand & obj
    out = np.full(mask.shape, BACKGROUND, np.uint8)
    out[hand & ~obj] = HAND
    out[obj & ~hand] = OBJECT
    out[overlap] = np.where(hand_layer[overlap], HAND, OBJECT)
    return out


def compose(hand: np.ndarray, hand_fg: np.ndarray, object_render: np.ndarray,
            object_fg: np.ndarray, mask: np.ndarray,
            background: np.ndarray | None = None) -> ComposedFrame:
    """Three-way per-pixel select driven by the occlusion mask.

    A label claim outside its own foreground falls through in the order
    hand -> object -> background. With no explicit background the raw hand
    image (the untouched camera frame) shows through.
    """
    if background is None:
        background = hand
    shapes = {hand.shape, object_render.shape, background.shape}
    if len(shapes) != 1 or hand.shape[:2] != mask.shape or mask.shape != hand_fg.shape \
            or mask.shape != object_fg.shape:
        raise ValueError("compose: raster shapes disagree")
    handm = hand_fg.astype(bool)
    objm = object_fg.astype(bool)
    provenance = np.full(mask.shape, BACKGROUND, np.uint8)
    provenance[(mask == OBJECT) & objm] = OBJECT
    provenance[(mask == HAND) & ~handm & objm] = OBJECT
    provenance[(mask == HAND) & handm] = HAND
    sel = provenance[..., None]
    pixels = np.where(sel == HAND, hand,
                      np.where(sel == OBJECT, object_render, background))
    return ComposedFrame(pixels=pixels.astype(np.float32), provenance=provenance)


def process_frame(occ_net, seg_net, hand_image: np.ndarray,
                  object_render: np.ndarray, object_fg: np.ndarray,
                  hand_fg: np.ndarray | None = None,
                  post_cfg: PostprocessConfig | None = None,
                  tint=DEFAULT_TINT,
                  background: np.ndarray | None = None):
    """Predict the occlusion mask for one frame and compose it."""
    if hand_fg is None:
        with torch.no_grad():
            probs = seg_net(torch.from_numpy(hand_image).permute(2, 0, 1))
        hand_fg = (probs[0].numpy() > 0.5).astype(np.uint8)
    x = network_input(hand_image, hand_fg, object_fg, tint)
    with torch.no_grad():
        pyramid = occ_net(torch.from_numpy(x).permute(2, 0, 1))
    pred = pyramid.final.argmax(dim=1)[0].numpy().astype(np.uint8)
    pred = postprocess(pred, post_cfg, hand_fg, object_fg)
    frame = compose(hand_image, hand_fg, object_render, object_fg, pred,
                    background)
    return frame, pred


def run_pipeline(input_dir: Path | str, checkpoint_path: Path | str,
                 out_dir: Path | str,
                 post_cfg: PostprocessConfig | None = None,
                 tint=DEFAULT_TINT,
                 background: np.ndarray | None = None,
                 use_seg: bool = False) -> dict:
    """Batch compose every sample of a stored dataset; per-file failures are
    recorded and the run continues."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    occ, seg, _ = nets_from_checkpoint(load_checkpoint(checkpoint_path))
    manifest = read_manifest(input_dir)
    summary = {"processed": 0, "failed": 0, "failures": []}
    for entry in manifest.samples:
        idx = entry["id"]
        try:
            sample = load_sample(input_dir, entry, manifest.size)
            frame, pred = process_frame(
                occ, seg, sample.hand_image, sample.object_render,
                sample.object_fg,
                hand_fg=None if use_seg else sample.hand_fg,
                post_cfg=post_cfg, tint=tint, background=background)
            Image.fromarray(image_to_u8(frame.pixels)).save(
                out_dir / f"frame_{idx:05d}.png")
            Image.fromarray(pred).save(out_dir / f"mask_{idx:05d}.png")
            summary["processed"] += 1
        except Exception as exc:  # keep going; report at the end
            summary["failed"] += 1
            summary["failures"].append({"id": idx, "error": str(exc)})
    return summary
