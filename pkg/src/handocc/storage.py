"""Dataset persistence: 8-bit PNG rasters plus a JSON manifest.

Layout on disk:

    dataset/
      manifest.json
      hand/00000.png        images, 8-bit RGB
      object/00000.png
      hand_fg/00000.png     masks, 8-bit single channel, raw label values
      object_fg/00000.png
      gt/00000.png

Masks round-trip bit-identically; images round-trip to within one 8-bit
quantization step per channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptRasterError,
    ManifestError,
    ManifestVersionError,
    MissingFileError,
)
from .types import SampleMeta, SampleTuple

MANIFEST_VERSION = "1"
MANIFEST_NAME = "manifest.json"
RASTER_DIRS = ("hand", "object", "hand_fg", "object_fg", "gt")


@dataclass
class Manifest:
    version: str
    size: tuple[int, int]
    samples: list[dict]


def image_to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def u8_to_image(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0).astype(np.float32)


def save_sample(root: Path, index: int, sample: SampleTuple) -> dict:
    """Write the five rasters and return the manifest entry."""
    root = Path(root)
    name = f"{index:05d}.png"
    rasters = {
        "hand": image_to_u8(sample.hand_image),
        "object": image_to_u8(sample.object_render),
        "hand_fg": sample.hand_fg.astype(np.uint8),
        "object_fg": sample.object_fg.astype(np.uint8),
        "gt": sample.gt.astype(np.uint8),
    }
    files = {}
    for key, arr in rasters.items():
        sub = root / key
        sub.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(sub / name)
        files[key] = f"{key}/{name}"
    meta = sample.meta
    return {
        "id": index,
        "object_name": meta.object_name,
        "pose_id": meta.pose_id,
        "origin": meta.origin,
        "seed": meta.seed,
        "seen": meta.seen,
        "files": files,
    }


def _load_raster(root: Path, rel: str, expect_hw: tuple[int, int],
                 channels: int) -> np.ndarray:
    path = Path(root) / rel
    if not path.exists():
        raise MissingFileError(f"missing raster file: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptRasterError(f"cannot decode raster: {path}: {exc}") from exc
    want = expect_hw if channels == 1 else (*expect_hw, channels)
    if arr.shape != want:
        raise CorruptRasterError(
            f"raster shape {arr.shape} != manifest size {want}: {path}"
        )
    return arr


def load_sample(root: Path, entry: dict, size: tuple[int, int]) -> SampleTuple:
    files = entry["files"]
    hand = u8_to_image(_load_raster(root, files["hand"], size, 3))
    obj = u8_to_image(_load_raster(root, files["object"], size, 3))
    hand_fg = _load_raster(root, files["hand_fg"], size, 1).astype(np.uint8)
    object_fg = _load_raster(root, files["object_fg"], size, 1).astype(np.uint8)
    gt = _load_raster(root, files["gt"], size, 1).astype(np.uint8)
    meta = SampleMeta(
        object_name=entry["object_name"],
        pose_id=entry["pose_id"],
        origin=entry.get("origin", "synthetic"),
        seed=entry.get("seed", 0),
        seen=entry.get("seen", True),
    )
    return SampleTuple(hand, hand_fg, obj, object_fg, gt, meta)


def write_manifest(root: Path, size: tuple[int, int], entries: list[dict]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": MANIFEST_VERSION,
        "size": [int(size[0]), int(size[1])],
        "samples": entries,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_manifest(root: Path) -> Manifest:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise MissingFileError(f"missing manifest: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {path}: {exc}") from exc
    version = payload.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(
            f"manifest version {version!r} unsupported (want {MANIFEST_VERSION!r})"
        )
    try:
        size = tuple(int(v) for v in payload["size"])
        samples = list(payload["samples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest missing required fields: {exc}") from exc
    ids = [entry.get("id") for entry in samples]
    if len(ids) != len(set(ids)):
        raise ManifestError("manifest contains duplicate sample ids")
    return Manifest(version=version, size=(size[0], size[1]), samples=samples)


def save_dataset(root: Path, samples: list[SampleTuple]) -> Path:
    entries = [save_sample(root, i, s) for i, s in enumerate(samples)]
    if not samples:
        return write_manifest(root, (0, 0), entries)
    first = samples[0]
    return write_manifest(root, (first.height, first.width), entries)


def load_dataset(root: Path) -> list[SampleTuple]:
    """Load every sample, in manifest order."""
    manifest = read_manifest(root)
    return [load_sample(root, entry, manifest.size) for entry in manifest.samples]
