"""Procedural generator for hand-grabs-object scenes.

Each sample is drawn on a square canvas: a parametric object silhouette plus
a hand built from a palm ellipse, five finger capsules, and a forearm stub.
Every hand part carries a front/behind flag taken from the grab pose
template, which fixes the ground-truth label wherever the hand and object
silhouettes intersect. Labels are therefore exact by construction.

Generation is a pure function of (seed, spec): the RNG stream is derived
from the seed plus stable hashes of the object and pose names.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .types import HAND, OBJECT, STRIDE_MULTIPLE, SampleMeta, SampleTuple


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    pose_id: str | None = None


@dataclass(frozen=True)
class PoseTemplate:
    pose_id: str
    approach_rel_deg: float = 0.0       # palm direction relative to the grip axis
    approach_jitter_deg: float = 18.0
    finger_front: tuple[bool, bool, bool, bool] = (True, True, True, True)
    thumb_front: bool = True
    palm_front: bool = False
    finger_len: float = 1.0
    spread_deg: float = 44.0
    curl_deg: float = 16.0
    thumb_side: float = 1.0


# ---------------------------------------------------------------------------
# geometry primitives (pixel-center coordinates)


def _coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    return xs + 0.5, ys + 0.5


def _ellipse(xs, ys, cx, cy, r_along, r_across, angle_deg) -> np.ndarray:
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    u = (xs - cx) * ca + (ys - cy) * sa
    v = -(xs - cx) * sa + (ys - cy) * ca
    return (u / r_along) ** 2 + (v / r_across) ** 2 <= 1.0


def _capsule(xs, ys, x0, y0, x1, y1, radius) -> np.ndarray:
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = max(dx * dx + dy * dy, 1e-9)
    t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_len2, 0.0, 1.0)
    px = x0 + t * dx
    py = y0 + t * dy
    return (xs - px) ** 2 + (ys - py) ** 2 <= radius * radius


def _round_rect(xs, ys, cx, cy, half_w, half_h, angle_deg, corner) -> np.ndarray:
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    u = (xs - cx) * ca + (ys - cy) * sa
    v = -(xs - cx) * sa + (ys - cy) * ca
    du = np.maximum(np.abs(u) - (half_w - corner), 0.0)
    dv = np.maximum(np.abs(v) - (half_h - corner), 0.0)
    return du * du + dv * dv <= corner * corner


def _unit(angle_rad: float) -> tuple[float, float]:
    return math.cos(angle_rad), math.sin(angle_rad)


# ---------------------------------------------------------------------------
# object builders: return (foreground, base color map, grips per pose)
# A grip is (gx, gy, halfwidth, axis_deg): the point the hand closes around,
# how far the silhouette extends across the grab, and the crossing axis.


def _shade(xs, ys, size, angle_deg, lo=0.82, hi=1.12) -> np.ndarray:
    a = math.radians(angle_deg)
    proj = (xs * math.cos(a) + ys * math.sin(a)) / size
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-6)
    return lo + (hi - lo) * proj


def _paint(render, mask, color, shading) -> None:
    for c in range(3):
        render[..., c][mask] = color[c] * shading[mask]


def _build_bar(rng, size, xs, ys):
    s = float(size)
    angle = rng.uniform(-25.0, 25.0)
    half_len = s * 0.30 * rng.uniform(0.9, 1.05)
    thick = s * 0.068 * rng.uniform(0.9, 1.1)
    cx = s / 2 + rng.uniform(-0.05, 0.05) * s
    cy = s / 2 + rng.uniform(-0.05, 0.05) * s
    dx, dy = _unit(math.radians(angle))
    fg = _capsule(xs, ys, cx - dx * half_len, cy - dy * half_len,
                  cx + dx * half_len, cy + dy * half_len, thick)
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, fg, (0.58, 0.40, 0.22), _shade(xs, ys, size, angle))
    t = rng.uniform(-0.35, 0.35)
    grip = (cx + dx * t * half_len, cy + dy * t * half_len, thick, angle + 90.0)
    return fg, render, {"overhand": grip}


def _build_disk(rng, size, xs, ys):
    s = float(size)
    r = s * 0.13 * rng.uniform(0.9, 1.1)
    cx = s / 2 + rng.uniform(-0.05, 0.05) * s
    cy = s / 2 + rng.uniform(-0.05, 0.05) * s
    fg = _ellipse(xs, ys, cx, cy, r, r, 0.0)
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, fg, (0.72, 0.20, 0.18), _shade(xs, ys, size, rng.uniform(0, 360)))
    grip = (cx, cy, r, rng.uniform(0.0, 360.0))
    return fg, render, {"palm": grip}


def _build_capsule(rng, size, xs, ys):
    s = float(size)
    angle = 90.0 + rng.uniform(-20.0, 20.0)
    half_len = s * 0.21 * rng.uniform(0.9, 1.05)
    radius = s * 0.066 * rng.uniform(0.9, 1.1)
    cx = s / 2 + rng.uniform(-0.05, 0.05) * s
    cy = s / 2 + rng.uniform(-0.05, 0.05) * s
    dx, dy = _unit(math.radians(angle))
    fg = _capsule(xs, ys, cx - dx * half_len, cy - dy * half_len,
                  cx + dx * half_len, cy + dy * half_len, radius)
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, fg, (0.46, 0.50, 0.55), _shade(xs, ys, size, angle + 90))
    t = rng.uniform(-0.3, 0.3)
    grip = (cx + dx * t * half_len, cy + dy * t * half_len, radius, angle + 90.0)
    return fg, render, {"clench": grip}


def _build_paddle(rng, size, xs, ys):
    s = float(size)
    angle = rng.uniform(25.0, 65.0) * rng.choice((-1.0, 1.0))
    blade_r = s * 0.125 * rng.uniform(0.92, 1.08)
    handle_len = s * 0.24 * rng.uniform(0.9, 1.05)
    handle_r = s * 0.042 * rng.uniform(0.9, 1.1)
    cx = s / 2 + rng.uniform(-0.04, 0.04) * s
    cy = s / 2 + rng.uniform(-0.04, 0.04) * s
    dx, dy = _unit(math.radians(angle))
    hx0, hy0 = cx + dx * blade_r * 0.85, cy + dy * blade_r * 0.85
    hx1, hy1 = hx0 + dx * handle_len, hy0 + dy * handle_len
    blade = _ellipse(xs, ys, cx, cy, blade_r, blade_r * 0.92, angle)
    handle = _capsule(xs, ys, hx0, hy0, hx1, hy1, handle_r)
    fg = blade | handle
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, handle, (0.62, 0.47, 0.30), _shade(xs, ys, size, angle))
    _paint(render, blade, (0.68, 0.22, 0.20), _shade(xs, ys, size, angle + 90))
    mid = 0.5
    grips = {
        "shake": (hx0 + dx * handle_len * mid, hy0 + dy * handle_len * mid,
                  handle_r, angle + 90.0),
        "penhold": (cx + dx * blade_r * 0.55, cy + dy * blade_r * 0.55,
                    blade_r * 0.75, angle + 90.0),
    }
    return fg, render, grips


def _build_phone_slab(rng, size, xs, ys):
    s = float(size)
    angle = rng.uniform(-12.0, 12.0)
    half_w = s * 0.115 * rng.uniform(0.92, 1.08)
    half_h = s * 0.205 * rng.uniform(0.92, 1.08)
    corner = s * 0.03
    cx = s / 2 + rng.uniform(-0.04, 0.04) * s
    cy = s / 2 + rng.uniform(-0.04, 0.04) * s
    fg = _round_rect(xs, ys, cx, cy, half_w, half_h, angle + 90.0, corner)
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, fg, (0.14, 0.15, 0.19), _shade(xs, ys, size, angle + 45, 0.7, 1.6))
    dx, dy = _unit(math.radians(angle + 90.0))
    t = rng.uniform(-0.3, 0.3)
    grip = (cx + dx * t * half_h, cy + dy * t * half_h, half_w, angle)
    return fg, render, {"cradle": grip}


def _build_knob(rng, size, xs, ys):
    s = float(size)
    r = s * 0.105 * rng.uniform(0.9, 1.1)
    cx = s / 2 + rng.uniform(-0.05, 0.05) * s
    cy = s / 2 + rng.uniform(-0.05, 0.05) * s
    fg = _ellipse(xs, ys, cx, cy, r, r, 0.0)
    inner = _ellipse(xs, ys, cx, cy, r * 0.55, r * 0.55, 0.0)
    render = np.zeros((size, size, 3), np.float32)
    _paint(render, fg, (0.56, 0.53, 0.48), _shade(xs, ys, size, rng.uniform(0, 360)))
    _paint(render, inner, (0.38, 0.36, 0.33), _shade(xs, ys, size, 45))
    grip = (cx, cy, r, rng.uniform(0.0, 360.0))
    return fg, render, {"pinch": grip}


@dataclass(frozen=True)
class ObjectTemplate:
    name: str
    build: object
    poses: tuple[PoseTemplate, ...]


OBJECTS: dict[str, ObjectTemplate] = {
    "bar": ObjectTemplate("bar", _build_bar, (
        PoseTemplate("overhand"),
    )),
    "disk": ObjectTemplate("disk", _build_disk, (
        PoseTemplate("palm", spread_deg=42.0, finger_len=1.05),
    )),
    "capsule": ObjectTemplate("capsule", _build_capsule, (
        PoseTemplate("clench", spread_deg=30.0, thumb_front=True),
    )),
    "paddle": ObjectTemplate("paddle", _build_paddle, (
        PoseTemplate("shake", spread_deg=26.0),
        PoseTemplate("penhold", spread_deg=40.0, thumb_front=False,
                     finger_front=(True, True, True, False), finger_len=0.9),
    )),
    "phone-slab": ObjectTemplate("phone-slab", _build_phone_slab, (
        PoseTemplate("cradle", spread_deg=36.0, thumb_front=False),
    )),
    "knob": ObjectTemplate("knob", _build_knob, (
        PoseTemplate("pinch", spread_deg=46.0, finger_len=1.1),
    )),
}

OBJECT_NAMES = tuple(sorted(OBJECTS))

# painting order matters: later parts overwrite earlier ones, so the visible
# skin must be drawn fingers-over-palm to match the front/behind labels
_PART_TONE = {"forearm": 1.05, "palm": 1.0, "finger": 0.85, "thumb": 0.94}

_STYLES = {
    "synthetic": {
        "background": (0.34, 0.52, 0.38),
        "skin": (0.86, 0.62, 0.48),
        "noise": 0.010,
    },
    "real": {
        "background": (0.48, 0.49, 0.53),
        "skin": (0.74, 0.53, 0.41),
        "noise": 0.028,
    },
}


def _hand_parts(rng, size, xs, ys, grip, pose: PoseTemplate):
    """Returns [(kind, mask, is_front)] in painting order."""
    s = float(size)
    gx, gy, halfw, axis_deg = grip
    approach = math.radians(
        axis_deg
        + pose.approach_rel_deg
        + rng.choice((0.0, 180.0))
        + rng.uniform(-pose.approach_jitter_deg, pose.approach_jitter_deg)
    )
    ux, uy = _unit(approach)            # from grip point toward the palm
    vx, vy = -uy, ux                    # across the approach
    palm_across = s * 0.10 * rng.uniform(0.9, 1.1)
    palm_along = s * 0.12 * rng.uniform(0.9, 1.1)
    # the palm sinks into the silhouette so a behind-hand band survives
    # between the finger roots wherever the pose marks the palm as behind
    pcx = gx + ux * (halfw + 0.12 * palm_along)
    pcy = gy + uy * (halfw + 0.12 * palm_along)

    parts = []
    palm = _ellipse(xs, ys, pcx, pcy, palm_along, palm_across,
                    math.degrees(approach))
    fa_len = s * 0.5
    forearm = _capsule(xs, ys, pcx + ux * palm_along * 0.6,
                       pcy + uy * palm_along * 0.6,
                       pcx + ux * fa_len, pcy + uy * fa_len, s * 0.055)
    parts.append(("forearm", forearm, pose.palm_front))
    parts.append(("palm", palm, pose.palm_front))

    spread = math.radians(pose.spread_deg)
    curl = math.radians(pose.curl_deg) * rng.choice((-1.0, 1.0))
    for i, off in enumerate(np.linspace(-1.05, 1.05, 4)):
        bx = pcx - ux * palm_along * 0.55 + vx * off * palm_across
        by = pcy - uy * palm_along * 0.55 + vy * off * palm_across
        ang = approach + math.pi + off * spread / 2 + math.radians(rng.uniform(-4, 4))
        length = (2.0 * halfw + palm_along * 0.5) * pose.finger_len
        length *= rng.uniform(0.92, 1.08)
        width = s * 0.022 * rng.uniform(0.92, 1.08)
        d0x, d0y = _unit(ang)
        mx, my = bx + d0x * length * 0.55, by + d0y * length * 0.55
        d1x, d1y = _unit(ang + curl)
        ex, ey = mx + d1x * length * 0.45, my + d1y * length * 0.45
        finger = _capsule(xs, ys, bx, by, mx, my, width) | _capsule(
            xs, ys, mx, my, ex, ey, width)
        parts.append(("finger", finger, pose.finger_front[i]))

    tbx = pcx + vx * pose.thumb_side * palm_across * 0.9 - ux * palm_along * 0.1
    tby = pcy + vy * pose.thumb_side * palm_across * 0.9 - uy * palm_along * 0.1
    tang = approach + math.pi - pose.thumb_side * math.radians(
        62.0 + rng.uniform(-8, 8))
    tlen = (1.3 * halfw + palm_along * 0.35) * rng.uniform(0.9, 1.1)
    tdx, tdy = _unit(tang)
    thumb = _capsule(xs, ys, tbx, tby, tbx + tdx * tlen, tby + tdy * tlen,
                     s * 0.024)
    parts.append(("thumb", thumb, pose.thumb_front))
    return parts


def _rng_for(seed: int, name: str, pose_id: str | None) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    if pose_id is not None:
        entropy.append(zlib.crc32(pose_id.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def generate_synthetic_sample(
    seed: int,
    spec: ObjectSpec | str,
    size: int = 320,
    origin: str = "synthetic",
) -> SampleTuple:
    """Generate one fully-labeled scene; deterministic for a given (seed, spec)."""
    if isinstance(spec, str):
        spec = ObjectSpec(spec)
    if spec.name not in OBJECTS:
        raise ConfigError(
            f"unknown object {spec.name!r}; known: {', '.join(OBJECT_NAMES)}"
        )
    if size < 64 or size % STRIDE_MULTIPLE:
        raise ConfigError(f"size must be a multiple of {STRIDE_MULTIPLE}, >= 64")
    if origin not in _STYLES:
        raise ConfigError(f"origin must be one of {sorted(_STYLES)}")

    template = OBJECTS[spec.name]
    rng = _rng_for(seed, spec.name, spec.pose_id)
    if spec.pose_id is None:
        pose = template.poses[int(rng.integers(len(template.poses)))]
    else:
        matches = [p for p in template.poses if p.pose_id == spec.pose_id]
        if not matches:
            known = ", ".join(p.pose_id for p in template.poses)
            raise ConfigError(
                f"unknown pose {spec.pose_id!r} for {spec.name!r}; known: {known}"
            )
        pose = matches[0]

    xs, ys = _coords(size)
    object_fg_b, object_render, grips = template.build(rng, size, xs, ys)
    grip = grips[pose.pose_id]
    parts = _hand_parts(rng, size, xs, ys, grip, pose)

    hand_fg_b = np.zeros((size, size), bool)
    hand_front = np.zeros((size, size), bool)
    for _, mask, front in parts:
        hand_fg_b |= mask
        if front:
            hand_front |= mask

    overlap = hand_fg_b & object_fg_b
    gt = np.zeros((size, size), np.uint8)
    gt[object_fg_b] = OBJECT
    gt[hand_fg_b] = HAND
    gt[overlap & ~hand_front] = OBJECT

    style = _STYLES[origin]
    light = rng.uniform(0.0, 360.0)
    shade = _shade(xs, ys, size, light, 0.88, 1.1)
    hand_image = np.empty((size, size, 3), np.float32)
    bg = style["background"]
    bg_shade = _shade(xs, ys, size, light + 90.0, 0.92, 1.05)
    for c in range(3):
        hand_image[..., c] = bg[c] * bg_shade
    skin = style["skin"]
    for kind, mask, _ in parts:
        tone = _PART_TONE[kind]
        for c in range(3):
            hand_image[..., c][mask] = skin[c] * tone * shade[mask]
    hand_image += rng.normal(0.0, style["noise"], hand_image.shape).astype(np.float32)
    object_render += rng.normal(0.0, style["noise"] * 0.5,
                                object_render.shape).astype(np.float32)
    object_render[~object_fg_b] = 0.0
    np.clip(hand_image, 0.0, 1.0, out=hand_image)
    np.clip(object_render, 0.0, 1.0, out=object_render)

    meta = SampleMeta(object_name=spec.name, pose_id=pose.pose_id,
                      origin=origin, seed=int(seed))
    return SampleTuple(
        hand_image=hand_image.astype(np.float32),
        hand_fg=hand_fg_b.astype(np.uint8),
        object_render=object_render.astype(np.float32),
        object_fg=object_fg_b.astype(np.uint8),
        gt=gt,
        meta=meta,
    )


def sample_seed(base_seed: int, index: int) -> int:
    """Independent per-sample seed stream derived from (base_seed, index)."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, int(index)])
    return int(ss.generate_state(1)[0])


def generate_dataset(
    count: int,
    base_seed: int,
    objects: list[str] | None = None,
    size: int = 320,
    origin: str = "synthetic",
    unseen: set[str] | None = None,
) -> list[SampleTuple]:
    """Round-robin over the requested objects with per-sample seed streams."""
    names = list(objects) if objects else list(OBJECT_NAMES)
    for name in names:
        if name not in OBJECTS:
            raise ConfigError(
                f"unknown object {name!r}; known: {', '.join(OBJECT_NAMES)}"
            )
    unseen = unseen or set()
    samples = []
    for i in range(count):
        spec = ObjectSpec(names[i % len(names)])
        sample = generate_synthetic_sample(sample_seed(base_seed, i), spec,
                                           size=size, origin=origin)
        sample.meta.seen = spec.name not in unseen
        samples.append(sample)
    return samples
