"""Training objectives.

Every loss averages over its contributing pixels, so magnitudes are
resolution-independent. The loss weights below were tuned for 320x320
inputs; scaling behaviour at other sizes follows from the mean convention.

Tensor layout is channels-first: probabilities/logits are (B, 3, H, W) or
(3, H, W); label maps are (B, H, W) or (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigError
from .model import LogitsPyramid

GRAD_VALID_EPS = 1e-6   # unnormalized Sobel magnitude below this is "flat"
ACOS_CLAMP = 1e-7       # keeps arccos away from its singular endpoints


@dataclass
class LossSchedule:
    """Loss weights plus the training-progress counters.

    ``focus_sign`` controls the sign on beta in the progressive weight
    ``(step/total)^tau * (alpha*overlap + focus_sign*beta) + 1``; the default
    -1 down-weights non-overlap pixels as training progresses, +1 is kept
    for ablation.
    """

    alpha: float = 0.4
    beta: float = 0.2
    tau: float = 0.8
    gamma: float = 100.0
    aux_weight: float = 0.2
    focus_weight: float = 0.2
    smooth_weight: float = 1.0 / 30.0
    total_steps: int = 1
    step: int = 0
    focus_sign: float = -1.0


@dataclass
class LossBreakdown:
    aux_ce: list[Tensor] = field(default_factory=list)
    focus: Tensor | None = None
    smooth: Tensor | None = None
    total: Tensor | None = None

    def scalars(self) -> dict[str, float]:
        out = {f"l_ce_{i + 1}": float(v.detach()) for i, v in enumerate(self.aux_ce)}
        out["l_p"] = float(self.focus.detach())
        out["l_s"] = float(self.smooth.detach())
        out["total"] = float(self.total.detach())
        return out


def _batched(t: Tensor, channels: int | None) -> Tensor:
    want = 3 if channels is None else 4
    if t.dim() == want - 1:
        t = t.unsqueeze(0)
    if t.dim() != want:
        raise ValueError(f"expected a {want - 1}D or {want}D tensor, got {t.dim()}D")
    if channels is not None and t.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {t.shape[1]}")
    return t


def _check_probs(probs: Tensor) -> None:
    sums = probs.sum(dim=1)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-5):
        worst = float((sums - 1.0).abs().max())
        raise ValueError(f"class probabilities do not sum to 1 (max dev {worst:.2e})")


def _nll(probs: Tensor, target: Tensor, validate: bool) -> Tensor:
    probs = _batched(probs, 3)
    target = _batched(target, None).long()
    if probs.shape[-2:] != target.shape[-2:] or probs.shape[0] != target.shape[0]:
        raise ValueError("probability / target shape mismatch")
    if validate:
        _check_probs(probs)
    p_true = probs.gather(1, target.unsqueeze(1)).squeeze(1)
    return -torch.log(p_true)


def cross_entropy(probs: Tensor, target: Tensor, validate: bool = True) -> Tensor:
    """Mean negative log-probability of the true class."""
    return _nll(probs, target, validate).mean()


def focusing_ce(probs: Tensor, target: Tensor, overlap: Tensor,
                alpha: float = 0.4, beta: float = 0.2,
                validate: bool = True) -> Tensor:
    """Cross-entropy with per-pixel weight alpha*overlap + beta, emphasizing
    the region where the occlusion decision actually happens."""
    nll = _nll(probs, target, validate)
    overlap = _batched(overlap, None).to(nll.dtype)
    if overlap.shape != nll.shape:
        raise ValueError("overlap shape mismatch")
    return ((alpha * overlap + beta) * nll).mean()


def pfce(probs: Tensor, target: Tensor, overlap: Tensor,
         schedule: LossSchedule, validate: bool = True) -> Tensor:
    """Progressively-focusing cross-entropy.

    At step 0 this is plain cross-entropy; as step/total grows the in-overlap
    weight ramps toward 1 + alpha - beta and the outside weight toward
    1 - beta (defaults: 1.2 and 0.8).
    """
    if schedule.total_steps < 1:
        raise ConfigError("schedule.total_steps must be >= 1")
    if not 0 <= schedule.step <= schedule.total_steps:
        raise ValueError("schedule.step must lie in [0, total_steps]")
    nll = _nll(probs, target, validate)
    overlap = _batched(overlap, None).to(nll.dtype)
    if overlap.shape != nll.shape:
        raise ValueError("overlap shape mismatch")
    progress = (schedule.step / schedule.total_steps) ** schedule.tau
    weight = progress * (schedule.alpha * overlap + schedule.focus_sign * schedule.beta) + 1.0
    return (weight * nll).mean()


def soft_argmax(logits: Tensor, gamma: float = 100.0) -> Tensor:
    """Differentiable class index over values {1, 2, 3}.

    Written as 2 + (p3 - p1), which equals sum_k k*p_k because the softmax
    sums to one; this form is exact at the symmetric point (equal logits
    give exactly 2).
    """
    logits = _batched(logits, 3)
    probs = F.softmax(gamma * logits, dim=1)
    return 2.0 + (probs[:, 2] - probs[:, 0])


_SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))


def gradient_orientation(field: Tensor) -> tuple[Tensor, Tensor]:
    """Unit gradient vectors from 3x3 Sobel filters with replicate padding.

    Returns (orientations, valid): orientations is (B, 2, H, W) holding
    (gx, gy) normalized to unit length where the raw magnitude exceeds
    GRAD_VALID_EPS, zero elsewhere; valid is the (B, H, W) bool mask.
    """
    field = _batched(field, None)
    x = field.unsqueeze(1)
    kx = torch.tensor(_SOBEL_X, dtype=field.dtype, device=field.device)
    kernel = torch.stack([kx, kx.t()]).unsqueeze(1)
    grad = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), kernel)
    mag2 = grad.square().sum(dim=1, keepdim=True)
    valid = mag2 > GRAD_VALID_EPS ** 2
    safe = torch.sqrt(torch.where(valid, mag2, torch.ones_like(mag2)))
    orient = torch.where(valid, grad / safe, torch.zeros_like(grad))
    return orient, valid.squeeze(1)


def smoothness_loss(pred_map: Tensor, target_map: Tensor) -> Tensor:
    """Mean squared angle between the gradient orientations of the predicted
    label map and the ground-truth label map, over pixels where both
    orientations are defined."""
    pred_map = _batched(pred_map, None)
    target_map = _batched(target_map, None)
    if pred_map.shape != target_map.shape:
        raise ValueError("label map shape mismatch")
    o_pred, v_pred = gradient_orientation(pred_map)
    o_tgt, v_tgt = gradient_orientation(target_map)
    valid = v_pred & v_tgt
    count = valid.sum()
    if count == 0:
        return pred_map.sum() * 0.0
    dot = (o_pred * o_tgt).sum(dim=1)
    angle = torch.acos(dot.clamp(ACOS_CLAMP - 1.0, 1.0 - ACOS_CLAMP))
    return (angle.square() * valid).sum() / count


def overall_loss(pyramid: LogitsPyramid, target: Tensor, overlap: Tensor,
                 schedule: LossSchedule) -> LossBreakdown:
    """Deep-supervision cross-entropies on the aux heads plus the
    progressively-focusing and smoothness terms on the final head."""
    target = _batched(target, None).long()
    breakdown = LossBreakdown()
    for logits in pyramid.aux:
        probs = F.softmax(_batched(logits, 3), dim=1)
        breakdown.aux_ce.append(cross_entropy(probs, target, validate=False))
    final = _batched(pyramid.final, 3)
    probs = F.softmax(final, dim=1)
    breakdown.focus = pfce(probs, target, overlap, schedule, validate=False)
    label_map = soft_argmax(final, schedule.gamma)
    breakdown.smooth = smoothness_loss(label_map, (target + 1).to(final.dtype))
    aux_sum = (torch.stack(breakdown.aux_ce).sum() if breakdown.aux_ce
               else final.sum() * 0.0)
    breakdown.total = (schedule.aux_weight * aux_sum
                       + schedule.focus_weight * breakdown.focus
                       + schedule.smooth_weight * breakdown.smooth)
    return breakdown
