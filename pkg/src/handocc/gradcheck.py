"""Central finite-difference checks of the analytic loss gradients.

The numeric side perturbs each input element by +/-h and differences the
loss; the analytic side is backpropagation through the loss code. Errors
are reported relative to the largest gradient entry, so flat regions do
not blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .losses import (
    LossSchedule,
    cross_entropy,
    focusing_ce,
    overall_loss,
    pfce,
    smoothness_loss,
    soft_argmax,
)
from .model import LogitsPyramid

THRESHOLDS = {
    "cross_entropy": 1e-4,
    "focusing_ce": 1e-4,
    "pfce": 1e-4,
    "smoothness_loss": 1e-3,
    "overall_loss": 1e-3,
}


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def central_difference(fn, tensors: list[torch.Tensor], h: float = 1e-5) -> list[torch.Tensor]:
    """Numeric gradient of a scalar function of several float64 tensors."""
    grads = []
    for idx, t in enumerate(tensors):
        grad = torch.zeros_like(t)
        flat = t.view(-1)
        gflat = grad.view(-1)
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + h
            hi = fn(tensors)
            flat[k] = orig - h
            lo = fn(tensors)
            flat[k] = orig
            gflat[k] = (hi - lo) / (2.0 * h)
        grads.append(grad)
    return grads


def max_relative_error(analytic: list[torch.Tensor],
                       numeric: list[torch.Tensor]) -> float:
    a = torch.cat([t.reshape(-1) for t in analytic])
    n = torch.cat([t.reshape(-1) for t in numeric])
    scale = max(float(a.abs().max()), float(n.abs().max()), 1e-12)
    return float((a - n).abs().max()) / scale


def _analytic_grad(fn, tensors: list[torch.Tensor]) -> list[torch.Tensor]:
    leaves = [t.detach().clone().requires_grad_(True) for t in tensors]
    loss = fn(leaves)
    loss.backward()
    return [leaf.grad.detach().clone() for leaf in leaves]


def _compare(fn, tensors: list[torch.Tensor], h: float = 1e-5) -> float:
    analytic = _analytic_grad(fn, tensors)

    def as_float(ts):
        with torch.no_grad():
            return float(fn(ts))

    numeric = central_difference(as_float, [t.detach().clone() for t in tensors], h)
    return max_relative_error(analytic, numeric)


def _rand_case(gen, size):
    logits = torch.randn(3, size, size, dtype=torch.float64, generator=gen)
    probs = F.softmax(logits, dim=0)
    target = torch.randint(0, 3, (size, size), generator=gen)
    overlap = (torch.rand(size, size, generator=gen) < 0.4).double()
    return probs, target, overlap


def _smooth_map(gen, size):
    coarse = torch.randn(1, 1, size, size, dtype=torch.float64, generator=gen)
    for _ in range(2):
        coarse = F.avg_pool2d(F.pad(coarse, (1, 1, 1, 1), mode="replicate"), 3,
                              stride=1)
    ys, xs = torch.meshgrid(
        torch.arange(size, dtype=torch.float64),
        torch.arange(size, dtype=torch.float64),
        indexing="ij",
    )
    ax = float(torch.empty(1).uniform_(0.2, 0.5, generator=gen))
    ay = float(torch.empty(1).uniform_(0.2, 0.5, generator=gen))
    sx = 1.0 if torch.rand(1, generator=gen) < 0.5 else -1.0
    return ax * sx * xs + ay * ys + 0.6 * coarse[0, 0]


def _smooth_pair(gen, size, max_tries: int = 200):
    """Two smooth maps whose mutual orientations stay clear of the arccos
    clamp, so the finite-difference step never crosses it."""
    from .losses import gradient_orientation

    for _ in range(max_tries):
        a = _smooth_map(gen, size)
        b = _smooth_map(gen, size)
        oa, va = gradient_orientation(a)
        ob, vb = gradient_orientation(b)
        if not bool((va & vb).all()):
            continue
        dot = (oa * ob).sum(dim=1)
        if float(dot.abs().max()) < 0.995:
            return a, b
    raise RuntimeError("could not sample a clamp-free smooth map pair")


def check_cross_entropy(trials: int, seed: int, size: int = 8) -> float:
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(trials):
        probs, target, _ = _rand_case(gen, size)
        fn = lambda ts: cross_entropy(ts[0], target, validate=False)
        worst = max(worst, _compare(fn, [probs]))
    return worst


def check_focusing_ce(trials: int, seed: int, size: int = 8) -> float:
    gen = torch.Generator().manual_seed(seed + 1)
    worst = 0.0
    for _ in range(trials):
        probs, target, overlap = _rand_case(gen, size)
        fn = lambda ts: focusing_ce(ts[0], target, overlap, validate=False)
        worst = max(worst, _compare(fn, [probs]))
    return worst


def check_pfce(trials: int, seed: int, size: int = 8) -> float:
    gen = torch.Generator().manual_seed(seed + 2)
    worst = 0.0
    for _ in range(trials):
        probs, target, overlap = _rand_case(gen, size)
        schedule = LossSchedule(total_steps=100,
                                step=int(torch.randint(0, 101, (1,), generator=gen)))
        fn = lambda ts: pfce(ts[0], target, overlap, schedule, validate=False)
        worst = max(worst, _compare(fn, [probs]))
    return worst


def check_smoothness(trials: int, seed: int, size: int = 8) -> float:
    gen = torch.Generator().manual_seed(seed + 3)
    worst = 0.0
    for _ in range(trials):
        pred, target = _smooth_pair(gen, size)
        fn = lambda ts: smoothness_loss(ts[0], target)
        worst = max(worst, _compare(fn, [pred]))
    return worst


def _fd_hazard(final: torch.Tensor, target: torch.Tensor, gamma: float) -> bool:
    """True when the smoothness term of this instance is not finite-difference
    safe: a Sobel magnitude of the soft-argmax map near the validity
    threshold (a +/-h probe could flip the mask), or an orientation dot
    within a hair of the arccos clamp threshold (the probe could cross it).
    Exactly parallel orientations are safe: both probes stay clamped.
    """
    from .losses import ACOS_CLAMP, gradient_orientation

    b = soft_argmax(final, gamma)
    x = b.unsqueeze(1)
    kx = torch.tensor(_sobel(), dtype=b.dtype)
    kernel = torch.stack([kx, kx.t()]).unsqueeze(1)
    grad = torch.nn.functional.conv2d(
        torch.nn.functional.pad(x, (1, 1, 1, 1), mode="replicate"), kernel)
    mag = grad.square().sum(dim=1).sqrt()
    if float(mag.min()) < 1e-3:
        return True
    ob, vb = gradient_orientation(b)
    oy, vy = gradient_orientation((target + 1).to(b.dtype))
    both = vb & vy
    if not both.any():
        return False
    dot = (ob * oy).sum(dim=1)[both].abs()
    return bool(((dot - (1.0 - ACOS_CLAMP)).abs() < 1e-5).any())


def _sobel():
    from .losses import _SOBEL_X

    return _SOBEL_X


def check_overall(trials: int, seed: int, size: int = 8) -> float:
    gen = torch.Generator().manual_seed(seed + 4)
    worst = 0.0
    done = 0
    attempts = 0
    while done < trials:
        attempts += 1
        if attempts > trials * 50:
            raise RuntimeError("could not sample enough clamp-free instances")
        target = torch.randint(0, 3, (size, size), generator=gen)
        overlap = (torch.rand(size, size, generator=gen) < 0.4).double()
        aux = [torch.randn(3, size, size, dtype=torch.float64, generator=gen) * 0.05
               for _ in range(4)]
        final = torch.randn(3, size, size, dtype=torch.float64, generator=gen) * 0.05
        schedule = LossSchedule(total_steps=100,
                                step=int(torch.randint(0, 101, (1,), generator=gen)))
        if _fd_hazard(final, target, schedule.gamma):
            continue

        def fn(ts):
            pyramid = LogitsPyramid(aux=list(ts[:4]), final=ts[4])
            return overall_loss(pyramid, target, overlap, schedule).total

        worst = max(worst, _compare(fn, aux + [final]))
        done += 1
    return worst


def run_all(trials: int = 20, seed: int = 0, size: int = 8) -> list[GradCheckResult]:
    checks = {
        "cross_entropy": check_cross_entropy,
        "focusing_ce": check_focusing_ce,
        "pfce": check_pfce,
        "smoothness_loss": check_smoothness,
        "overall_loss": check_overall,
    }
    # the probe tensors are tiny, so intra-op threading only adds overhead
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return [
            GradCheckResult(name, fn(trials, seed, size), THRESHOLDS[name])
            for name, fn in checks.items()
        ]
    finally:
        torch.set_num_threads(threads)
