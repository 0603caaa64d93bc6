"""Optimization loop: SGD with momentum, polynomial LR decay, mixed
real/synthetic batches, segmentation pre-training then joint training."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import AugmentPolicy, augment, preprocess_pair
from .errors import ConfigError
from .losses import LossSchedule, overall_loss
from .model import (
    CHECKPOINT_VERSION,
    NetworkConfig,
    build_occlusion_net,
    build_seg_net,
    load_checkpoint,
)
from .types import SampleTuple, derive_overlap

PHASES = ("seg_pretrain", "joint")
METRIC_FIELDS = ("j", "lr", "l_ce_1", "l_ce_2", "l_ce_3", "l_ce_4",
                 "l_p", "l_s", "total")


@dataclass
class TrainConfig:
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr0: float = 1e-2
    poly_power: float = 0.9
    epochs: int = 50
    real_synth_ratio: tuple[int, int] = (1, 8)
    seed: int = 0
    phase: str = "joint"
    grad_clip: float | None = None
    augment: bool = True
    seg_loss_weight: float = 1.0
    checkpoint_every: int | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if min(self.real_synth_ratio) < 0 or max(self.real_synth_ratio) == 0:
            raise ConfigError("real_synth_ratio components must be >= 0, not both 0")
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["real_synth_ratio"] = list(self.real_synth_ratio)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        kwargs = dict(payload)
        kwargs["real_synth_ratio"] = tuple(kwargs["real_synth_ratio"])
        return cls(**kwargs)


def poly_lr(step: int, total: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - step/total)^power."""
    if total < 1:
        raise ConfigError("total iteration count must be >= 1")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr0 * (1.0 - step / total) ** power


def make_batch(real_pool: list[SampleTuple], synth_pool: list[SampleTuple],
               config: TrainConfig, rng: np.random.Generator) -> list[SampleTuple]:
    """Fill each batch slot from the real pool with probability
    real/(real+synth), falling back to whichever pool is nonempty."""
    if not real_pool and not synth_pool:
        raise ValueError("both sample pools are empty")
    r, s = config.real_synth_ratio
    p_real = r / (r + s)
    if not real_pool:
        p_real = 0.0
    elif not synth_pool:
        p_real = 1.0
    batch = []
    for _ in range(config.batch_size):
        pool = real_pool if rng.random() < p_real else synth_pool
        batch.append(pool[int(rng.integers(len(pool)))])
    return batch


def parameter_groups(modules: list[torch.nn.Module], weight_decay: float):
    """Weight decay on conv weights only; biases and normalization
    scale/shift train without decay."""
    decay, no_decay = [], []
    for module in modules:
        for name, param in module.named_parameters():
            if param.dim() > 1 and name.endswith("weight"):
                decay.append(param)
            else:
                no_decay.append(param)
    return [
        {"params": decay, "weight_decay": weight_decay, "name": "decay"},
        {"params": no_decay, "weight_decay": 0.0, "name": "no_decay"},
    ]


def _batch_tensors(batch: list[SampleTuple]):
    inputs, targets, overlaps, hand_imgs, hand_fgs = [], [], [], [], []
    for sample in batch:
        inputs.append(preprocess_pair(sample))
        targets.append(sample.gt)
        overlaps.append(derive_overlap(sample.hand_fg, sample.object_fg))
        hand_imgs.append(sample.hand_image)
        hand_fgs.append(sample.hand_fg)
    x = torch.from_numpy(np.stack(inputs)).permute(0, 3, 1, 2).contiguous()
    y = torch.from_numpy(np.stack(targets).astype(np.int64))
    om = torch.from_numpy(np.stack(overlaps).astype(np.float32))
    hi = torch.from_numpy(np.stack(hand_imgs)).permute(0, 3, 1, 2).contiguous()
    hf = torch.from_numpy(np.stack(hand_fgs).astype(np.float32))
    return x, y, om, hi, hf


def _check_finite(named_losses: dict, step: int) -> None:
    for name, value in named_losses.items():
        if isinstance(value, torch.Tensor):
            value = value.detach()
        if not math.isfinite(float(value)):
            raise RuntimeError(
                f"loss term {name!r} became non-finite at step {step}; aborting"
            )


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


class Trainer:
    """Owns the networks, optimizer, RNG, and schedule for one run."""

    def __init__(self, train_cfg: TrainConfig, net_cfg: NetworkConfig,
                 synth_pool: list[SampleTuple],
                 real_pool: list[SampleTuple] | None = None,
                 seg_checkpoint: dict | None = None,
                 policy: AugmentPolicy | None = None,
                 schedule: LossSchedule | None = None):
        train_cfg.validate()
        net_cfg.validate()
        self.train_cfg = train_cfg
        self.net_cfg = net_cfg
        self.synth_pool = synth_pool
        self.real_pool = real_pool or []
        self.policy = policy or AugmentPolicy()
        pool_size = len(self.synth_pool) + len(self.real_pool)
        if pool_size == 0:
            raise ValueError("no training samples")
        self.n_total = train_cfg.epochs * math.ceil(pool_size / train_cfg.batch_size)
        self.schedule = schedule or LossSchedule()
        self.schedule.total_steps = self.n_total
        self.steps_done = 0
        self.history: list[dict] = []

        torch.manual_seed(train_cfg.seed)
        self.seg = build_seg_net(net_cfg, train_cfg.seed + 1)
        self.occ = build_occlusion_net(net_cfg, train_cfg.seed)
        if train_cfg.phase == "joint":
            if seg_checkpoint is None:
                raise ConfigError(
                    "joint phase requires a segmentation checkpoint; "
                    "run the seg_pretrain phase first"
                )
            if seg_checkpoint.get("config") != net_cfg.to_dict():
                raise ConfigError("segmentation checkpoint config mismatch")
            self.seg.load_state_dict(seg_checkpoint["seg_state"])

        modules = [self.seg] if train_cfg.phase == "seg_pretrain" else [self.occ, self.seg]
        self.optimizer = torch.optim.SGD(
            parameter_groups(modules, train_cfg.weight_decay),
            lr=train_cfg.lr0, momentum=train_cfg.momentum,
        )
        self.rng = np.random.default_rng(
            np.random.SeedSequence([train_cfg.seed & 0xFFFFFFFF, 0xBA7C4]))

    # -- one optimization step ------------------------------------------------

    def step(self) -> dict:
        cfg = self.train_cfg
        lr = poly_lr(self.steps_done, self.n_total, cfg.lr0, cfg.poly_power)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        batch = make_batch(self.real_pool, self.synth_pool, cfg, self.rng)
        if cfg.augment:
            batch = [augment(s, self.rng, self.policy) for s in batch]
        x, y, om, hand_imgs, hand_fgs = _batch_tensors(batch)

        self.optimizer.zero_grad()
        row = {"j": self.steps_done + 1, "lr": lr}
        if cfg.phase == "seg_pretrain":
            probs = self.seg(hand_imgs)
            seg_loss = F.binary_cross_entropy(probs, hand_fgs)
            _check_finite({"seg_bce": seg_loss}, self.steps_done + 1)
            seg_loss.backward()
            for name in METRIC_FIELDS[2:-1]:
                row[name] = 0.0
            row["total"] = float(seg_loss.detach())
        else:
            self.schedule.step = self.steps_done + 1
            pyramid = self.occ(x)
            breakdown = overall_loss(pyramid, y, om, self.schedule)
            probs = self.seg(hand_imgs)
            seg_loss = F.binary_cross_entropy(probs, hand_fgs)
            scalars = breakdown.scalars()
            scalars["seg_bce"] = seg_loss
            _check_finite(scalars, self.steps_done + 1)
            objective = breakdown.total + cfg.seg_loss_weight * seg_loss
            objective.backward()
            row.update(breakdown.scalars())
        if cfg.grad_clip is not None:
            params = [p for g in self.optimizer.param_groups for p in g["params"]]
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        self.optimizer.step()
        self.steps_done += 1
        self.history.append(row)
        return row

    # -- checkpointing --------------------------------------------------------

    def checkpoint_payload(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.net_cfg.to_dict(),
            "train_config": self.train_cfg.to_dict(),
            "occ_state": self.occ.state_dict(),
            "seg_state": self.seg.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "step": self.steps_done,
            "n_total": self.n_total,
            "numpy_rng": _rng_state(self.rng),
            "torch_rng": torch.get_rng_state(),
            "schedule": dataclasses.asdict(self.schedule),
            "history": self.history,
        }

    def restore(self, payload: dict) -> None:
        if payload.get("config") != self.net_cfg.to_dict():
            raise ConfigError("resume checkpoint config mismatch")
        self.occ.load_state_dict(payload["occ_state"])
        self.seg.load_state_dict(payload["seg_state"])
        self.optimizer.load_state_dict(payload["optimizer_state"])
        self.steps_done = int(payload["step"])
        self.n_total = int(payload["n_total"])
        self.rng = _restore_rng(payload["numpy_rng"])
        torch.set_rng_state(payload["torch_rng"])
        self.schedule = LossSchedule(**payload["schedule"])
        self.history = list(payload["history"])


def train(train_cfg: TrainConfig, net_cfg: NetworkConfig,
          synth_pool: list[SampleTuple],
          real_pool: list[SampleTuple] | None = None,
          out_dir: Path | str = "run",
          seg_checkpoint_path: Path | str | None = None,
          resume_path: Path | str | None = None,
          policy: AugmentPolicy | None = None,
          schedule: LossSchedule | None = None,
          log_every: int = 50) -> dict:
    """Run one training phase; writes periodic checkpoints, a final
    checkpoint, and a per-step metrics CSV under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resume_payload = None
    if resume_path is not None:
        resume_payload = load_checkpoint(resume_path)
    seg_payload = resume_payload  # a resume checkpoint carries the seg state
    if seg_checkpoint_path is not None:
        seg_payload = load_checkpoint(seg_checkpoint_path)
    trainer = Trainer(train_cfg, net_cfg, synth_pool, real_pool,
                      seg_checkpoint=seg_payload, policy=policy,
                      schedule=schedule)
    if resume_payload is not None:
        trainer.restore(resume_payload)

    every = train_cfg.checkpoint_every or max(1, trainer.n_total // 5)
    metrics_path = out_dir / "metrics.csv"
    mode = "a" if (resume_path is not None and metrics_path.exists()) else "w"
    with open(metrics_path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if mode == "w":
            writer.writeheader()
        while trainer.steps_done < trainer.n_total:
            row = trainer.step()
            writer.writerow({k: row.get(k, 0.0) for k in METRIC_FIELDS})
            fh.flush()
            if trainer.steps_done % every == 0 and trainer.steps_done < trainer.n_total:
                torch.save(trainer.checkpoint_payload(),
                           out_dir / f"ckpt_step{trainer.steps_done:06d}.pt")

    final_path = out_dir / "ckpt_final.pt"
    torch.save(trainer.checkpoint_payload(), final_path)
    return {
        "checkpoint": str(final_path),
        "metrics": str(metrics_path),
        "steps": trainer.steps_done,
        "n_total": trainer.n_total,
        "history": trainer.history,
    }
