"""Overlap-restricted dice metric, per-object evaluation reports, stage
timing, and report export/plots."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .compositor import PostprocessConfig, compose, postprocess
from .data import DEFAULT_TINT, network_input
from .types import HAND, SampleTuple, derive_overlap

REPORT_VERSION = "1"


def odsc(pred: np.ndarray, gt: np.ndarray, overlap: np.ndarray,
         empty_value: float = 1.0) -> float:
    """Dice score of the hand-on-top sets restricted to the overlap region.

    Inside the overlap every pixel is either hand-over or object-over, so
    the hand sets fully determine the occlusion decision. When neither mask
    claims hand anywhere in the overlap there is nothing to get wrong and
    ``empty_value`` is returned.
    """
    if pred.shape != gt.shape or gt.shape != overlap.shape:
        raise ValueError("odsc: shape mismatch")
    region = overlap.astype(bool)
    p = (pred == HAND) & region
    g = (gt == HAND) & region
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return empty_value
    return 2.0 * int((p & g).sum()) / denom


@dataclass
class EvalRow:
    object_name: str
    pose_id: str
    seen: bool
    odsc: float
    sample_count: int
    empty_overlap_count: int = 0


@dataclass
class EvalReport:
    rows: list[EvalRow]
    aggregate: float
    config_fingerprint: str = ""
    version: str = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config_fingerprint": self.config_fingerprint,
            "aggregate": self.aggregate,
            "rows": [vars(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(
            rows=[EvalRow(**row) for row in payload["rows"]],
            aggregate=payload["aggregate"],
            config_fingerprint=payload.get("config_fingerprint", ""),
            version=payload.get("version", REPORT_VERSION),
        )


def config_fingerprint(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def make_predictor(occ_net, seg_net=None, post_cfg: PostprocessConfig | None = None,
                   tint=DEFAULT_TINT, use_seg: bool = False):
    """Wrap the networks as sample -> predicted label map."""

    def predict(sample: SampleTuple) -> np.ndarray:
        hand_fg = sample.hand_fg
        if use_seg:
            if seg_net is None:
                raise ValueError("use_seg requires a segmentation net")
            with torch.no_grad():
                probs = seg_net(torch.from_numpy(sample.hand_image).permute(2, 0, 1))
            hand_fg = (probs[0].numpy() > 0.5).astype(np.uint8)
        x = network_input(sample.hand_image, hand_fg, sample.object_fg, tint)
        with torch.no_grad():
            pyramid = occ_net(torch.from_numpy(x).permute(2, 0, 1))
        pred = pyramid.final.argmax(dim=1)[0].numpy().astype(np.uint8)
        if post_cfg is not None:
            pred = postprocess(pred, post_cfg, hand_fg, sample.object_fg)
        return pred

    return predict


def evaluate(predict, samples: list[SampleTuple],
             fingerprint: str = "") -> EvalReport:
    """Score every sample and aggregate per (object, pose).

    The aggregate is the sample-weighted mean, i.e. the plain mean over all
    scored samples.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    groups: dict[tuple[str, str], dict] = {}
    total = 0.0
    for sample in samples:
        overlap = derive_overlap(sample.hand_fg, sample.object_fg)
        pred = predict(sample)
        empty = not ((((pred == HAND) | (sample.gt == HAND)) & overlap.astype(bool)).any())
        score = odsc(pred, sample.gt, overlap)
        total += score
        key = (sample.meta.object_name, sample.meta.pose_id)
        bucket = groups.setdefault(
            key, {"sum": 0.0, "count": 0, "seen": sample.meta.seen, "empty": 0})
        bucket["sum"] += score
        bucket["count"] += 1
        bucket["empty"] += int(empty)
    rows = [
        EvalRow(object_name=name, pose_id=pose, seen=info["seen"],
                odsc=info["sum"] / info["count"], sample_count=info["count"],
                empty_overlap_count=info["empty"])
        for (name, pose), info in sorted(groups.items())
    ]
    return EvalReport(rows=rows, aggregate=total / len(samples),
                      config_fingerprint=fingerprint)


def export_report(report: EvalReport, path: Path | str,
                  fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or (path.suffix.lstrip(".") or "json")
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["object_name", "pose_id", "seen", "odsc",
                             "sample_count", "empty_overlap_count"])
            for row in report.rows:
                writer.writerow([row.object_name, row.pose_id, row.seen,
                                 row.odsc, row.sample_count,
                                 row.empty_overlap_count])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path: Path | str) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def emit_plots(report: EvalReport, out_dir: Path | str,
               metrics_csv: Path | str | None = None) -> list[Path]:
    """Bar chart of per-row scores, plus loss curves when a training CSV is
    available."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    labels = [f"{r.object_name}/{r.pose_id}" + ("" if r.seen else " *")
              for r in report.rows]
    values = [r.odsc for r in report.rows]
    fig, ax = plt.subplots(figsize=(max(6, len(labels)), 4))
    ax.bar(range(len(values)), values, color="#4878b0")
    ax.axhline(report.aggregate, color="#c44e52", linestyle="--",
               label=f"aggregate {report.aggregate:.3f}")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("overlap dice")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    bar_path = out_dir / "odsc_by_object.png"
    fig.savefig(bar_path)
    plt.close(fig)
    written.append(bar_path)

    if metrics_csv is not None:
        rows = list(csv.DictReader(open(metrics_csv)))
        if rows:
            steps = [int(float(r["j"])) for r in rows]
            fig, ax = plt.subplots(figsize=(7, 4))
            for key, label in (("total", "total"), ("l_p", "focus"),
                               ("l_s", "smoothness")):
                ax.plot(steps, [float(r[key]) for r in rows], label=label)
            ax.set_xlabel("step")
            ax.set_ylabel("loss")
            ax.legend()
            fig.tight_layout()
            loss_path = out_dir / "loss_curves.png"
            fig.savefig(loss_path)
            plt.close(fig)
            written.append(loss_path)
    return written


@dataclass
class TimingProfile:
    input_prep_ms: float
    seg_net_ms: float
    occ_net_ms: float
    composition_ms: float

    @property
    def total_ms(self) -> float:
        return (self.input_prep_ms + self.seg_net_ms + self.occ_net_ms
                + self.composition_ms)

    @property
    def fps(self) -> float:
        return 1000.0 / self.total_ms

    def stages(self) -> dict[str, float]:
        return {
            "input_prep": self.input_prep_ms,
            "seg_net": self.seg_net_ms,
            "occ_net": self.occ_net_ms,
            "composition": self.composition_ms,
        }

    def to_dict(self) -> dict:
        out = self.stages()
        out["total"] = self.total_ms
        out["fps"] = self.fps
        return out


def profile(occ_net, seg_net, sample: SampleTuple, repeats: int = 100,
            warmup: int = 5, post_cfg: PostprocessConfig | None = None,
            tint=DEFAULT_TINT) -> TimingProfile:
    """Wall-clock means per pipeline stage over ``repeats`` runs, after
    discarding ``warmup`` runs."""
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    post_cfg = post_cfg or PostprocessConfig()
    hand_t = torch.from_numpy(sample.hand_image).permute(2, 0, 1)
    acc = np.zeros(4)
    with torch.no_grad():
        for it in range(warmup + repeats):
            t0 = time.perf_counter()
            probs = seg_net(hand_t)
            hand_fg = (probs[0].numpy() > 0.5).astype(np.uint8)
            t1 = time.perf_counter()
            x = network_input(sample.hand_image, hand_fg, sample.object_fg, tint)
            xt = torch.from_numpy(x).permute(2, 0, 1)
            t2 = time.perf_counter()
            pyramid = occ_net(xt)
            pred = pyramid.final.argmax(dim=1)[0].numpy().astype(np.uint8)
            t3 = time.perf_counter()
            pred = postprocess(pred, post_cfg, hand_fg, sample.object_fg)
            compose(sample.hand_image, hand_fg, sample.object_render,
                    sample.object_fg, pred)
            t4 = time.perf_counter()
            if it >= warmup:
                acc += (np.array([t2 - t1, t1 - t0, t3 - t2, t4 - t3]) * 1000.0)
    means = acc / repeats
    return TimingProfile(input_prep_ms=means[0], seg_net_ms=means[1],
                         occ_net_ms=means[2], composition_ms=means[3])
