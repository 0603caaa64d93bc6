"""handocc - generate data, train, evaluate, and compose occlusion-aware
AR frames from one entry point.

Subcommands:
    gen-data    write a labeled synthetic dataset
    train       run the seg or joint training phase
    eval        score a checkpoint on a dataset
    compose     batch-compose frames from a dataset with a checkpoint
    gradcheck   finite-difference check of the loss gradients
    profile     per-stage wall-clock timing of the inference pipeline

Global settings resolve as defaults < config file < flags; the config file
comes from --config or the HANDOCC_CONFIG environment variable. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("handocc")

CONFIG_ENV_VAR = "HANDOCC_CONFIG"
GLOBAL_DEFAULTS = {"seed": 0, "log_level": "info", "deterministic": True}


def _resolve_config(args: argparse.Namespace) -> dict:
    resolved = dict(GLOBAL_DEFAULTS)
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        resolved.update(json.loads(Path(config_path).read_text()))
    for key in GLOBAL_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _setup(args: argparse.Namespace) -> dict:
    resolved = _resolve_config(args)
    logging.basicConfig(
        level=getattr(logging, str(resolved["log_level"]).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    merged = dict(resolved)
    merged.update({
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("func", "config") and v is not None
    })
    log.info("resolved config: %s", json.dumps(merged, sort_keys=True, default=str))
    if resolved["deterministic"]:
        import torch
        torch.manual_seed(int(resolved["seed"]))
        torch.use_deterministic_algorithms(True)
    return resolved


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# handlers


def cmd_gen_data(args) -> int:
    from .storage import save_dataset
    from .synth import generate_dataset

    resolved = _setup(args)
    seed = args.seed if args.seed is not None else int(resolved["seed"])
    samples = generate_dataset(
        count=args.count,
        base_seed=seed,
        objects=_csv_list(args.objects) if args.objects else None,
        size=args.size,
        origin=args.origin,
        unseen=set(_csv_list(args.unseen)) if args.unseen else None,
    )
    manifest = save_dataset(args.out, samples)
    log.info("wrote %d samples under %s", len(samples), args.out)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .model import NetworkConfig
    from .storage import load_dataset
    from .train import TrainConfig, train

    resolved = _setup(args)
    seed = args.seed if args.seed is not None else int(resolved["seed"])
    phase = {"seg": "seg_pretrain", "joint": "joint"}[args.phase]
    synth_pool = load_dataset(args.data)
    real_pool = load_dataset(args.real_data) if args.real_data else []
    train_cfg = TrainConfig(
        phase=phase,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr0,
        seed=seed,
        augment=not args.no_augment,
        grad_clip=args.grad_clip,
    )
    summary = train(
        train_cfg,
        NetworkConfig(),
        synth_pool,
        real_pool,
        out_dir=args.out,
        seg_checkpoint_path=args.seg_ckpt,
        resume_path=args.resume,
    )
    log.info("finished %d/%d steps", summary["steps"], summary["n_total"])
    print(summary["checkpoint"])
    return 0


def cmd_eval(args) -> int:
    from .compositor import PostprocessConfig
    from .evaluate import (config_fingerprint, emit_plots, evaluate,
                           export_report, make_predictor)
    from .model import load_checkpoint, nets_from_checkpoint
    from .storage import load_dataset

    _setup(args)
    payload = load_checkpoint(args.ckpt)
    occ, seg, cfg = nets_from_checkpoint(payload)
    samples = load_dataset(args.data)
    post_cfg = PostprocessConfig() if args.postprocess else None
    predictor = make_predictor(occ, seg, post_cfg=post_cfg, use_seg=args.use_seg)
    fingerprint = config_fingerprint(
        {"config": payload["config"], "step": payload.get("step"),
         "postprocess": bool(args.postprocess)})
    report = evaluate(predictor, samples, fingerprint=fingerprint)
    export_report(report, args.out)
    if args.plots:
        emit_plots(report, args.plots, metrics_csv=args.metrics_csv)
    for row in report.rows:
        marker = "" if row.seen else " *"
        print(f"{row.object_name}/{row.pose_id}{marker}: "
              f"{row.odsc:.4f} (n={row.sample_count})")
    print(f"aggregate: {report.aggregate:.4f}")
    return 0


def cmd_compose(args) -> int:
    import numpy as np
    from PIL import Image

    from .compositor import PostprocessConfig, run_pipeline

    _setup(args)
    background = None
    if args.background:
        with Image.open(args.background) as img:
            background = (np.asarray(img.convert("RGB"), dtype=np.float32)
                          / 255.0)
    post_cfg = PostprocessConfig(median_kernel=args.median,
                                 close_kernel=args.close)
    summary = run_pipeline(args.input, args.ckpt, args.out, post_cfg=post_cfg,
                           background=background, use_seg=args.use_seg)
    print(f"processed={summary['processed']} failed={summary['failed']}")
    for failure in summary["failures"]:
        log.warning("sample %s failed: %s", failure["id"], failure["error"])
    return 0 if summary["failed"] == 0 else 1


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    resolved = _setup(args)
    seed = args.seed if args.seed is not None else int(resolved["seed"])
    results = run_all(trials=args.trials, seed=seed)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err={r.max_rel_error:.3e}  "
              f"threshold={r.threshold:.0e}  {status}")
        ok = ok and r.passed
    return 0 if ok else 1


def cmd_profile(args) -> int:
    import json as _json

    from .evaluate import profile
    from .model import load_checkpoint, nets_from_checkpoint

    resolved = _setup(args)
    seed = args.seed if args.seed is not None else int(resolved["seed"])
    occ, seg, _ = nets_from_checkpoint(load_checkpoint(args.ckpt))
    if args.data:
        from .storage import load_dataset
        sample = load_dataset(args.data)[0]
    else:
        from .synth import generate_synthetic_sample
        sample = generate_synthetic_sample(seed, "bar", size=args.size)
    result = profile(occ, seg, sample, repeats=args.repeats)
    for stage, ms in result.stages().items():
        print(f"{stage:<12} {ms:8.2f} ms")
    print(f"{'total':<12} {result.total_ms:8.2f} ms")
    print(f"{'fps':<12} {result.fps:8.2f}")
    if args.out:
        Path(args.out).write_text(_json.dumps(result.to_dict(), indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handocc",
        description="hand/object occlusion prediction and AR compositing",
    )
    parser.add_argument("--config", help=f"config file (or ${CONFIG_ENV_VAR})")
    parser.add_argument("--log-level", dest="log_level",
                        choices=("debug", "info", "warning", "error"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a labeled synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--objects", help="comma-separated object names")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--origin", choices=("synthetic", "real"), default="synthetic")
    p.add_argument("--unseen", help="objects to flag as unseen in metadata")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--data", required=True, help="synthetic dataset dir")
    p.add_argument("--real-data", dest="real_data", help="real dataset dir")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--lr0", type=float, default=1e-2)
    p.add_argument("--seed", type=int)
    p.add_argument("--phase", choices=("seg", "joint"), default="joint")
    p.add_argument("--seg-ckpt", dest="seg_ckpt", help="checkpoint from the seg phase")
    p.add_argument("--resume", help="resume from a checkpoint")
    p.add_argument("--no-augment", dest="no_augment", action="store_true")
    p.add_argument("--grad-clip", dest="grad_clip", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report path (.json or .csv)")
    p.add_argument("--postprocess", action="store_true")
    p.add_argument("--use-seg", dest="use_seg", action="store_true",
                   help="derive the hand mask from the seg net")
    p.add_argument("--plots", help="directory for chart output")
    p.add_argument("--metrics-csv", dest="metrics_csv",
                   help="training metrics CSV for the loss chart")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compose", help="batch-compose frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--median", type=int, default=3)
    p.add_argument("--close", type=int, default=5)
    p.add_argument("--background", help="background image file")
    p.add_argument("--use-seg", dest="use_seg", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("gradcheck", help="finite-difference loss gradient check")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("profile", help="per-stage inference timing")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--data", help="take the probe sample from this dataset")
    p.add_argument("--size", type=int, default=320,
                   help="probe sample size when generating one")
    p.add_argument("--out", help="write the profile as JSON")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_profile)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .errors import ConfigError, DatasetError
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
