import pytest

from handocc.compositor import PostprocessConfig, run_pipeline
from handocc.model import (
    NetworkConfig,
    build_occlusion_net,
    build_seg_net,
    save_checkpoint,
)
from handocc.storage import save_dataset, write_manifest
from handocc.synth import generate_dataset


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    cfg = NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
    occ = build_occlusion_net(cfg, seed=0)
    seg = build_seg_net(cfg, seed=1)
    path = tmp_path_factory.mktemp("ckpt") / "ckpt.pt"
    save_checkpoint(path, cfg, occ.state_dict(), seg.state_dict(), step=0)
    return path


def test_empty_input_dir(tmp_path, ckpt):
    write_manifest(tmp_path / "data", (0, 0), [])
    summary = run_pipeline(tmp_path / "data", ckpt, tmp_path / "out")
    assert summary == {"processed": 0, "failed": 0, "failures": []}


def test_n_inputs_n_outputs(tmp_path, ckpt):
    samples = generate_dataset(3, base_seed=0, size=64)
    save_dataset(tmp_path / "data", samples)
    summary = run_pipeline(tmp_path / "data", ckpt, tmp_path / "out",
                           post_cfg=PostprocessConfig())
    assert summary["processed"] == 3
    assert summary["failed"] == 0
    frames = sorted((tmp_path / "out").glob("frame_*.png"))
    masks = sorted((tmp_path / "out").glob("mask_*.png"))
    assert len(frames) == len(masks) == 3


def test_per_file_failures_recorded(tmp_path, ckpt):
    samples = generate_dataset(3, base_seed=0, size=64)
    save_dataset(tmp_path / "data", samples)
    (tmp_path / "data" / "hand" / "00001.png").unlink()
    summary = run_pipeline(tmp_path / "data", ckpt, tmp_path / "out")
    assert summary["processed"] == 2
    assert summary["failed"] == 1
    assert summary["failures"][0]["id"] == 1
    assert "00001" in summary["failures"][0]["error"]


def test_pipeline_deterministic(tmp_path, ckpt):
    samples = generate_dataset(2, base_seed=3, size=64)
    save_dataset(tmp_path / "data", samples)
    run_pipeline(tmp_path / "data", ckpt, tmp_path / "a")
    run_pipeline(tmp_path / "data", ckpt, tmp_path / "b")
    for name in ("frame_00000.png", "mask_00001.png"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_seg_derived_masks(tmp_path, ckpt):
    samples = generate_dataset(2, base_seed=5, size=64)
    save_dataset(tmp_path / "data", samples)
    summary = run_pipeline(tmp_path / "data", ckpt, tmp_path / "out",
                           use_seg=True)
    assert summary["processed"] == 2
