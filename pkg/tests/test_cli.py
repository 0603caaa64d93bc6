import hashlib
import json
from pathlib import Path

from handocc.cli import dispatch


def _tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_unknown_flag_exits_2():
    assert dispatch(["gen-data", "--nonsense"]) == 2


def test_unknown_subcommand_exits_2():
    assert dispatch(["frobnicate"]) == 2


def test_help_exits_0(capsys):
    assert dispatch(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out


def test_subcommand_help_exits_0(capsys):
    assert dispatch(["train", "--help"]) == 0


def test_gen_data_is_deterministic(tmp_path, capsys):
    args = ["gen-data", "--count", "6", "--seed", "1", "--objects",
            "bar,disk", "--size", "64"]
    assert dispatch(args + ["--out", str(tmp_path / "a")]) == 0
    assert dispatch(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")


def test_gen_data_unknown_object_exits_1(tmp_path):
    assert dispatch(["gen-data", "--count", "1", "--objects", "teapot",
                     "--out", str(tmp_path / "x")]) == 1


def test_gen_data_unseen_flag(tmp_path):
    assert dispatch(["gen-data", "--count", "4", "--objects", "bar,disk",
                     "--unseen", "disk", "--size", "64",
                     "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    flags = {e["object_name"]: e["seen"] for e in manifest["samples"]}
    assert flags == {"bar": True, "disk": False}


def test_train_joint_without_seg_ckpt_exits_1(tmp_path):
    assert dispatch(["gen-data", "--count", "4", "--size", "64",
                     "--out", str(tmp_path / "d")]) == 0
    code = dispatch(["train", "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "run"), "--epochs", "1",
                     "--phase", "joint"])
    assert code == 1


def test_gradcheck_cli_reports_and_passes(capsys):
    assert dispatch(["gradcheck", "--trials", "2", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    for name in ("cross_entropy", "focusing_ce", "pfce", "smoothness_loss",
                 "overall_loss"):
        assert name in out
    assert "FAIL" not in out


def test_config_file_merging(tmp_path, capsys, monkeypatch):
    config = tmp_path / "conf.json"
    config.write_text(json.dumps({"seed": 5, "log_level": "info"}))
    monkeypatch.setenv("HANDOCC_CONFIG", str(config))
    assert dispatch(["gen-data", "--count", "1", "--size", "64",
                     "--objects", "bar", "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    from handocc.synth import sample_seed
    assert manifest["samples"][0]["seed"] == sample_seed(5, 0)
