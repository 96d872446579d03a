import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from onetracker.cli import main
from onetracker.metrics import parse_keyvalue

GOLDEN = Path(__file__).parent / "golden"


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_data_deterministic(tmp_path):
    args = ["gen-data", "--seed", "7", "--config", str(GOLDEN / "golden.cfg")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and len(a) > 10
    assert _tree(GOLDEN / "data") == a  # golden dataset regenerates bit-identically


def test_finetune_without_checkpoint(capsys):
    assert main(["finetune", "--task", "rgb_t", "--data", "x", "--out", "y"]) == 1
    assert "--checkpoint" in capsys.readouterr().err


@pytest.mark.parametrize("argv, needle", [
    ([], "subcommand"),
    (["eval", "--seed", "-1"], "--seed"),
    (["eval", "--seed", str(2**64)], "--seed"),
    (["eval", "--task", "rgb_x"], "--task"),
    (["eval", "--every-k", "3"], "--every-k"),
    (["eval", "--steps", "ten"], "--steps"),
    (["eval", "--config", "/nonexistent.cfg"], "--config"),
    (["pretrain", "--out", "f"], "--data"),
    (["frobnicate"], "frobnicate"),
])
def test_validation_errors(argv, needle, capsys):
    assert main(argv) == 1
    assert needle in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dim=16\nlearning_rat=0.1\n")
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1
    assert "learning_rat" in capsys.readouterr().err


def test_golden_eval_report(tmp_path, capsys):
    out = tmp_path / "report.txt"
    code = main(["eval", "--checkpoint", str(GOLDEN / "foundation.otkr"), "--data", str(GOLDEN / "data"),
                 "--out", str(out)])
    assert code == 0
    assert "AUC" in capsys.readouterr().out
    got = parse_keyvalue(out.read_text())
    want = parse_keyvalue((GOLDEN / "report.txt").read_text())
    assert got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-12), k


def test_golden_delta_eval(tmp_path):
    out = tmp_path / "report.txt"
    code = main(["eval", "--checkpoint", str(GOLDEN / "delta_rgb_t.otkr"), "--foundation",
                 str(GOLDEN / "foundation.otkr"), "--data", str(GOLDEN / "data"), "--out", str(out)])
    assert code == 0
    want = parse_keyvalue((GOLDEN / "report_rgb_t.txt").read_text())
    got = parse_keyvalue(out.read_text())
    assert all(got[k] == pytest.approx(want[k], abs=1e-12) for k in want)


def test_delta_needs_foundation(capsys):
    code = main(["eval", "--checkpoint", str(GOLDEN / "delta_rgb_t.otkr"), "--data", str(GOLDEN / "data")])
    assert code == 1 and "--foundation" in capsys.readouterr().err


def test_delta_bound_to_its_foundation(tmp_path, capsys):
    other = tmp_path / "f.otkr"
    assert main(["pretrain", "--config", str(GOLDEN / "golden.cfg"), "--steps", "1", "--quiet",
                 "--data", str(GOLDEN / "data"), "--out", str(other)]) == 0
    code = main(["eval", "--checkpoint", str(GOLDEN / "delta_rgb_t.otkr"), "--foundation", str(other),
                 "--data", str(GOLDEN / "data")])
    assert code == 2 and "hash mismatch" in capsys.readouterr().err


def test_corrupt_checkpoint_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "f.otkr"
    raw = bytearray((GOLDEN / "foundation.otkr").read_bytes())
    raw[100] ^= 0x10
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--checkpoint", str(bad), "--data", str(GOLDEN / "data")]) == 2
    assert "CRC" in capsys.readouterr().err


def test_pretrain_finetune_track(tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(GOLDEN / "data", data)
    f = tmp_path / "f.otkr"
    assert main(["pretrain", "--config", str(GOLDEN / "golden.cfg"), "--steps", "3",
                 "--data", str(data), "--out", str(f)]) == 0
    out = capsys.readouterr().out
    assert "config dim=16" in out and "config steps=3" in out and "step 2 loss=" in out
    d = tmp_path / "d.otkr"
    assert main(["finetune", "--task", "rgb_d", "--steps", "2", "--every-k", "2", "--quiet",
                 "--checkpoint", str(f), "--data", str(data), "--out", str(d)]) == 0
    out = capsys.readouterr().out
    assert "config every_k=2" in out and "freeze audit" in out
    assert main(["track", "--checkpoint", str(d), "--foundation", str(f), "--data", str(data),
                 "--out", str(tmp_path / "pred")]) == 0
    lines = (tmp_path / "pred" / "clip_0000" / "boxes.txt").read_text().splitlines()
    assert len(lines) == 5 and [ln.split()[0] for ln in lines] == ["0", "1", "2", "3", "4"]
    assert all(len(ln.split()) == 6 for ln in lines)


def test_track_mask_writes_label_maps(tmp_path):
    f = GOLDEN / "foundation.otkr"
    d = tmp_path / "m.otkr"
    assert main(["finetune", "--task", "rgb_m", "--steps", "1", "--quiet", "--checkpoint", str(f),
                 "--data", str(GOLDEN / "data"), "--out", str(d)]) == 0
    assert main(["track", "--checkpoint", str(d), "--foundation", str(f), "--data", str(GOLDEN / "data"),
                 "--out", str(tmp_path / "pred")]) == 0
    masks = sorted((tmp_path / "pred" / "clip_0001" / "masks").glob("*.pgm"))
    assert len(masks) == 5 and masks[0].read_bytes().startswith(b"P5")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "onetracker", "eval", "--task", "nope"], capture_output=True, text=True)
    assert r.returncode == 1 and "--task" in r.stderr
