"""CLI subcommands: synth, run, eval, gradcheck, bench-attention."""

import json

import numpy as np
import pytest

from mvslite.harness.cli import main
from mvslite.harness.fileio import write_ply
from mvslite.harness.fusion import PointCloud

ORACLE_FLAGS = [
    "--identity-features", "--unet-bypass",
    "--amt-schedule", "s1=0,0", "s2=0,0", "s3=0,0",
]


def synth(tmp_path, name="scene", extra=()):
    out = tmp_path / name
    assert main(["synth", "--output-dir", str(out), *extra]) == 0
    return out


def test_synth_writes_scene(tmp_path, capsys):
    out = synth(tmp_path)
    assert sorted(p.name for p in (out / "images").iterdir()) == [
        "00000000.pfm", "00000001.pfm", "00000002.pfm"
    ]
    assert (out / "cams" / "00000002_cam.txt").exists()
    assert (out / "gt" / "00000001.pfm").exists()
    assert "wrote 3 views" in capsys.readouterr().out


def test_synth_is_deterministic(tmp_path):
    a = synth(tmp_path, "a")
    b = synth(tmp_path, "b")
    for rel in ("images/00000000.pfm", "cams/00000000_cam.txt", "gt/00000002.pfm"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    c = synth(tmp_path, "c", extra=["--seed", "3"])
    assert (a / "images/00000000.pfm").read_bytes() != (c / "images/00000000.pfm").read_bytes()


def test_run_oracle_flags(tmp_path, capsys):
    scene = synth(tmp_path)
    out = tmp_path / "out"
    code = main(["run", str(scene), "--output-dir", str(out), *ORACLE_FLAGS])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "total_loss = " in stdout
    assert (out / "cloud.ply").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["settings"]["identity_features"] is True
    assert report["settings"]["unet_bypass"] is True
    assert report["settings"]["amt_intra"] == [0, 0, 0]


def test_run_deterministic_across_workers(tmp_path):
    scene = synth(tmp_path)
    outs = []
    for name, workers in (("r1", "1"), ("r2", "1"), ("r3", "3")):
        out = tmp_path / name
        code = main([
            "run", str(scene), "--output-dir", str(out), "--workers", workers, *ORACLE_FLAGS,
        ])
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    for other in outs[1:]:
        assert sorted(p.name for p in other.iterdir()) == names
        for name in names:
            assert (outs[0] / name).read_bytes() == (other / name).read_bytes()


def test_run_respects_config_file_and_flag_precedence(tmp_path):
    scene = synth(tmp_path)
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[pipeline]\nfusion_mode = literal\nidentity_features = true\n"
                   "unet_bypass = true\n[attention]\nintra_blocks = 0 0 0\n"
                   "inter_blocks = 0 0 0\n")
    out = tmp_path / "out"
    code = main([
        "run", str(scene), "--config", str(cfg), "--output-dir", str(out),
        "--fusion-mode", "squared",
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["settings"]["fusion_mode"] == "squared"  # flag beats file
    assert report["settings"]["identity_features"] is True  # file beats default


def test_eval_subcommand(tmp_path, capsys):
    pred = tmp_path / "pred.ply"
    gt = tmp_path / "gt.ply"
    write_ply(PointCloud(points=np.array([[0.0, 0.0, 3.0]])), pred)
    write_ply(PointCloud(points=np.array([[0.0, 0.0, 0.0]])), gt)
    assert main(["eval", str(pred), str(gt)]) == 0
    out = capsys.readouterr().out
    assert "accuracy_mm = 3.0" in out
    assert "overall_mm = 3.0" in out


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "status = pass" in out
    assert "ce_0_max_rel_err = " in out
    assert "fm_9_max_rel_err = " in out


def test_bench_attention_prints_table(capsys):
    assert main(["bench-attention"]) == 0
    out = capsys.readouterr().out
    assert "linear_t1024_s = " in out
    assert "quadratic_ratio = " in out


def test_bad_schedule_token_reports_error(tmp_path, capsys):
    scene = synth(tmp_path)
    code = main([
        "run", str(scene), "--output-dir", str(tmp_path / "o"),
        "--amt-schedule", "s1=1", "s2=1,1", "s3=1,1",
    ])
    assert code == 2
    assert "amt-schedule" in capsys.readouterr().err


def test_missing_scene_dir_reports_error(tmp_path, capsys):
    code = main(["run", str(tmp_path / "missing"), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_fusion_mode_rejected_by_parser(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "x", "--output-dir", "y", "--fusion-mode", "cubed"])
