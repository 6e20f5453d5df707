import json
import shutil

import pytest

from tenrmot.cli import main
from tenrmot.formats import load as load_tracks

TINY_FLAGS = ["--d", "16", "--n-detect", "6", "--enc-layers", "1", "--dec-layers", "1", "--heads", "2",
              "--stem-channels", "8", "--c4", "8", "--c8", "16"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "data"), "--n-train", "4", "--n-test", "2",
                 "--length", "4", "--seed", "5"]) == 0
    assert main(["train", "--dataset", str(root / "data"), "--out", str(root / "run"), "--epochs", "1",
                 "--seed", "1", *TINY_FLAGS]) == 0
    return root


def test_generate_and_train_outputs(workspace):
    assert (workspace / "data" / "manifest.json").exists()
    for name in ("model.ckpt", "train_log.csv", "config.ini", "loss.png"):
        assert (workspace / "run" / name).stat().st_size > 0


def test_config_file_round_trips_the_run(workspace, tmp_path):
    from tenrmot.config import load_config

    cfg = load_config(workspace / "run" / "config.ini")
    assert cfg.seed == 1 and cfg.epochs == 1 and cfg.model.d == 16


def test_flags_override_config_file(workspace, tmp_path, capsys):
    conf = tmp_path / "c.ini"
    conf.write_text("epochs = 3\nlr = 0.5\n[model]\nalpha = 0.5\n")
    assert main(["train", "--config", str(conf), "--epochs", "1", "--dataset", str(workspace / "data"),
                 "--out", str(tmp_path / "r"), *TINY_FLAGS]) == 0
    from tenrmot.config import load_config

    cfg = load_config(tmp_path / "r" / "config.ini")
    assert cfg.epochs == 1 and cfg.lr == 0.5 and cfg.model.alpha == 0.5


def test_track_writes_prediction_file(workspace, tmp_path):
    seq = workspace / "data" / "test_0000"
    out = tmp_path / "pred.txt"
    assert main(["track", "--checkpoint", str(workspace / "run" / "model.ckpt"), "--sequence", str(seq),
                 "--expression", "red objects", "--out", str(out)]) == 0
    tf = load_tracks(out)
    assert tf.expression == "red objects" and tf.frames == 4


def test_eval_gt_against_itself(workspace, tmp_path, capsys):
    gt = workspace / "data" / "test_0000" / "gt_0.txt"
    assert main(["eval", "--pred", str(gt), "--gt", str(gt), "--mode", "both", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t") == ["name", "HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr", "LocA"]
    for line in lines[1:]:
        assert all(v == "1.0000" for v in line.split("\t")[1:])
    record = json.loads((tmp_path / "metrics.json").read_text())
    assert record["box"]["HOTA"] == 1.0 and len(record["box"]["curves"]["HOTA"]) == 19
    assert (tmp_path / "metrics.csv").exists() and (tmp_path / "hota_curves.png").stat().st_size > 0


def test_eval_empty_prediction(workspace, tmp_path, capsys):
    gt = workspace / "data" / "train_0000" / "gt_0.txt"
    empty = tmp_path / "empty.txt"
    empty.write_text("\n".join(gt.read_text().splitlines()[:6]) + "\n")
    assert main(["eval", "--pred", str(empty), "--gt", str(gt)]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split("\t")
    if load_tracks(gt).records:
        assert row[1] == "0.0000"


def test_eval_id_switch_fixture(tmp_path, capsys):
    head = "# tenrmot-tracks v1\n# expression: x\n# frames: 10\nframe,id,x,y,w,h,conf,ref,mask\n"
    gt = head + "".join(f"{t},1,10,10,20,20,1,1,\n" for t in range(10))
    pred = head + "".join(f"{t},{5 if t < 5 else 6},10,10,20,20,1,1,\n" for t in range(10))
    (tmp_path / "gt.txt").write_text(gt)
    (tmp_path / "pred.txt").write_text(pred)
    assert main(["eval", "--pred", str(tmp_path / "pred.txt"), "--gt", str(tmp_path / "gt.txt")]) == 0
    assert capsys.readouterr().out.splitlines()[1].split("\t")[1] == "0.7071"


def test_eval_parse_failure_exits_nonzero(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    shutil.copy(workspace / "data" / "test_0000" / "gt_0.txt", bad)
    with open(bad, "a") as fh:
        fh.write("0,1,oops\n")
    code = main(["eval", "--pred", str(bad), "--gt", str(bad)])
    assert code != 0
    assert "line" in capsys.readouterr().err


def test_eval_checkpoint_on_dataset(workspace, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "run" / "model.ckpt"), "--dataset",
                 str(workspace / "data"), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("name\tHOTA")
    assert list((tmp_path / "tracks_box").glob("*.txt"))


def test_ablate_alpha_sweep_emits_six_rows(workspace, tmp_path, capsys):
    assert main(["ablate", "--sweeps", "alpha", "--alpha-at-inference", "--dataset", str(workspace / "data"),
                 "--out", str(tmp_path), "--epochs", "1", *TINY_FLAGS]) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())
    overall = [r for r in rows if r["subset"] == "all"]
    assert [r["cell"] for r in overall] == ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]
    assert all("HOTA" in r for r in overall)
    assert (tmp_path / "ablation.png").stat().st_size > 0
    assert capsys.readouterr().out.startswith("sweep\tcell")


def test_ablation_grid_covers_cues_and_components():
    from tenrmot.ablate import build_cells
    from tenrmot.config import RunConfig

    cells = build_cells(RunConfig(), ["components", "cues"])
    assert [c.name for c in cells if c.sweep == "cues"] == ["box", "mask", "box+mask"]
    assert {c.name for c in cells if c.sweep == "components"} == {"full", "no-ice", "no-lgd"}
    assert not next(c for c in cells if c.name == "no-ice").config.model.use_ice


def test_unknown_config_key(tmp_path, capsys):
    conf = tmp_path / "c.ini"
    conf.write_text("nonsense = 1\n")
    assert main(["train", "--config", str(conf)]) == 2
