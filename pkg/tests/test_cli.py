import csv
import json

import pytest

from rmss.cli import EXIT_ABORTED, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from rmss.io import load_checkpoint, read_dataset

TINY = """
scene.n_sequences = 4
scene.frames_per_sequence = 5
scene.val_sequences = 1
scene.test_sequences = 1
encoder.hidden = [12, 12]
encoder.head_hidden = [8]
pretrain.epochs = 2
pretrain.batch_size = 4
finetune.epochs = 3
"""


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    assert main(["generate", "--config", str(d / "tiny.cfg"), "--out", str(d / "data"), "--seed", "2"]) == 0
    return d


def test_generate_is_reproducible(workdir, tmp_path):
    assert main(["generate", "--config", str(workdir / "tiny.cfg"), "--out", str(tmp_path / "x"),
                 "--seed", "2"]) == EXIT_OK
    for f in (workdir / "data").iterdir():
        assert f.read_bytes() == (tmp_path / "x" / f.name).read_bytes()
    assert json.loads((workdir / "data" / "manifest.json").read_text())["config"]["seed"] == 2


def test_generate_default_config(tmp_path):
    cfg = tmp_path / "one.cfg"
    cfg.write_text("scene.n_sequences = 1\nscene.frames_per_sequence = 2\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_OK
    assert read_dataset(tmp_path / "d").n_scans == 2


def test_segment_dpr_csv(workdir):
    out = workdir / "dpr.csv"
    assert main(["segment-dpr", "--in", str(workdir / "data"), "--out", str(out)]) == EXIT_OK
    rows = _csv(out)
    n_points = sum(s.n_points for s in read_dataset(workdir / "data").scans())
    assert len(rows) == n_points
    assert {r["mask"] for r in rows} <= {"static", "moving"}


def test_train_evaluate_pipeline(workdir):
    d = workdir
    assert main(["pretrain", "--data", str(d / "data"), "--config", str(d / "tiny.cfg"),
                 "--out", str(d / "pre.ckpt"), "--metrics", str(d / "pre.csv")]) == EXIT_OK
    assert [r["epoch"] for r in _csv(d / "pre.csv")] == ["0", "1"]
    assert load_checkpoint(d / "pre.ckpt").config["kind"] == "pretrained"

    assert main(["finetune", "--data", str(d / "data"), "--checkpoint", str(d / "pre.ckpt"),
                 "--fraction", "0.5", "--config", str(d / "tiny.cfg"), "--out", str(d / "model.ckpt"),
                 "--metrics", str(d / "ft.csv")]) == EXIT_OK
    best = load_checkpoint(d / "model.ckpt").config["best_val"]

    assert main(["evaluate", "--model", str(d / "model.ckpt"), "--data", str(d / "data"),
                 "--split", "val", "--out", str(d / "eval.csv"), "--plot", str(d / "eval.svg")]) == EXIT_OK
    metrics = {r["metric"]: float(r["value"]) for r in _csv(d / "eval.csv")}
    for k in ("iou_moving", "iou_static", "iou_mean"):
        assert abs(metrics[k] - best[k]) <= 1e-12
    assert (d / "eval.svg").read_text().startswith("<?xml")

    assert main(["export-plot", "--report", str(d / "eval.csv"), "--out", str(d / "again.svg")]) == EXIT_OK
    assert (d / "again.svg").read_bytes() == (d / "eval.svg").read_bytes()


def test_finetune_from_scratch(workdir):
    d = workdir
    assert main(["finetune", "--data", str(d / "data"), "--scratch", "--fraction", "0.3",
                 "--config", str(d / "tiny.cfg"), "--out", str(d / "s.ckpt"), "--epochs", "1"]) == EXIT_OK
    assert load_checkpoint(d / "s.ckpt").config["init"] == "scratch"


def test_inspect(workdir, capsys):
    seq = sorted((workdir / "data").glob("*.ndjson"))[0]
    out = workdir / "one.ndjson"
    assert main(["inspect", "--in", str(seq), "--frame", "3", "--out", str(out)]) == EXIT_OK
    assert "frame 3" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 2
    assert main(["inspect", "--in", str(seq), "--frame", "99"]) == EXIT_DATA


def test_exit_codes(workdir, tmp_path):
    d = workdir
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("scene.unknown = 3\n")
    assert main(["generate", "--config", str(bad_cfg), "--out", str(tmp_path / "g")]) == EXIT_USAGE
    assert main(["finetune", "--data", str(d / "data"), "--scratch", "--fraction", "0",
                 "--config", str(d / "tiny.cfg"), "--out", str(tmp_path / "m")]) == EXIT_USAGE
    assert main(["evaluate", "--model", str(d / "pre.ckpt"), "--data", str(d / "data"),
                 "--out", str(tmp_path / "e.csv")]) == EXIT_DATA
    assert main(["pretrain", "--data", str(tmp_path / "missing"), "--config", str(d / "tiny.cfg"),
                 "--out", str(tmp_path / "p")]) == EXIT_DATA
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"nope")
    assert main(["finetune", "--data", str(d / "data"), "--checkpoint", str(garbage),
                 "--config", str(d / "tiny.cfg"), "--out", str(tmp_path / "m")]) == EXIT_DATA
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "--data", "x", "--out", "y"])
    assert exc.value.code == EXIT_USAGE


def test_pretrain_aborts_when_every_pair_is_skipped(tmp_path):
    # one point per scan: no clusters anywhere, so every pair is skipped
    cfg = tmp_path / "sparse.cfg"
    cfg.write_text("scene.n_sequences = 1\nscene.frames_per_sequence = 3\n"
                   "scene.points_static_range = [1, 1]\nscene.n_moving_objects_range = [0, 0]\n"
                   "scene.ghost_point_rate = 0.0\npretrain.epochs = 1\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_OK
    assert main(["pretrain", "--data", str(tmp_path / "d"), "--config", str(cfg),
                 "--out", str(tmp_path / "p.ckpt")]) == EXIT_ABORTED
