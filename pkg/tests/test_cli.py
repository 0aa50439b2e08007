import numpy as np
import pytest

from gmsf.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from gmsf.config import TrainConfig, read_kv
from gmsf.data_io import read_scene


def run(argv):
    lines = []
    code = main(argv, out=lines.append)
    return code, "\n".join(lines)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    code, _ = run(["synth", "--out", str(d), "--scenes", "2", "--points", "24",
                   "--occlusion", "0.2", "--seed", "5"])
    assert code == EXIT_OK
    return d


TRAIN = ["--points", "16", "--dim", "8", "--gct-layers", "1", "--k", "4", "--batch", "1"]


def test_synth_writes_manifest_and_config(dataset):
    assert (dataset / "manifest.json").exists()
    cfg = read_kv(dataset / "config.txt")
    assert cfg["n_points"] == "24" and cfg["occlusion_fraction"] == "0.2"
    assert read_scene(dataset / "scene_0001.sflw").source.points.shape == (24, 3)


def test_eval_oracle_is_perfect(dataset):
    code, text = run(["eval", "--data", str(dataset), "--oracle"])
    assert code == EXIT_OK
    rows = text.splitlines()
    assert rows[0].startswith("split=all epe3d=0.000000 acc_s=100.0000 acc_r=100.0000 "
                              "outliers=0.0000 count=48")
    assert rows[1].startswith("split=non_occ epe3d=0.000000")


def test_train_zero_steps_then_eval_and_infer(dataset, tmp_path):
    out = tmp_path / "run"
    code, text = run(["train", "--data", str(dataset), "--out", str(out), "--steps", "0", *TRAIN])
    assert code == EXIT_OK
    ckpt = out / "model.ckpt"
    assert ckpt.exists()
    assert (out / "train_log.txt").read_text() == ""
    echoed = read_kv(out / "config.txt")
    assert echoed["total_steps"] == "0" and echoed["d"] == "8"

    code, text = run(["eval", "--data", str(dataset), "--ckpt", str(ckpt)])
    assert code == EXIT_OK and text.count("split=") == 2

    pred = tmp_path / "pred.sflw"
    ply = tmp_path / "pred.ply"
    code, _ = run(["infer", "--data", str(dataset / "scene_0000.sflw"), "--ckpt", str(ckpt),
                   "--out", str(pred), "--ply", str(ply)])
    assert code == EXIT_OK
    assert read_scene(pred).gt_flow.shape == (24, 3)
    assert "element vertex 72" in ply.read_text()


def test_train_log_format_and_config_file(dataset, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# tiny run\ntotal_steps=5\nlr_max=0.001\nedge_widths=8\n")
    out = tmp_path / "run"
    code, text = run(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out),
                      "--steps", "3", *TRAIN])
    assert code == EXIT_OK
    log = (out / "train_log.txt").read_text().splitlines()
    assert [l.split()[0] for l in log] == ["step=0", "step=1", "step=2"]
    assert log[0].split()[1].startswith("lr=") and log[0].split()[2].startswith("loss=")
    echoed = read_kv(out / "config.txt")
    assert echoed["total_steps"] == "3"  # flag beats file
    assert echoed["lr_max"] == "0.001"
    assert echoed["edge_widths"] == "8"


def test_replay_from_echoed_config(dataset, tmp_path):
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        src = [] if name == "a" else ["--config", str(tmp_path / "a" / "config.txt")]
        extra = [*TRAIN, "--steps", "3"] if name == "a" else []
        assert run(["train", *src, "--data", str(dataset), "--out", str(out), *extra])[0] == 0
        logs.append((out / "train_log.txt").read_text())
    assert logs[0] == logs[1]


def test_usage_errors(dataset, tmp_path):
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path), "--bogus", "1"])[0] == EXIT_USAGE
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path), "--backbone", "x"])[0] == EXIT_USAGE
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path), "--k", "0"])[0] == EXIT_USAGE
    assert run(["eval", "--data", str(dataset)])[0] == EXIT_USAGE
    assert run([])[0] == EXIT_USAGE
    assert run(["--help"])[0] == EXIT_OK


def test_data_errors(dataset, tmp_path):
    bad = tmp_path / "bad.sflw"
    bad.write_bytes((dataset / "scene_0000.sflw").read_bytes()[:-3])
    code, _ = run(["infer", "--data", str(bad), "--ckpt", str(bad), "--out", str(tmp_path / "x")])
    assert code == EXIT_DATA
    assert run(["eval", "--data", str(tmp_path / "missing"), "--oracle"])[0] == EXIT_DATA


def test_train_divergence_is_numeric_failure(dataset, tmp_path):
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path / "u"),
                "--lr", "nan", *TRAIN])[0] == EXIT_USAGE
    code, _ = run(["train", "--data", str(dataset), "--out", str(tmp_path / "n"),
                   "--lr", "1e38", "--steps", "6", *TRAIN])
    assert code == EXIT_NUMERIC
    # last good state (the initial one) is left behind
    assert (tmp_path / "n" / "model.ckpt").exists()


def test_gradcheck_command(tmp_path):
    report = tmp_path / "grad.txt"
    code, text = run(["gradcheck", "--seeds", "1", "--out", str(report)])
    assert code == EXIT_OK
    assert text.splitlines()[-1].startswith("gradcheck checks=14 failed=0")
    assert report.read_text().count("PASS op=") == 14
