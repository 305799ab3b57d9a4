"""Command-line surface: exit codes, file outputs, and cross-command
consistency."""

import contextlib
import io as stdio
import json

import numpy as np
import pytest

from evseg.cli import main
from evseg.events import voxelize
from evseg.io import read_events, read_pgm, read_voxels
from evseg.model import ModelConfig, StageSpec


def invoke(*args):
    buf = stdio.StringIO()
    err = stdio.StringIO()
    try:
        with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(err):
            code = main(list(args))
    except SystemExit as exc:  # argparse usage failures
        code = exc.code
    return code, buf.getvalue(), err.getvalue()


def small_config_doc(**kw):
    cfg = dict(
        t_bins=4,
        stages=[[4, 1, 4], [8, 1, 2]],
        num_classes=2,
        input_h=16,
        input_w=16,
        k_s=3,
        reduction=2,
        state_dim=2,
        vss_expand=1,
        decoder_width=8,
        seed=0,
    )
    cfg.update(kw)
    return {"model": cfg}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config_doc()))
    return str(path)


def gen_scene(tmp_path, h=16, w=16):
    out = tmp_path / "scene"
    code, _, _ = invoke("gen-data", "--seed", "0", "--height", str(h),
                        "--width", str(w), "--out-dir", str(out))
    assert code == 0
    return out


# ---------------------------------------------------------------------------


def test_gen_data_writes_scene(tmp_path):
    out = gen_scene(tmp_path)
    events = read_events(out / "events.txt")
    assert len(events) > 0
    assert read_pgm(out / "image.pgm").shape == (16, 16)
    assert read_pgm(out / "label.pgm").shape == (16, 16)


def test_voxelize_matches_in_process(tmp_path):
    out = gen_scene(tmp_path)
    vox_path = tmp_path / "v.msvg"
    code, msg, _ = invoke("voxelize", "--events", str(out / "events.txt"),
                          "--t0", "0", "--t1", "100000", "--bins", "4",
                          "--out", str(vox_path))
    assert code == 0
    assert "in_window=" in msg and "checksum=" in msg
    stream = read_events(out / "events.txt")
    expected = voxelize(stream, 0, 100000, 4)
    np.testing.assert_array_equal(read_voxels(vox_path).data.data,
                                  expected.data.data)


def test_voxelize_bad_window_usage_error(tmp_path):
    out = gen_scene(tmp_path)
    code, _, err = invoke("voxelize", "--events", str(out / "events.txt"),
                          "--t0", "10", "--t1", "10", "--bins", "2")
    assert code == 2
    assert "t1" in err


def test_voxelize_parse_error_line_number(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("# events w=4 h=4\n0 0 0 1\nnope\n")
    code, _, err = invoke("voxelize", "--events", str(bad),
                          "--t0", "0", "--t1", "10", "--bins", "1")
    assert code == 2
    assert "line 3" in err


def test_forward_outputs_and_params_line(tmp_path, config_path):
    out = gen_scene(tmp_path)
    vox = tmp_path / "v.msvg"
    invoke("voxelize", "--events", str(out / "events.txt"),
           "--t0", "0", "--t1", "100000", "--bins", "4", "--out", str(vox))
    code, msg, _ = invoke("forward", "--config", config_path,
                          "--voxels", str(vox), "--image", str(out / "image.pgm"),
                          "--out-dir", str(tmp_path), "--render")
    assert code == 0
    pred = read_pgm(tmp_path / "prediction.pgm")
    assert pred.shape == (16, 16)
    assert (tmp_path / "prediction.ppm").exists()
    params_line = [l for l in msg.splitlines() if l.startswith("params=")][0]
    cfg = ModelConfig(t_bins=4, stages=(StageSpec(4, 1, 4), StageSpec(8, 1, 2)),
                      num_classes=2, input_h=16, input_w=16, k_s=3, reduction=2,
                      state_dim=2, vss_expand=1, decoder_width=8, seed=0)
    from evseg.counting import count_params_macs

    p, m = count_params_macs(cfg)
    assert params_line == f"params={p} macs={m}"


def test_forward_requires_config():
    code, _, err = invoke("forward")
    assert code == 2


def test_forward_digest_mismatch_exit_3(tmp_path, config_path):
    out = gen_scene(tmp_path)
    vox = tmp_path / "v.msvg"
    invoke("voxelize", "--events", str(out / "events.txt"),
           "--t0", "0", "--t1", "100000", "--bins", "4", "--out", str(vox))
    code, _, _ = invoke("train-toy", "--config", config_path, "--steps", "0",
                        "--out-dir", str(tmp_path))
    assert code == 0
    other = tmp_path / "other.json"
    other.write_text(json.dumps(small_config_doc(state_dim=3)))
    code, _, err = invoke("forward", "--config", str(other),
                          "--voxels", str(vox), "--image", str(out / "image.pgm"),
                          "--weights", str(tmp_path / "weights.mswt"),
                          "--out-dir", str(tmp_path))
    assert code == 3
    assert "digest" in err


def test_train_toy_outputs(tmp_path, config_path):
    code, msg, _ = invoke("train-toy", "--config", config_path, "--steps", "4",
                          "--out-dir", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "loss.csv").read_text().strip().splitlines()
    assert rows[0] == "step,loss"
    assert len(rows) == 1 + 5  # header + steps+1 entries
    assert (tmp_path / "weights.mswt").exists()
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert {"miou", "pixel_acc", "params"} <= set(doc)
    assert "miou=" in msg


def test_train_toy_zero_steps_checkpoint_is_init(tmp_path, config_path):
    from evseg.io import load_weights
    from evseg.model import init_weights, named_tensors

    code, _, _ = invoke("train-toy", "--config", config_path, "--steps", "0",
                        "--out-dir", str(tmp_path))
    assert code == 0
    _, loaded = load_weights(tmp_path / "weights.mswt")
    cfg = ModelConfig.from_dict(small_config_doc()["model"])
    reference = named_tensors(init_weights(cfg))
    assert set(loaded) == set(reference)
    for name, arr in loaded.items():
        np.testing.assert_array_equal(arr, reference[name].data, err_msg=name)


def test_bench_scan_csv(tmp_path):
    csv = tmp_path / "bench.csv"
    code, msg, _ = invoke("bench-scan", "--lengths", "64,128", "--d", "4",
                          "--n", "4", "--repeats", "1", "--out", str(csv))
    assert code == 0
    rows = csv.read_text().strip().splitlines()
    assert rows[0] == "L,ns_per_element,total_ns"
    assert len(rows) == 3
    assert "doubling_ratio=" in msg


def test_gradcheck_scope_tensor(tmp_path):
    code, msg, _ = invoke("gradcheck", "--scope", "tensor", "--seed", "0")
    assert code == 0
    lines = [l for l in msg.splitlines() if "max_rel_err" in l]
    names = [l.split()[0] for l in lines]
    assert len(names) == len(set(names))  # every op exactly once
    assert "conv2d" in names and "layernorm" in names
    assert all(l.endswith("PASS") for l in lines)


def test_gradcheck_unknown_scope_usage_error():
    code, _, err = invoke("gradcheck", "--scope", "everything")
    assert code == 2
    assert "scope" in err


def test_metrics_worked_example(tmp_path):
    from evseg.io import classes_to_pgm, write_pgm

    write_pgm(tmp_path / "pred.pgm", classes_to_pgm(np.array([[0, 1], [1, 1]]), 2))
    write_pgm(tmp_path / "label.pgm", classes_to_pgm(np.array([[0, 0], [1, 1]]), 2))
    out = tmp_path / "m.json"
    code, msg, _ = invoke("metrics", "--pred", str(tmp_path / "pred.pgm"),
                          "--label", str(tmp_path / "label.pgm"),
                          "--classes", "2", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    assert abs(doc["miou"] - 7.0 / 12.0) < 1e-5
    assert "miou=0.58333" in msg


def test_metrics_identical_files(tmp_path):
    from evseg.io import classes_to_pgm, write_pgm

    arr = classes_to_pgm(np.array([[0, 1], [1, 0]]), 2)
    write_pgm(tmp_path / "a.pgm", arr)
    code, msg, _ = invoke("metrics", "--pred", str(tmp_path / "a.pgm"),
                          "--label", str(tmp_path / "a.pgm"), "--classes", "2",
                          "--out", str(tmp_path / "m.json"))
    assert code == 0
    assert "miou=1.00000" in msg


def test_metrics_size_mismatch(tmp_path):
    from evseg.io import write_pgm

    write_pgm(tmp_path / "a.pgm", np.zeros((2, 2), dtype=np.uint8))
    write_pgm(tmp_path / "b.pgm", np.zeros((3, 3), dtype=np.uint8))
    code, _, err = invoke("metrics", "--pred", str(tmp_path / "a.pgm"),
                          "--label", str(tmp_path / "b.pgm"), "--classes", "2")
    assert code == 2
    assert "mismatch" in err


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"bogus_knob": 1}}))
    code, _, err = invoke("forward", "--config", str(path))
    assert code == 2
    assert "bogus_knob" in err


def test_quiet_suppresses_output(tmp_path):
    out = tmp_path / "scene"
    code, msg, _ = invoke("gen-data", "--seed", "0", "--height", "16",
                          "--width", "16", "--out-dir", str(out), "--quiet")
    assert code == 0
    assert msg == ""


def test_voxelize_empty_event_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("# events w=4 h=4\n")
    out = tmp_path / "v.msvg"
    code, msg, _ = invoke("voxelize", "--events", str(path), "--t0", "0",
                          "--t1", "100", "--bins", "2", "--out", str(out))
    assert code == 0
    assert "events=0 in_window=0" in msg
    grid = read_voxels(out)
    assert (grid.data.data == 0).all() and grid.data.shape == (2, 4, 4)


def test_forward_params_line_matches_metrics_json(tmp_path, config_path):
    out = gen_scene(tmp_path)
    vox = tmp_path / "v.msvg"
    invoke("voxelize", "--events", str(out / "events.txt"), "--t0", "0",
           "--t1", "100000", "--bins", "4", "--out", str(vox))
    code, msg, _ = invoke("forward", "--config", config_path, "--voxels", str(vox),
                          "--image", str(out / "image.pgm"), "--out-dir", str(tmp_path))
    assert code == 0
    params_line = [l for l in msg.splitlines() if l.startswith("params=")][0]
    mjson = tmp_path / "m.json"
    code, _, _ = invoke("metrics", "--pred", str(tmp_path / "prediction.pgm"),
                        "--label", str(out / "label.pgm"), "--classes", "2",
                        "--config", config_path, "--out", str(mjson))
    assert code == 0
    doc = json.loads(mjson.read_text())
    assert params_line == f"params={doc['params']} macs={doc['macs']}"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_toy_divergence_exit_4(tmp_path, config_path):
    code, _, err = invoke("train-toy", "--config", config_path, "--steps", "8",
                          "--lr", "1e9", "--out-dir", str(tmp_path))
    assert code == 4
    assert "step" in err


def test_gradcheck_failure_exit_5(monkeypatch):
    from evseg import cli as cli_mod

    monkeypatch.setattr(cli_mod.gradcheck, "run_scope",
                        lambda scope, seed: {"broken_op": 1.0})
    code, msg, err = invoke("gradcheck", "--scope", "tensor")
    assert code == 5
    assert "broken_op" in err and "FAIL" in msg


def test_console_script_entry_point(tmp_path):
    import shutil
    import subprocess

    exe = shutil.which("evseg")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "gen-data", "--seed", "1", "--height", "16",
                          "--width", "16", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert (tmp_path / "events.txt").exists()
