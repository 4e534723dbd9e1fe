import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omniloss import __version__
from omniloss.cli import (
    UsageError,
    build_train_config,
    build_parser,
    load_checkpoint,
    main,
    read_config_file,
    read_ppm,
    write_ppm,
)
from omniloss.toydata import MetricsRow

RING = ["--steps", "30", "--set", "eval_interval=15", "--set", "n_classes=3",
        "--set", "n_eval=64"]
IMAGE = ["--task", "image", "--steps", "10", "--set", "eval_interval=5",
         "--set", "n_classes=2", "--set", "n_data=16", "--set", "n_eval=8",
         "--set", "batch_size=8"]


@pytest.fixture(scope="module")
def image_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("img")
    assert main(["train", *IMAGE, "--out", str(out)]) == 0
    return out


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)),
              elements=st.floats(-1, 1)))
@settings(max_examples=40, deadline=None)
def test_ppm_roundtrip_within_one_level(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 127.5 / 2 + 1e-12


def test_ppm_mapping_and_clamp(tmp_path):
    path = tmp_path / "a.ppm"
    write_ppm(path, np.array([[[-1.0, 0.0, 1.0], [-3.0, 5.0, 0.5]]]))
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n2 1\n255\n")
    assert list(raw[-6:]) == [0, 128, 255, 0, 255, 191]


def test_ppm_reader_skips_comments_and_rejects_junk(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# note\n1 1\n255\n" + bytes([255, 0, 128]))
    np.testing.assert_allclose(read_ppm(p)[0, 0], [1.0, -1.0, 128 / 127.5 - 1])
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
    with pytest.raises(UsageError):
        read_ppm(tmp_path / "bad.ppm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    with pytest.raises(UsageError):
        read_ppm(tmp_path / "short.ppm")


def test_paper_table_output(capsys):
    assert main(["paper-table"]) == 0
    out = capsys.readouterr().out
    for pair in ("0.98     0.50", "0.02     0.50", "0.79     0.11", "0.11     0.79"):
        assert pair in out


def test_grad_check_exit_codes(capsys):
    assert main(["grad-check", "--trials", "2"]) == 0
    assert "all passed" in capsys.readouterr().out
    assert main(["grad-check", "--trials", "2", "--tol", "1e-14"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nvariant = projection\nsteps = 7\n"
                        "preset = small-decay\nd_hidden = 8, 8\nlr_d = 0.01  # tail\n")
    assert read_config_file(cfg_file)["d_hidden"] == "8, 8"
    args = build_parser().parse_args(
        ["train", "--config", str(cfg_file), "--steps", "9", "--out", "x"])
    cfg, preset = build_train_config(args)
    assert (cfg.variant, cfg.steps, cfg.d_hidden, cfg.lr_d) == ("projection", 9, (8, 8), 0.01)
    assert preset == "small-decay" and cfg.weight_decay_d == 5e-4
    args = build_parser().parse_args(
        ["train", "--config", str(cfg_file), "--preset", "no-decay",
         "--set", "weight_decay_d=0.25", "--out", "x"])
    cfg, _ = build_train_config(args)
    assert cfg.weight_decay_d == 0.25 and cfg.weight_decay_g == 0.0


@pytest.mark.parametrize("lines", ["steps 5\n", "bogus = 1\n", "steps = five\n"])
def test_bad_config_is_usage_error(tmp_path, lines):
    p = tmp_path / "bad.cfg"
    p.write_text(lines)
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_train_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", *RING, "--seed", "4", "--out", str(a)]) == 0
    assert main(["train", *RING, "--seed", "4", "--out", str(b)]) == 0
    lines = (a / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(MetricsRow.FIELDS)
    assert [l.split(",")[0] for l in lines[1:]] == ["15", "30"]
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    collapse = (a / "collapse.txt").read_text().splitlines()
    assert len(collapse) == 3 and collapse[0] in ("collapsed: true", "collapsed: false")
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["version"] == __version__
    assert manifest["prng"] and manifest["config"]["n_classes"] == 3
    G, D, meta = load_checkpoint(a / "checkpoint.bin")
    assert meta["generator_kind"] == "direct" and meta["train_config"]["seed"] == 4
    c = tmp_path / "c"
    main(["train", *RING, "--seed", "5", "--out", str(c)])
    assert (a / "metrics.csv").read_bytes() != (c / "metrics.csv").read_bytes()


def test_sample_any_resolution(image_run, tmp_path):
    out = tmp_path / "s.ppm"
    args = ["sample", "--checkpoint", str(image_run / "checkpoint.bin"), "--class", "1",
            "--height", "5", "--width", "11", "--sigma", "0.5", "--out", str(out)]
    assert main(args) == 0
    img = read_ppm(out)
    assert img.shape == (5, 11, 3)
    first = out.read_bytes()
    assert main(args) == 0 and out.read_bytes() == first
    manifest = json.loads((tmp_path / "s.ppm.manifest.json").read_text())
    assert manifest["config"]["height"] == 5


def test_sample_errors(image_run, tmp_path, capsys):
    ring = tmp_path / "ring"
    main(["train", *RING, "--out", str(ring)])
    capsys.readouterr()
    assert main(["sample", "--checkpoint", str(ring / "checkpoint.bin"),
                 "--height", "16", "--out", str(tmp_path / "x.ppm")]) == 2
    assert "direct" in capsys.readouterr().err
    assert main(["sample", "--checkpoint", str(tmp_path / "missing.bin"),
                 "--out", str(tmp_path / "x.ppm")]) == 2
    assert main(["sample", "--checkpoint", str(image_run / "checkpoint.bin"),
                 "--class", "9", "--out", str(tmp_path / "x.ppm")]) == 2


def test_invert_writes_report(image_run, tmp_path):
    ckpt = str(image_run / "checkpoint.bin")
    target = tmp_path / "t.ppm"
    main(["sample", "--checkpoint", ckpt, "--seed", "3", "--out", str(target)])
    out = tmp_path / "inv"
    assert main(["invert", "--checkpoint", ckpt, "--target", str(target),
                 "--degrade", "downsample:4", "--steps", "5", "--out", str(out)]) == 0
    assert read_ppm(out / "restored.ppm").shape == (8, 8, 3)
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,objective" and len(trace) == 1 + 6
    report = (out / "report.txt").read_text()
    assert "psnr_db" in report and "psnr_bilinear_db" in report
    assert json.loads((out / "manifest.json").read_text())["command"] == "invert"


def test_invert_degraded_target_has_no_psnr(image_run, tmp_path):
    small = tmp_path / "small.ppm"
    write_ppm(small, np.zeros((2, 2, 3)))
    out = tmp_path / "inv"
    assert main(["invert", "--checkpoint", str(image_run / "checkpoint.bin"),
                 "--target", str(small), "--degrade", "downsample:4", "--class", "0",
                 "--steps", "2", "--out", str(out)]) == 0
    assert "psnr" not in (out / "report.txt").read_text()


def test_invert_usage_errors(image_run, tmp_path):
    ckpt = str(image_run / "checkpoint.bin")
    assert main(["invert", "--checkpoint", ckpt, "--target", str(tmp_path / "no.ppm"),
                 "--out", str(tmp_path / "o")]) == 2
    target = tmp_path / "t.ppm"
    write_ppm(target, np.zeros((8, 8, 3)))
    assert main(["invert", "--checkpoint", ckpt, "--target", str(target),
                 "--degrade", "blur:3", "--out", str(tmp_path / "o")]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--variant", "nope", "--out", "x"])
    assert exc.value.code == 2
