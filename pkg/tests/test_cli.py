import configparser

import numpy as np
import pytest

from sonarkit.cli import main
from sonarkit.register import load_trajectory


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--output-dir", str(out), "--frames", "10", "--seed", "3"]) == 0
    return out


def run_pipeline(src, out):
    return main(["pipeline", str(src / "noisy.sonr"), "--output-dir", str(out),
                 "--epochs", "1", "--seed", "3", "--threads", "1"])


@pytest.fixture(scope="module")
def two_runs(synth_dir, tmp_path_factory):
    a, b = tmp_path_factory.mktemp("run_a"), tmp_path_factory.mktemp("run_b")
    assert run_pipeline(synth_dir, a) == 0
    assert run_pipeline(synth_dir, b) == 0
    return a, b


def test_synth_outputs(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"noisy.sonr", "clean.sonr", "ground_truth.txt", "scene.npz", "effective_config.ini"} <= names
    cp = configparser.ConfigParser()
    cp.read(synth_dir / "effective_config.ini")
    assert cp.get("run", "seed") == "3" and cp.get("synth", "frames") == "10"


def test_pipeline_writes_three_artifacts_plus_logs(two_runs):
    names = {p.name for p in two_runs[0].iterdir()}
    assert names == {"denoised.sonr", "trajectory.txt", "panorama.png", "run.log", "effective_config.ini"}


def test_pipeline_is_byte_identical(two_runs):
    a, b = two_runs
    for name in ("denoised.sonr", "trajectory.txt", "panorama.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_eval_report(synth_dir, two_runs, tmp_path):
    assert main(["eval", "--run-dir", str(two_runs[0]), "--truth-dir", str(synth_dir),
                 "--output-dir", str(tmp_path)]) == 0
    kv = dict(line.split("=", 1) for line in (tmp_path / "report.txt").read_text().splitlines())
    assert kv["frames"] == "10"
    for key in ("translation_rmse_px", "rotation_rmse_deg", "panorama_psnr_db", "single_frame_psnr_db"):
        assert key in kv
    assert len((tmp_path / "frames.csv").read_text().splitlines()) == 11


def test_mosaic_with_external_matches(synth_dir, tmp_path):
    first, second = tmp_path / "m1", tmp_path / "m2"
    assert main(["mosaic", str(synth_dir / "clean.sonr"), "--output-dir", str(first), "--threads", "1"]) == 0
    assert len(list((first / "matches").iterdir())) == 9
    assert (first / "coverage.png").is_file()
    assert main(["mosaic", str(synth_dir / "clean.sonr"), "--output-dir", str(second),
                 "--matches-dir", str(first / "matches"), "--threads", "1"]) == 0
    # Match files store rounded coordinates, so poses agree closely but not bit for bit.
    ref, got = load_trajectory(first / "trajectory.txt"), load_trajectory(second / "trajectory.txt")
    for p, q in zip(ref.poses, got.poses):
        assert abs(p.rotation_deg - q.rotation_deg) < 1e-3
        np.testing.assert_allclose(p.translation, q.translation, atol=1e-2)


def test_train_then_denoise(synth_dir, tmp_path):
    assert main(["train", str(synth_dir / "noisy.sonr"), "--output-dir", str(tmp_path / "t"), "--epochs", "1"]) == 0
    assert (tmp_path / "t" / "loss_history.csv").is_file()
    assert main(["denoise", str(synth_dir / "noisy.sonr"), "--model", str(tmp_path / "t" / "model.sndm"),
                 "--output-dir", str(tmp_path / "d"), "--png"]) == 0
    assert len(list((tmp_path / "d" / "frames").iterdir())) == 10


def error_line(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return lines[-1]


def test_missing_input_is_io_error(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.sonr"), "--output-dir", str(tmp_path)]) != 0
    assert error_line(capsys).startswith("error: io-error: ")


def test_bad_file_is_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.sonr"
    bad.write_bytes(b"XXXX" + bytes(60))
    assert main(["train", str(bad), "--output-dir", str(tmp_path)]) != 0
    assert error_line(capsys).startswith("error: format-error: ")


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[train]\nlearning_rat = 1\n", "[train]\nepochs = many\n"])
def test_bad_config_is_invalid_argument(tmp_path, capsys, text):
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    assert main(["synth", "--config", str(cfg), "--output-dir", str(tmp_path)]) != 0
    assert error_line(capsys).startswith("error: invalid-argument: ")


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[synth]\nframes = 2\n[run]\nseed = 9\n")
    assert main(["synth", "--config", str(cfg), "--seed", "4", "--output-dir", str(tmp_path / "o")]) == 0
    cp = configparser.ConfigParser()
    cp.read(tmp_path / "o" / "effective_config.ini")
    assert cp.get("synth", "frames") == "2" and cp.get("run", "seed") == "4"


def test_all_edges_failing_is_registration_failure(tmp_path, capsys):
    from sonarkit.geometry import PolarFrame, SensorGeometry
    from sonarkit.ingest import FrameSequence, write_container

    g = SensorGeometry()
    frames = [PolarFrame(g, k * 100_000, np.full(g.shape, 0.5, np.float32)) for k in range(3)]
    write_container(tmp_path / "flat.sonr", FrameSequence(g, frames))
    assert main(["mosaic", str(tmp_path / "flat.sonr"), "--output-dir", str(tmp_path / "o"), "--threads", "1"]) != 0
    assert error_line(capsys).startswith("error: registration-failure: ")
