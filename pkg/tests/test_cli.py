import json

import numpy as np
import pytest

from sparkle import io
from sparkle.cli import main
from sparkle.render import random_lightmaps

SMALL = {
    "scene": {"screen": {"width_pixels": 3, "height_pixels": 3, "pixel_width": 0.5},
              "surface": {"rows": 18, "cols": 18}},
    "calibration": {"k": 4},
    "sweep": {"seeds": [0, 1], "sigmas": [0.0, 0.01], "k_values": [0, 4], "test_sigmas": [0.0, 0.01], "n_test": 3},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_simulate_calibrate_reconstruct(tmp_path, cfg_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg_path), "--out-dir", str(sim)]) == 0
    assert main(["calibrate", "--responses", str(sim), "--out", str(tmp_path / "A.mat")]) == 0
    est = io.read_matrix(tmp_path / "A.mat")
    true = io.read_matrix(sim / "A_true.mat")
    # captures are stored as float32
    assert np.max(np.abs(est.data - true.data[est.mask])) < 1e-6
    x = random_lightmaps((3, 3), 1, 0)[0]
    io.write_pfm(tmp_path / "y.pfm", (true @ x).reshape(18, 18))
    out = tmp_path / "x.pfm"
    assert main(["reconstruct", "--matrix", str(tmp_path / "A.mat"), "--image", str(tmp_path / "y.pfm"),
                 "--out", str(out)]) == 0
    assert np.max(np.abs(io.read_pfm(out) - x)) < 1e-5
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["shift"] == [0.0, 0.0] and side["solver"] == "unconstrained"
    assert main(["reconstruct", "--matrix", str(tmp_path / "A.mat"), "--image", str(tmp_path / "y.pfm"),
                 "--shift-search", "-1,1,0.5", "--out", str(tmp_path / "xs.pfm")]) == 0
    assert main(["reconstruct", "--matrix", str(tmp_path / "A.mat"), "--image", str(tmp_path / "y.pfm"),
                 "--nonneg", "--out", str(tmp_path / "xn.pfm")]) == 0
    assert main(["calibrate", "--responses", str(sim / "manifest.json"), "--k", "2", "--no-mask",
                 "--out", str(tmp_path / "A2.mat")]) == 0
    assert io.read_matrix(tmp_path / "A2.mat").mask is None


def test_hdr_command(tmp_path):
    s = np.array([[0.05, 0.2], [0.3, 0.1]])
    entries = []
    for t in (1.0, 2.0, 4.0):
        p = tmp_path / f"e{t}.pfm"
        io.write_pfm(p, np.clip(s * t, 0, 1))
        entries.append({"exposure_time": t, "path": p.name})
    man = tmp_path / "stack.json"
    man.write_text(json.dumps({"exposures": entries, "window": [0.1, 0.7]}))
    assert main(["hdr", "--stack", str(man), "--out", str(tmp_path / "m.pfm")]) == 0
    assert np.allclose(io.read_pfm(tmp_path / "m.pfm"), s, atol=1e-7)
    io.write_pfm(tmp_path / "bg.pfm", np.zeros((2, 2)))
    assert main(["hdr", "--stack", str(man), "--background", str(tmp_path / "bg.pfm"),
                 "--out", str(tmp_path / "m2.pfm")]) == 0


@pytest.mark.parametrize("what", ["overlap", "spectrum", "noise-sweep", "basis-sweep", "test-noise"])
def test_analyze_writes_csv(tmp_path, cfg_path, what):
    out = tmp_path / f"{what}.csv"
    assert main(["analyze", what, "--config", str(cfg_path), "--out", str(out), "--diffuse"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and len(lines) > 2


def test_pipeline_command(tmp_path, cfg_path):
    assert main(["--config", str(cfg_path), "--threads", "2", "pipeline", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["metrics"]["ssd_mean"] < 1e-12
    assert rep["config"]["scene"]["screen"]["width_pixels"] == 3


def test_exit_codes(tmp_path, cfg_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"scene": {"sigma_theta": -1}}')
    assert main(["pipeline", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    (tmp_path / "junk.mat").write_bytes(b"junk")
    assert main(["reconstruct", "--matrix", str(tmp_path / "junk.mat"), "--image", "y.pfm"]) == 3
    deficient = tmp_path / "def.json"
    deficient.write_text(json.dumps({"scene": {"screen": {"width_pixels": 6, "height_pixels": 6, "pixel_width": 0.5},
                                               "surface": {"rows": 3, "cols": 3}}, "calibration": {"k": 2}}))
    assert main(["pipeline", "--config", str(deficient), "--out-dir", str(tmp_path / "d"), "--no-cache"]) == 2
    monkeypatch.setenv("SPARKLE_THREADS", "many")
    assert main(["analyze", "test-noise", "--config", str(cfg_path), "--out", str(tmp_path / "t.csv")]) == 1
    assert main(["--threads", "0", "pipeline", "--config", str(cfg_path)]) == 1
