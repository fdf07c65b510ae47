import json
import os

import numpy as np
import pytest

from eddyscope import io as eio
from eddyscope.cli import main
from eddyscope.config import ExperimentConfig, standard_frequencies
from eddyscope.errors import ConfigError
from eddyscope.forward import MsrMatrix

PRESETS = os.path.join(os.path.dirname(__file__), os.pardir, "presets")


@pytest.fixture
def small_cfg(tmp_path):
    """Coarse ellipsoid experiment that runs in seconds."""
    cfg = ExperimentConfig()
    cfg.name = "small"
    cfg.geometry.n_side = 8
    cfg.target.h = 0.25
    cfg.target.center = [0.1, -0.1, 0.0]
    cfg.search.step = 0.05
    cfg.search.half_width = 0.5
    cfg.noise_levels = [0.05]
    cfg.trials = 3
    cfg.seed_base = 42
    path = tmp_path / "small.cfg"
    path.write_text(cfg.to_text())
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- config

def test_config_round_trip():
    cfg = ExperimentConfig()
    cfg.frequencies = standard_frequencies()
    cfg.target.parameters = {"semi_axes": [2.0, 1.0, 1.0]}
    cfg.dictionary.shapes = ["cube", "sphere"]
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(PRESETS) if f.endswith(".cfg")))
def test_presets_load(name):
    cfg = ExperimentConfig.load(os.path.join(PRESETS, name))
    assert ExperimentConfig.from_text(cfg.to_text(), cfg.source) == cfg


@pytest.mark.parametrize("text", [
    "[experiment]\ntrials = 0\n",
    "[experiment]\nnoise_levels = 1.5\n",
    "[nonsense]\na = 1\n",
    "[target]\ncolour = red\n",
    "[physics]\nomega = -1\n",
    "[dictionary]\nprovenance = file\npath = missing.json\n",
    "not an ini file",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_standard_frequencies():
    w = standard_frequencies()
    assert len(w) == 19 and w[0] == 83.5 and w[-1] == 263.5


# ---------------------------------------------------------------- io

def test_msr_container_round_trip(tmp_path, rng):
    A = MsrMatrix(rng.standard_normal((5, 7)), 133.5, [0, 1, 0], 1e-3, 99)
    eio.write_msr(tmp_path / "a.emsr", A)
    B = eio.read_msr(tmp_path / "a.emsr")
    np.testing.assert_array_equal(B.A, A.A)
    assert (B.omega, B.sigma_noise, B.seed) == (133.5, 1e-3, 99)
    np.testing.assert_array_equal(B.q, [0, 1, 0])
    C = MsrMatrix(A.A, 1.0, [0, 0, 1])
    assert eio.msr_from_bytes(eio.msr_to_bytes(C)).seed is None


def test_msr_container_rejects_damage(rng):
    data = eio.msr_to_bytes(MsrMatrix(rng.standard_normal((3, 3)), 1.0, [0, 0, 1]))
    with pytest.raises(eio.FormatError):
        eio.msr_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(eio.FormatError):
        eio.msr_from_bytes(data[:-8])
    with pytest.raises(eio.FormatError):
        eio.msr_from_bytes(data[:10])


def test_csv_format():
    text = eio.rows_to_csv(["a", "b"], [(1, 0.1), ("x", np.float64(2.5))])
    assert text == "a,b\n1,0.1\nx,2.5\n"


# ---------------------------------------------------------------- commands

def test_simulate_is_reproducible(tmp_path, small_cfg, capsys):
    for sub in ("one", "two"):
        code, out, _ = run(capsys, "simulate", "--config", small_cfg,
                           "--out", str(tmp_path / sub))
        assert code == 0 and json.loads(out)["written"] == 3
    for l in (1, 2, 3):
        name = f"msr_f00_q{l}.emsr"
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    assert (tmp_path / "one" / "msr_singular_values.png").stat().st_size > 0
    A = eio.read_msr(tmp_path / "one" / "msr_f00_q3.emsr")
    assert A.sigma_noise > 0 and A.seed is not None
    code, _, _ = run(capsys, "simulate", "--config", small_cfg, "--seed", "43",
                     "--out", str(tmp_path / "three"))
    assert (tmp_path / "three" / "msr_f00_q1.emsr").read_bytes() != \
        (tmp_path / "one" / "msr_f00_q1.emsr").read_bytes()


def test_simulate_locate_recover_pipeline(tmp_path, small_cfg, capsys):
    out = str(tmp_path)
    run(capsys, "simulate", "--config", small_cfg, "--out", out, "--noise-level", "0",
        "--format", "csv")
    assert (tmp_path / "msr_f00_q1.csv").exists()
    files = sorted(str(p) for p in tmp_path.glob("*.emsr"))
    code, text, _ = run(capsys, "locate", *files, "--config", small_cfg, "--out", out)
    assert code == 0
    z = json.loads(text)["z_hat"]
    np.testing.assert_allclose(z, [0.1, -0.1, 0.0], atol=1e-9)
    header = (tmp_path / "imaging_map.csv").read_text().splitlines()[0]
    assert header == "x,y,value"
    assert (tmp_path / "imaging_map.png").exists()
    code, text, _ = run(capsys, "recover", *files, "--config", small_cfg, "--out", out,
                        "--location", str(tmp_path / "location.json"))
    assert code == 0
    desc = eio.read_json(tmp_path / "descriptor.json")
    assert desc["values"][0] == 1.0 and len(desc["values"]) == 3
    rec = eio.read_json(tmp_path / "recovered_f00.json")
    assert np.all(np.array(rec["blocks"])[[0, 4, 8]] == 0)


def test_recover_needs_three_files(tmp_path, small_cfg, capsys):
    run(capsys, "simulate", "--config", small_cfg, "--out", str(tmp_path))
    files = sorted(str(p) for p in tmp_path.glob("*.emsr"))[:2]
    code, _, err = run(capsys, "recover", *files, "--config", small_cfg,
                       "--out", str(tmp_path), "--location", "0,0,0")
    assert code == 3 and json.loads(err)["error"] == "InconsistentInputs"


def test_solve_cpt_and_build_dict(tmp_path, capsys):
    code, text, _ = run(capsys, "solve-cpt", "--shape", "cube", "--h", "0.25",
                        "--omega", "133.5,183.5", "--out", str(tmp_path))
    assert code == 0
    sv = json.loads(text)["singular_values"]
    assert len(sv) == 2 and max(sv[0]) - min(sv[0]) < 0.02 * max(sv[0])
    payload = eio.read_json(tmp_path / "cpt.json")
    assert len(payload) == 2 and payload[1]["omega"] == 183.5
    assert (tmp_path / "cpt_singular_values.csv").read_text().startswith("omega,nu,s1,s2,s3")
    code, text, _ = run(capsys, "build-dict", "--provenance", "paper_table",
                        "--out", str(tmp_path), "--name", "table.json")
    assert code == 0 and json.loads(text)["entries"] == 6
    for ext in ("json", "csv", "png"):
        assert (tmp_path / f"table.{ext}").exists()


def test_classify_writes_outputs(tmp_path, small_cfg, capsys):
    code, text, _ = run(capsys, "classify", "--config", small_cfg, "--out", str(tmp_path),
                        "--jobs", "1")
    assert code == 0
    assert json.loads(text)["best"] == ["ellipsoid"]
    lines = (tmp_path / "classification.csv").read_text().splitlines()
    assert lines[0] == "noise_level,label,mean_distance,accuracy" and len(lines) == 7
    assert (tmp_path / "classification.png").exists()


def test_resolve_writes_table(tmp_path, capsys):
    cfg = ExperimentConfig()
    cfg.noise_levels = [0.02]
    cfg.trials = 2
    cfg.geometry.n_side = 10
    cfg.resolution.target_h = 0.25
    cfg.resolution.grid_step = 0.05
    path = tmp_path / "res.cfg"
    path.write_text(cfg.to_text())
    code, text, _ = run(capsys, "resolve", "--config", str(path), "--out", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "resolution_L1.csv").read_text().splitlines()
    assert rows[0] == "noise level,2%" and rows[1].startswith("d_min,")
    assert 0 < float(rows[1].split(",")[1]) < 2
    assert (tmp_path / "resolution.png").exists()


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0 and "FAIL" not in out and out.count("PASS") >= 8


# ---------------------------------------------------------------- exit codes

def test_exit_code_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\ntrials = -1\n")
    code, out, err = run(capsys, "simulate", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2 and out == ""
    e = json.loads(err)
    assert e["exit_code"] == 2 and e["error"] == "ConfigError" and e["message"]


def test_exit_code_io(tmp_path, capsys):
    code, _, err = run(capsys, "locate", str(tmp_path / "none.emsr"), "--out", str(tmp_path))
    assert code == 4 and json.loads(err)["exit_code"] == 4
    junk = tmp_path / "junk.emsr"
    junk.write_bytes(b"not a matrix at all, really not")
    code, _, err = run(capsys, "locate", str(junk), "--out", str(tmp_path))
    assert code == 4 and json.loads(err)["error"] == "FormatError"


def test_exit_code_numerical(tmp_path, capsys):
    code, _, err = run(capsys, "solve-cpt", "--shape", "cube", "--h", "0.5",
                       "--omega", "1000", "--out", str(tmp_path))
    assert code == 3 and json.loads(err)["error"] == "DomainError"


def test_bad_location_is_config_error(tmp_path, small_cfg, capsys):
    run(capsys, "simulate", "--config", small_cfg, "--out", str(tmp_path))
    files = sorted(str(p) for p in tmp_path.glob("*.emsr"))
    code, _, _ = run(capsys, "recover", *files, "--config", small_cfg,
                     "--out", str(tmp_path), "--location", "1,2")
    assert code == 2
