import json
import os
import subprocess
import sys

import numpy as np
import pytest

from viscowri import io as vio
from viscowri.cli import DEFAULTS, build_parser, main, resolve_options

pytestmark = pytest.mark.filterwarnings("ignore:grid fits")

COARSE = "dx=40,npml=10"


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("scenario", "inclusion", "--outdir", d, "--grid", COARSE) == 0
    assert run("forward", "--outdir", d) == 0
    return d


def test_scenario_files(workdir):
    names = sorted(os.listdir(workdir))
    for f in ("m_true.vafld", "alpha_true.vafld", "m_init.vafld", "alpha_init.vafld",
              "acquisition.json", "frequencies.json"):
        assert f in names
    g, _, _ = vio.read_field(workdir / "m_true.vafld")
    assert g.dx == 40.0 and g.npml == 10


def test_scenario_matches_library(workdir):
    from viscowri.scenario import build_inclusion_scenario

    with pytest.warns(UserWarning):
        sc = build_inclusion_scenario(dx=40.0, npml=10)
    _, m, _ = vio.read_field(workdir / "m_true.vafld")
    assert m.tobytes() == sc.m_true.tobytes()


def test_unknown_scenario(tmp_path, capsys):
    assert run("scenario", "marmousi", "--outdir", tmp_path) == 1
    assert "inclusion" in capsys.readouterr().err


def test_forward_layout_and_noise_determinism(workdir):
    survey = vio.read_data(workdir / "data.vdata")
    S, F, M = survey.data.shape
    size = os.path.getsize(workdir / "data.vdata")
    header_len = (workdir / "data.vdata").read_bytes().index(b"\n") + 1
    assert size == header_len + 16 * S * F * M
    outs = []
    for name in ("n1.vdata", "n2.vdata"):
        assert run("forward", "--outdir", workdir, "--snr", 10, "--seed", 7, "--output", name) == 0
        outs.append((workdir / name).read_bytes())
    assert outs[0] == outs[1]
    noisy = vio.read_data(workdir / "n1.vdata")
    from viscowri.scenario import snr_db

    assert snr_db(survey.data, noisy.data) == pytest.approx(10.0, abs=0.1)


def test_invert_outputs(workdir, tmp_path):
    assert run("invert", "--data", workdir / "data.vdata", "--outdir", tmp_path, "--max-iter", 3,
               "--eig-fraction", 1e-3) == 0
    for f in ("m_final.vafld", "v_final.vafld", "alpha_final.vafld", "batch0_m.vafld", "history.csv"):
        assert (tmp_path / f).exists()
    cols, rows = vio.read_csv(tmp_path / "history.csv")
    assert cols == ["k", "batch", "sum_src_residual_sq", "sum_data_residual_sq", "tv_m", "tv_alpha"]
    assert 1 <= len(rows) <= 3
    assert [r[0] for r in rows] == list(range(1, len(rows) + 1))
    _, m, _ = vio.read_field(tmp_path / "m_final.vafld")
    _, v, _ = vio.read_field(tmp_path / "v_final.vafld")
    np.testing.assert_allclose(v, 1 / np.sqrt(m), rtol=1e-15)


def test_invert_unregularized_and_batches(workdir, tmp_path):
    assert run("invert", "--data", workdir / "data.vdata", "--outdir", tmp_path, "--reg", "none",
               "--batches", "2.5;2.5,5", "--max-iter", 2, "--eig-fraction", 1e-3) == 0
    pen = json.loads((tmp_path / "penalties.json").read_text())
    assert len(pen) == 2 and pen[0]["mu"] == 0.0 and pen[0]["nu"] == 0.0
    _, rows = vio.read_csv(tmp_path / "history.csv")
    assert sorted({r[1] for r in rows}) == [0.0, 1.0]


def test_invert_deterministic(workdir, tmp_path):
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        assert run("invert", "--data", workdir / "data.vdata", "--outdir", d, "--max-iter", 2) == 0
        outs.append((d / "m_final.vafld").read_bytes() + (d / "history.csv").read_bytes())
    assert outs[0] == outs[1]


def test_scan_default_size(workdir, tmp_path):
    assert run("scan", "--data", workdir / "data.vdata", "--outdir", tmp_path, "--threads", 2) == 0
    cols, rows = vio.read_csv(tmp_path / "scan.csv")
    assert cols == ["a", "b", "fwi", "wri"] and len(rows) == 441
    scan = vio.read_scan(tmp_path / "scan.csv")
    i0 = 10
    assert scan.a_values[i0] == 0.0
    assert scan.fwi_misfit[i0, i0] <= 1e-20 and scan.wri_objective[i0, i0] <= 1e-12 * scan.wri_objective.max()
    np.testing.assert_allclose(scan.fwi_misfit, scan.fwi_misfit[::-1, :], rtol=1e-12, atol=0)
    np.testing.assert_allclose(scan.wri_objective, scan.wri_objective[::-1, :], rtol=1e-12, atol=0)


def test_seismogram(workdir, tmp_path):
    args = ("seismogram", "--model-dir", workdir, "--outdir", tmp_path, "--fdom", 4, "--fmax", 8,
            "--tmax", 4)
    assert run(*args) == 0
    tr, meta = vio.read_traces(tmp_path / "traces.csv")
    assert tr.shape[1] == meta["nt"] and meta["reduction_velocity"] == 2500.0
    assert np.any(tr != 0)
    assert run(*args, "--amplitude", 0, "--output", "zero.csv") == 0
    zero, _ = vio.read_traces(tmp_path / "zero.csv")
    assert np.all(zero == 0)
    # too short a record for the offsets: aliasing guard is a usage error
    assert run("seismogram", "--model-dir", workdir, "--outdir", tmp_path, "--tmax", 0.5, "--fmax", 4) == 1


def test_seismogram_defaults():
    assert DEFAULTS["seismogram"]["fdom"] == 10.0
    assert DEFAULTS["seismogram"]["vred"] == 2500.0


def test_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iter": 7, "eig-fraction": 0.5, "reg": "tv"}))
    args = build_parser().parse_args(["invert", "--config", str(cfg), "--max-iter", "9"])
    opts = resolve_options(args)
    assert opts["max_iter"] == 9  # flag beats config
    assert opts["eig_fraction"] == 0.5 and opts["reg"] == "tv"  # config beats default
    assert opts["mode"] == "peaceman_rachford"  # default


def test_usage_errors(tmp_path, workdir):
    assert run("invert", "--bogus") == 1
    assert run("frobnicate") == 1
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"unknown_key": 1}')
    assert run("invert", "--config", cfg) == 1
    cfg.write_text("not json")
    assert run("invert", "--config", cfg) == 1
    assert run("invert", "--outdir", tmp_path) == 1  # no data file
    assert run("invert", "--data", workdir / "data.vdata", "--outdir", tmp_path, "--vmin", 3000) == 1
    assert run("forward", "--outdir", workdir, "--grid", "dx=20", "--output", "x.vdata") == 1
    assert run("scenario", "--outdir", tmp_path, "--grid", "dx") == 1


def test_numerical_failure_exit_code(workdir, tmp_path):
    # 40 Hz on a 40 m grid is far below two points per wavelength
    assert run("forward", "--outdir", workdir, "--frequencies", "40", "--output", "hf.vdata") == 2
    assert not (workdir / "hf.vdata").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "viscowri.cli", "scenario", "nope", "--outdir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "inclusion" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "viscowri.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "seismogram" in proc.stdout
