import json
import os

import numpy as np
import pytest

from viscowri import io as vio
from viscowri.admm import History
from viscowri.grid import Acquisition, make_grid
from viscowri.helmholtz import Discretization
from viscowri.physics import AttenuationLaw
from viscowri.scenario import ScanResult
from viscowri.survey import SurveyData


@pytest.fixture
def acq():
    g = make_grid(7, 5, 12.5, 10.0, 3, origin=(100.0, -20.0))
    return Acquisition(g, [(100.0, -20.0), (150.0, 0.0)], [(175.0, 20.0), (125.0, 10.0), (112.5, -10.0)])


def test_field_roundtrip(tmp_path, acq, rng):
    g = acq.grid
    vals = rng.standard_normal(g.n) * 1e-7
    p = tmp_path / "m.vafld"
    vio.write_field(p, g, vals, "squared_slowness", "s2/m2")
    g2, back, header = vio.read_field(p)
    assert g2 == g and back.tobytes() == vals.tobytes()
    assert header["format"] == "VAFLD/1" and header["quantity"] == "squared_slowness"
    raw = p.read_bytes()
    first, body = raw.split(b"\n", 1)
    assert set(json.loads(first)) == {"format", "nx", "nz", "dx", "dz", "npml", "x0", "z0", "quantity", "units"}
    assert len(body) == 8 * g.n
    # z fastest, little endian
    assert np.frombuffer(body[:8], "<f8")[0] == vals[g.index(0, 0)]
    assert np.frombuffer(body[8:16], "<f8")[0] == vals[g.index(0, 1)]


def test_field_rejects_bad_files(tmp_path, acq):
    g = acq.grid
    p = tmp_path / "m.vafld"
    vio.write_field(p, g, np.zeros(g.n))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(vio.FormatError, match="bytes"):
        vio.read_field(p)
    p.write_bytes(b'{"format": "VDATA/1"}\n')
    with pytest.raises(vio.FormatError):
        vio.read_field(p)
    p.write_bytes(b"no header at all")
    with pytest.raises(vio.FormatError):
        vio.read_field(p)
    with pytest.raises(Exception):
        vio.write_field(tmp_path / "x.vafld", g, np.zeros(g.n + 1))


def test_data_roundtrip(tmp_path, acq, rng):
    S, F, M = acq.n_sources, 3, acq.n_receivers
    data = rng.standard_normal((S, F, M)) + 1j * rng.standard_normal((S, F, M))
    wav = np.array([1.0, 0.5 - 0.25j, 2.0])
    survey = SurveyData(acq, [2.5, 5.0, 7.0], data, wav, AttenuationLaw(40.0),
                        Discretization("standard5", 1500.0, None, 1e-4))
    p = tmp_path / "d.vdata"
    vio.write_data(p, survey, {"snr_db": 10.0})
    back = vio.read_data(p)
    assert back.data.tobytes() == survey.data.tobytes()
    assert back.wavelet.tobytes() == survey.wavelet.tobytes()
    assert back.frequencies.tolist() == [2.5, 5.0, 7.0]
    assert back.acquisition.sources == acq.sources and back.acquisition.receivers == acq.receivers
    assert back.grid == acq.grid and back.law == survey.law and back.disc == survey.disc
    header, body = p.read_bytes().split(b"\n", 1)
    assert len(body) == 16 * S * F * M
    assert json.loads(header)["order"] == "source,frequency,receiver"
    assert json.loads(header)["meta"] == {"snr_db": 10.0}
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(vio.FormatError):
        vio.read_data(p)


def test_sidecars_roundtrip(tmp_path, acq):
    vio.write_acquisition(tmp_path / "a.json", acq)
    back = vio.read_acquisition(tmp_path / "a.json")
    assert back.grid == acq.grid and back.sources == acq.sources and back.receivers == acq.receivers
    np.testing.assert_array_equal(back.receiver_nodes, acq.receiver_nodes)
    disc = Discretization("optimized9", 1500.0, 1600.0)
    vio.write_frequencies(tmp_path / "f.json", [2.5, 5.0], AttenuationLaw(50.0), disc)
    freqs, law, disc2 = vio.read_frequencies(tmp_path / "f.json")
    assert freqs == [2.5, 5.0] and law == AttenuationLaw(50.0) and disc2 == disc


def test_csv_roundtrip(tmp_path, rng):
    hist = History(rows=[{"k": i + 1, "batch": 0, "sum_src_residual_sq": float(x), "sum_data_residual_sq": 1 / 3,
                          "tv_m": 0.1 + 0.2, "tv_alpha": 1e-300} for i, x in enumerate(rng.random(4))])
    vio.write_history(tmp_path / "h.csv", hist)
    cols, rows = vio.read_csv(tmp_path / "h.csv")
    assert cols[0] == "k" and len(rows) == 4
    assert [r[2] for r in rows] == [r["sum_src_residual_sq"] for r in hist.rows]
    assert rows[0][4] == 0.1 + 0.2 and rows[0][5] == 1e-300

    a = np.linspace(-1, 1, 3)
    b = np.linspace(-1, 1, 4)
    scan = ScanResult(a, b, rng.random((3, 4)), rng.random((3, 4)))
    vio.write_scan(tmp_path / "s.csv", scan)
    back = vio.read_scan(tmp_path / "s.csv")
    for name in ("a_values", "b_values", "fwi_misfit", "wri_objective"):
        assert getattr(back, name).tobytes() == getattr(scan, name).tobytes()


def test_traces_roundtrip(tmp_path, rng):
    tr = rng.standard_normal((3, 16))
    meta = {"dt": 0.01, "t0": -0.15, "nt": 16, "offsets": [1.0, 2.0, 3.0]}
    vio.write_traces(tmp_path / "t.csv", tr, meta)
    back, meta2 = vio.read_traces(tmp_path / "t.csv")
    assert back.tobytes() == tr.tobytes() and meta2 == meta
    cols, _ = vio.read_csv(tmp_path / "t.csv")
    assert cols == ["t", "r0", "r1", "r2"]


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "x.bin"
    vio.atomic_write(p, b"abc")
    vio.atomic_write(p, b"defg")
    assert p.read_bytes() == b"defg"
    assert os.listdir(tmp_path / "sub") == ["x.bin"]
