"""File formats: VAFLD/1 model fields, VDATA/1 observed data, JSON sidecars and CSVs.

Every writer goes through a temporary file in the target directory followed
by ``os.replace``, so readers never observe partial files. CSV floats are
written with ``repr`` so that reading them back is exact.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .grid import Acquisition, Grid2D
from .helmholtz import Discretization
from .physics import AttenuationLaw
from .survey import SurveyData

FIELD_FORMAT = "VAFLD/1"
DATA_FORMAT = "VDATA/1"


class FormatError(ValueError):
    pass


def atomic_write(path, payload: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_bytes(header: dict) -> bytes:
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")


def _split_header(raw: bytes, expected_format: str):
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if header.get("format") != expected_format:
        raise FormatError(f"expected format {expected_format}, found {header.get('format')!r}")
    return header, raw[nl + 1:]


def grid_to_dict(grid: Grid2D) -> dict:
    return {"nx": grid.nx, "nz": grid.nz, "dx": grid.dx, "dz": grid.dz, "npml": grid.npml,
            "x0": grid.origin[0], "z0": grid.origin[1]}


def grid_from_dict(d: dict) -> Grid2D:
    return Grid2D(int(d["nx"]), int(d["nz"]), float(d["dx"]), float(d["dz"]), int(d.get("npml", 0)),
                  (float(d.get("x0", 0.0)), float(d.get("z0", 0.0))))


# ---------------------------------------------------------------------------
# VAFLD/1


def field_bytes(grid: Grid2D, values, quantity: str = "", units: str = "") -> bytes:
    values = np.ascontiguousarray(grid.check_field(np.asarray(values, dtype=float)), dtype="<f8")
    header = {"format": FIELD_FORMAT, **grid_to_dict(grid), "quantity": quantity, "units": units}
    return _header_bytes(header) + values.tobytes()


def write_field(path, grid: Grid2D, values, quantity: str = "", units: str = ""):
    atomic_write(path, field_bytes(grid, values, quantity, units))


def read_field(path):
    """Returns ``(grid, values, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, body = _split_header(raw, FIELD_FORMAT)
    grid = grid_from_dict(header)
    if len(body) != 8 * grid.n:
        raise FormatError(f"{path}: expected {8 * grid.n} data bytes, found {len(body)}")
    return grid, np.frombuffer(body, dtype="<f8").astype(float), header


# ---------------------------------------------------------------------------
# acquisition and frequency sidecars


def acquisition_to_dict(acq: Acquisition) -> dict:
    return {"grid": grid_to_dict(acq.grid), **acq.to_dict()}


def acquisition_from_dict(d: dict) -> Acquisition:
    return Acquisition(grid_from_dict(d["grid"]), [tuple(p) for p in d["sources"]],
                       [tuple(p) for p in d["receivers"]])


def write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_acquisition(path, acq: Acquisition):
    write_json(path, acquisition_to_dict(acq))


def read_acquisition(path) -> Acquisition:
    return acquisition_from_dict(read_json(path))


def modeling_to_dict(law: AttenuationLaw, disc: Discretization) -> dict:
    return {"f_ref": law.f_ref, **disc.to_dict()}


def modeling_from_dict(d: dict | None) -> tuple[AttenuationLaw, Discretization]:
    d = d or {}
    law = AttenuationLaw(float(d.get("f_ref", 50.0)))
    disc = Discretization(d.get("stencil", "optimized9"), d.get("v_ref"), d.get("pml_velocity"),
                          float(d.get("pml_reflection", 1e-3)))
    return law, disc


def write_frequencies(path, frequencies, law: AttenuationLaw, disc: Discretization):
    write_json(path, {"frequencies": [float(f) for f in frequencies],
                      "modeling": modeling_to_dict(law, disc)})


def read_frequencies(path):
    d = read_json(path)
    law, disc = modeling_from_dict(d.get("modeling"))
    return [float(f) for f in d["frequencies"]], law, disc


# ---------------------------------------------------------------------------
# VDATA/1


def data_bytes(survey: SurveyData, extra: dict | None = None) -> bytes:
    acq = survey.acquisition
    block = np.ascontiguousarray(survey.data, dtype="<c16")
    header = {
        "format": DATA_FORMAT,
        "grid": grid_to_dict(acq.grid),
        "sources": [list(p) for p in acq.sources],
        "receivers": [list(p) for p in acq.receivers],
        "frequencies": [float(f) for f in survey.frequencies],
        "wavelet": [[float(w.real), float(w.imag)] for w in survey.wavelet],
        "modeling": modeling_to_dict(survey.law, survey.disc),
        "shape": list(block.shape),
        "order": "source,frequency,receiver",
    }
    if extra:
        header["meta"] = extra
    return _header_bytes(header) + block.tobytes()


def write_data(path, survey: SurveyData, extra: dict | None = None):
    atomic_write(path, data_bytes(survey, extra))


def read_data(path) -> SurveyData:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, body = _split_header(raw, DATA_FORMAT)
    grid = grid_from_dict(header["grid"])
    acq = Acquisition(grid, [tuple(p) for p in header["sources"]],
                      [tuple(p) for p in header["receivers"]])
    S, F, M = acq.n_sources, len(header["frequencies"]), acq.n_receivers
    if len(body) != 16 * S * F * M:
        raise FormatError(f"{path}: expected {16 * S * F * M} data bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<c16").reshape(S, F, M).astype(complex)
    wavelet = np.array([complex(a, b) for a, b in header["wavelet"]]) if "wavelet" in header else None
    law, disc = modeling_from_dict(header.get("modeling"))
    return SurveyData(acq, header["frequencies"], data, wavelet, law, disc)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(path, columns, rows):
    atomic_write(path, csv_bytes(columns, rows))


def read_csv(path):
    """Returns ``(columns, rows)`` with numeric cells converted to float."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        columns = next(r)
        rows = [[_parse(c) for c in row] for row in r]
    return columns, rows


def _parse(cell):
    try:
        return float(cell)
    except ValueError:
        return cell


def write_history(path, history):
    from .admm import HISTORY_COLUMNS

    write_csv(path, HISTORY_COLUMNS, [[r[c] for c in HISTORY_COLUMNS] for r in history.rows])


def write_scan(path, scan):
    rows = [[a, b, scan.fwi_misfit[i, j], scan.wri_objective[i, j]]
            for i, a in enumerate(scan.a_values) for j, b in enumerate(scan.b_values)]
    write_csv(path, ["a", "b", "fwi", "wri"], rows)


def read_scan(path):
    from .scenario import ScanResult

    _, rows = read_csv(path)
    arr = np.array(rows, dtype=float)
    a = np.unique(arr[:, 0])
    b = np.unique(arr[:, 1])
    fwi = arr[:, 2].reshape(len(a), len(b))
    wri = arr[:, 3].reshape(len(a), len(b))
    return ScanResult(arr[:: len(b), 0].copy(), arr[: len(b), 1].copy(), fwi, wri)


def write_traces(path, traces, meta: dict):
    """Trace matrix as CSV (one column per receiver, first column time) plus ``<path>.json``."""
    traces = np.asarray(traces, dtype=float)
    nt = traces.shape[1]
    t = meta["t0"] + meta["dt"] * np.arange(nt)
    columns = ["t"] + [f"r{k}" for k in range(traces.shape[0])]
    rows = [[t[n], *traces[:, n]] for n in range(nt)]
    write_csv(path, columns, rows)
    write_json(os.fspath(path) + ".json", meta)


def read_traces(path):
    _, rows = read_csv(path)
    arr = np.array(rows, dtype=float)
    return arr[:, 1:].T.copy(), read_json(os.fspath(path) + ".json")
