"""Command-line interface: ``viscowri {scenario,forward,invert,scan,seismogram}``.

Values come from, in increasing priority: built-in defaults, the JSON file
given with ``--config`` (keys are the long flag names with ``_`` for ``-``),
and flags on the command line.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as vio
from .admm import BatchPlan, InversionOptions, Penalties, run_inversion
from .grid import GridError, slowness_sq_to_velocity
from .helmholtz import ResolutionError, SolverError
from .scenario import (SCENARIOS, add_noise, build_inclusion_scenario, generate_data, misfit_scan,
                       ricker_spectrum, synthesize_seismogram)

log = logging.getLogger("viscowri")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

DEFAULTS = {
    "common": {"outdir": ".", "threads": 1, "seed": 0, "grid": None, "verbose": False},
    "scenario": {"name": "inclusion"},
    "forward": {"model_dir": None, "m": None, "alpha": None, "acquisition": None,
                "frequencies": None, "snr": None, "output": "data.vdata"},
    "invert": {"data": None, "m0": None, "alpha0": None, "reg": "btv", "mode": "peaceman_rachford",
               "batches": None, "max_iter": 30, "eps_b": 1e-3, "eps_d": 1e-5,
               "vmin": 1200.0, "vmax": 2000.0, "amin": 0.0, "amax": 0.15,
               "lam": 1.0, "lam_growth": 1.0, "gamma": None, "mu_weight": 0.6, "nu_weight": 0.4,
               "threshold_factor": 0.02, "eig_fraction": 1e-2, "pr_relaxation": 0.5,
               "data_dual_step": 1.0, "reset_tv_duals": False},
    "scan": {"data": None, "model_dir": None, "frequency": 2.5, "na": 21, "nb": 21,
             "lam": 1.0, "gamma": None, "eig_fraction": 1e-2, "output": "scan.csv"},
    "seismogram": {"model_dir": None, "m": None, "alpha": None, "acquisition": None,
                   "frequencies": None, "source": 0, "fdom": 10.0, "amplitude": 1.0, "vred": 2500.0, "tmax": 4.0,
                   "df": None, "fmax": None, "output": "traces.csv"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--outdir", default=S, help="output directory (default: .)")
    p.add_argument("--config", default=S, help="JSON file with option values")
    p.add_argument("--threads", type=int, default=S, help="worker threads for per-frequency work")
    p.add_argument("--seed", type=int, default=S, help="random seed (noise)")
    p.add_argument("--grid", default=S,
                   help="grid override as key=value pairs, e.g. 'dx=20,npml=20' (scenario only; "
                        "other commands check it against the model files)")
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="viscowri", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scenario", help="write a synthetic model set")
    p.add_argument("name", nargs="?", default=S, help=f"one of {', '.join(SCENARIOS)}")
    _common(p)

    p = sub.add_parser("forward", help="model observed data")
    _common(p)
    p.add_argument("--model-dir", default=S, help="directory written by `scenario` (default: outdir)")
    p.add_argument("--m", default=S, help="squared-slowness VAFLD file (default: m_true)")
    p.add_argument("--alpha", default=S, help="attenuation VAFLD file (default: alpha_true)")
    p.add_argument("--acquisition", default=S)
    p.add_argument("--frequencies", default=S, help="frequencies JSON or comma list in Hz")
    p.add_argument("--snr", type=float, default=S, help="add Gaussian noise at this SNR (dB)")
    p.add_argument("--output", default=S)

    p = sub.add_parser("invert", help="run the inversion")
    _common(p)
    p.add_argument("--data", default=S, help="VDATA file (default: outdir/data.vdata)")
    p.add_argument("--m0", default=S, help="initial squared slowness (default: m_init next to data)")
    p.add_argument("--alpha0", default=S)
    p.add_argument("--reg", choices=("none", "tv", "btv"), default=S)
    p.add_argument("--mode", choices=("peaceman_rachford", "admm"), default=S)
    p.add_argument("--batches", default=S, help="batches as '2.5,5,7' or '3,4,5;5,6,7'")
    p.add_argument("--max-iter", type=int, default=S)
    p.add_argument("--eps-b", type=float, default=S)
    p.add_argument("--eps-d", type=float, default=S)
    for name in ("vmin", "vmax", "amin", "amax"):
        p.add_argument(f"--{name}", type=float, default=S)
    for name in ("lam", "lam-growth", "gamma", "mu-weight", "nu-weight", "threshold-factor",
                 "eig-fraction", "pr-relaxation", "data-dual-step"):
        p.add_argument(f"--{name}", type=float, default=S)
    p.add_argument("--reset-tv-duals", action="store_true", default=S)

    p = sub.add_parser("scan", help="FWI and WRI misfit along the model family")
    _common(p)
    p.add_argument("--data", default=S)
    p.add_argument("--model-dir", default=S)
    p.add_argument("--frequency", type=float, default=S)
    p.add_argument("--na", type=int, default=S)
    p.add_argument("--nb", type=int, default=S)
    p.add_argument("--lam", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--eig-fraction", type=float, default=S)
    p.add_argument("--output", default=S)

    p = sub.add_parser("seismogram", help="time-domain traces for one shot")
    _common(p)
    p.add_argument("--model-dir", default=S)
    p.add_argument("--m", default=S)
    p.add_argument("--alpha", default=S)
    p.add_argument("--acquisition", default=S)
    p.add_argument("--frequencies", default=S, help="frequencies JSON holding the modeling block")
    p.add_argument("--source", type=int, default=S)
    p.add_argument("--fdom", type=float, default=S, help="Ricker dominant frequency (Hz)")
    p.add_argument("--amplitude", type=float, default=S, help="wavelet amplitude scale")
    p.add_argument("--vred", type=float, default=S, help="reduction velocity (m/s)")
    p.add_argument("--tmax", type=float, default=S, help="trace length (s); sets df = 1/tmax")
    p.add_argument("--df", type=float, default=S)
    p.add_argument("--fmax", type=float, default=S, help="highest modeled frequency (default 3 fdom)")
    p.add_argument("--output", default=S)
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    cmd = args.command
    opts = dict(DEFAULTS["common"])
    opts.update(DEFAULTS[cmd])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update(flags)
    opts["command"] = cmd
    return opts


def _parse_grid(spec):
    if spec is None:
        return {}
    if isinstance(spec, dict):
        return spec
    out = {}
    for part in str(spec).split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise UsageError(f"bad --grid entry {part!r}; expected key=value")
        k, v = part.split("=", 1)
        k = k.strip()
        if k not in ("nx", "nz", "dx", "dz", "npml"):
            raise UsageError(f"unknown --grid key {k!r}")
        out[k] = float(v)
    return out


def _check_grid(opts, grid):
    want = _parse_grid(opts["grid"])
    have = vio.grid_to_dict(grid)
    for k, v in want.items():
        if not np.isclose(have[k], v):
            raise UsageError(f"--grid {k}={v:g} does not match the model files ({k}={have[k]:g})")


def _path(opts, key, default_name, base_key="model_dir"):
    if opts.get(key):
        return opts[key]
    base = opts.get(base_key) or opts["outdir"]
    return os.path.join(base, default_name)


def _freqs_arg(value):
    if isinstance(value, (list, tuple)):
        return [float(f) for f in value]
    return [float(f) for f in str(value).split(",") if f.strip()]


def _parse_batches(value):
    if value is None:
        return None
    if isinstance(value, list):
        return [_freqs_arg(b) for b in value]
    return [_freqs_arg(b) for b in str(value).split(";") if b.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_scenario(opts):
    name = opts["name"]
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIOS)}")
    g = _parse_grid(opts["grid"])
    sc = build_inclusion_scenario(dx=g.get("dx", 20.0), npml=int(g.get("npml", 20)))
    out = opts["outdir"]
    grid = sc.grid
    written = []
    for fname, values, q, u in (("m_true.vafld", sc.m_true, "squared_slowness", "s2/m2"),
                                ("alpha_true.vafld", sc.alpha_true, "attenuation", "1"),
                                ("m_init.vafld", sc.m_init, "squared_slowness", "s2/m2"),
                                ("alpha_init.vafld", sc.alpha_init, "attenuation", "1")):
        vio.write_field(os.path.join(out, fname), grid, values, q, u)
        written.append(fname)
    vio.write_acquisition(os.path.join(out, "acquisition.json"), sc.acquisition)
    from .physics import DEFAULT_LAW

    vio.write_frequencies(os.path.join(out, "frequencies.json"), sc.frequencies, DEFAULT_LAW, sc.disc)
    written += ["acquisition.json", "frequencies.json"]
    return written


def _load_models(opts, m_key, a_key, m_name, a_name):
    grid, m, _ = vio.read_field(_path(opts, m_key, m_name))
    grid_a, alpha, _ = vio.read_field(_path(opts, a_key, a_name))
    if grid_a != grid:
        raise UsageError("velocity and attenuation files are on different grids")
    acq = vio.read_acquisition(_path(opts, "acquisition", "acquisition.json"))
    if acq.grid != grid:
        raise UsageError("acquisition grid differs from the model grid")
    _check_grid(opts, grid)
    return grid, m, alpha, acq


def _load_frequencies(opts):
    spec = opts.get("frequencies")
    if spec and not str(spec).endswith(".json"):
        from .physics import DEFAULT_LAW
        from .scenario import INCLUSION_DISC

        return _freqs_arg(spec), DEFAULT_LAW, INCLUSION_DISC
    return vio.read_frequencies(spec or _path(opts, "frequencies_json", "frequencies.json"))


def cmd_forward(opts):
    grid, m, alpha, acq = _load_models(opts, "m", "alpha", "m_true.vafld", "alpha_true.vafld")
    freqs, law, disc = _load_frequencies(opts)
    survey = generate_data(m, alpha, acq, freqs, law=law, disc=disc, threads=opts["threads"])
    meta = {}
    if opts["snr"] is not None:
        survey = add_noise(survey, float(opts["snr"]), int(opts["seed"]))
        meta = {"snr_db": float(opts["snr"]), "seed": int(opts["seed"])}
    out = os.path.join(opts["outdir"], opts["output"])
    vio.write_data(out, survey, meta or None)
    return [opts["output"]]


def cmd_invert(opts):
    data_path = opts["data"] or os.path.join(opts["outdir"], "data.vdata")
    survey = vio.read_data(data_path)
    base = os.path.dirname(os.path.abspath(data_path))
    m0_path = opts["m0"] or os.path.join(base, "m_init.vafld")
    a0_path = opts["alpha0"] or os.path.join(base, "alpha_init.vafld")
    grid, m0, _ = vio.read_field(m0_path)
    if grid != survey.grid:
        raise UsageError("initial model grid differs from the data grid")
    alpha0 = None
    if os.path.exists(a0_path):
        _, alpha0, _ = vio.read_field(a0_path)
    elif opts["alpha0"]:
        raise UsageError(f"missing file {a0_path}")
    _check_grid(opts, grid)
    if opts["vmin"] >= opts["vmax"] or opts["amin"] > opts["amax"]:
        raise UsageError("bounds must be ordered (vmin < vmax, amin <= amax)")
    batches = _parse_batches(opts["batches"]) or [list(survey.frequencies)]
    plan = BatchPlan(batches, int(opts["max_iter"]), float(opts["eps_b"]), float(opts["eps_d"]))
    reg = opts["reg"]
    options = InversionOptions(
        mode=opts["mode"], reg=reg, velocity_bounds=(opts["vmin"], opts["vmax"]),
        alpha_bounds=(opts["amin"], opts["amax"]), lam=float(opts["lam"]),
        lam_growth=float(opts["lam_growth"]), mu_weight=float(opts["mu_weight"]),
        nu_weight=float(opts["nu_weight"]), threshold_factor=float(opts["threshold_factor"]),
        eig_fraction=float(opts["eig_fraction"]), pr_relaxation=float(opts["pr_relaxation"]),
        data_dual_step=float(opts["data_dual_step"]), reset_tv_duals=bool(opts["reset_tv_duals"]),
        threads=int(opts["threads"]))
    penalties = Penalties(lam=float(opts["lam"]), gamma=opts["gamma"])
    if reg == "none":
        penalties = Penalties(lam=penalties.lam, gamma=penalties.gamma, mu=0.0, nu=0.0,
                              xi_m=0.0, xi_alpha=0.0)
    m, alpha, history = run_inversion(survey, m0, alpha0, plan, penalties, options)
    out = opts["outdir"]
    vio.write_field(os.path.join(out, "m_final.vafld"), grid, m, "squared_slowness", "s2/m2")
    vio.write_field(os.path.join(out, "v_final.vafld"), grid, slowness_sq_to_velocity(m), "velocity", "m/s")
    vio.write_field(os.path.join(out, "alpha_final.vafld"), grid, alpha, "attenuation", "1")
    written = ["m_final.vafld", "v_final.vafld", "alpha_final.vafld"]
    for snap in history.snapshots:
        if snap["k"] == 0:
            continue
        name = f"batch{snap['batch']}"
        vio.write_field(os.path.join(out, f"{name}_m.vafld"), grid, snap["m"], "squared_slowness", "s2/m2")
        vio.write_field(os.path.join(out, f"{name}_alpha.vafld"), grid, snap["alpha"], "attenuation", "1")
        written += [f"{name}_m.vafld", f"{name}_alpha.vafld"]
    vio.write_history(os.path.join(out, "history.csv"), history)
    vio.write_json(os.path.join(out, "penalties.json"),
                   [s.get("penalties") for s in history.snapshots if "penalties" in s])
    return written + ["history.csv", "penalties.json"]


def cmd_scan(opts):
    data_path = opts["data"] or os.path.join(opts["outdir"], "data.vdata")
    survey = vio.read_data(data_path)
    base = opts["model_dir"] or os.path.dirname(os.path.abspath(data_path))
    fields = {}
    for key in ("m_true", "alpha_true", "m_init", "alpha_init"):
        g, values, _ = vio.read_field(os.path.join(base, f"{key}.vafld"))
        if g != survey.grid:
            raise UsageError(f"{key} grid differs from the data grid")
        fields[key] = values
    _check_grid(opts, survey.grid)
    sub = survey.subset([float(opts["frequency"])])
    a = np.linspace(-1.0, 1.0, int(opts["na"]))
    b = np.linspace(-1.0, 1.0, int(opts["nb"]))
    pen = Penalties(lam=float(opts["lam"]), gamma=opts["gamma"])
    result = misfit_scan(slowness_sq_to_velocity(fields["m_true"]), fields["alpha_true"],
                         slowness_sq_to_velocity(fields["m_init"]), fields["alpha_init"],
                         a, b, sub, pen, float(opts["eig_fraction"]), int(opts["threads"]))
    vio.write_scan(os.path.join(opts["outdir"], opts["output"]), result)
    return [opts["output"]]


def cmd_seismogram(opts):
    grid, m, alpha, acq = _load_models(opts, "m", "alpha", "m_true.vafld", "alpha_true.vafld")
    try:
        _, law, disc = _load_frequencies(opts)
    except FileNotFoundError:
        from .physics import DEFAULT_LAW
        from .scenario import INCLUSION_DISC

        law, disc = DEFAULT_LAW, INCLUSION_DISC
    fdom = float(opts["fdom"])
    df = float(opts["df"]) if opts["df"] else 1.0 / float(opts["tmax"])
    fmax = float(opts["fmax"]) if opts["fmax"] else 3.0 * fdom
    nf = int(np.floor(fmax / df + 1e-9))
    if nf < 2:
        raise UsageError("need fmax >= 2 df")
    src = int(opts["source"])
    if not 0 <= src < acq.n_sources:
        raise UsageError(f"source index {src} out of range (0..{acq.n_sources - 1})")
    freqs = df * np.arange(1, nf + 1)
    if fdom <= 0:
        raise UsageError("--fdom must be positive")
    wavelet = float(opts["amplitude"]) * ricker_spectrum(fdom, 2 * np.pi * freqs)
    traces, meta = synthesize_seismogram(m, alpha, acq, src, freqs, wavelet, float(opts["vred"]),
                                         f_dominant=fdom, law=law, disc=disc, threads=int(opts["threads"]))
    meta["f_dominant"] = fdom
    meta["amplitude"] = float(opts["amplitude"])
    vio.write_traces(os.path.join(opts["outdir"], opts["output"]), traces, meta)
    return [opts["output"], opts["output"] + ".json"]


COMMANDS = {"scenario": cmd_scenario, "forward": cmd_forward, "invert": cmd_invert,
            "scan": cmd_scan, "seismogram": cmd_seismogram}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        written = COMMANDS[opts["command"]](opts)
    except (UsageError, GridError, vio.FormatError, FileNotFoundError, KeyError) as exc:
        print(f"viscowri {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ResolutionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"viscowri {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"viscowri {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for name in written:
        print(os.path.join(opts["outdir"], name))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
