"""Synthetic experiments: the inclusion model, data generation, noise,
seismogram synthesis and misfit landscapes."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import helmholtz
from .admm import Penalties, normal_operator_max_eig
from .grid import (Acquisition, Circle, Grid2D, Rectangle, field_from_regions, make_grid,
                   velocity_to_slowness_sq)
from .helmholtz import Discretization, assemble, point_sources, sampling_operator
from .physics import DEFAULT_LAW, AttenuationLaw
from .survey import SurveyData

__all__ = [
    "SurveyData", "ScanResult", "Scenario", "inclusion_grid", "build_inclusion_scenario",
    "generate_data", "add_noise", "ricker_spectrum", "synthesize_seismogram", "misfit_scan",
    "edge_positions", "SCENARIOS",
]

INCLUSION_FREQUENCIES = (2.5, 5.0, 7.0)
INCLUSION_DISC = Discretization(stencil="optimized9", v_ref=1500.0, pml_velocity=1500.0)
SCENARIOS = ("inclusion",)


@dataclass
class Scenario:
    m_true: np.ndarray
    alpha_true: np.ndarray
    m_init: np.ndarray
    alpha_init: np.ndarray
    acquisition: Acquisition
    frequencies: tuple
    disc: Discretization = INCLUSION_DISC

    def __iter__(self):
        # unpacks as (m_true, alpha_true, m_init, alpha_init, acquisition, frequencies)
        return iter((self.m_true, self.alpha_true, self.m_init, self.alpha_init,
                     self.acquisition, self.frequencies))

    @property
    def grid(self) -> Grid2D:
        return self.acquisition.grid


def inclusion_grid(dx: float = 20.0, npml: int = 20) -> Grid2D:
    n = int(round(2000.0 / dx)) + 1
    return make_grid(n, n, dx, dx, npml)


def edge_positions(grid: Grid2D, count: int, offset: float) -> list[tuple[float, float]]:
    """``count`` evenly spaced points on each of the four lines ``offset`` in from the edges.

    Points on a line sit at the centres of ``count`` equal segments of the
    span between the two perpendicular lines, so no two edges share a corner.
    """
    xmin, xmax, zmin, zmax = grid.extent
    lo_x, hi_x = xmin + offset, xmax - offset
    lo_z, hi_z = zmin + offset, zmax - offset
    tx = lo_x + (hi_x - lo_x) * (np.arange(count) + 0.5) / count
    tz = lo_z + (hi_z - lo_z) * (np.arange(count) + 0.5) / count
    pts = [(x, lo_z) for x in tx] + [(x, hi_z) for x in tx]
    pts += [(lo_x, z) for z in tz] + [(hi_x, z) for z in tz]
    return [(float(x), float(z)) for x, z in pts]


def _source_positions(grid: Grid2D, per_edge: int, offset: float):
    xmin, xmax, zmin, zmax = grid.extent
    frac = np.arange(1, per_edge + 1) / (per_edge + 1)
    xs = xmin + (xmax - xmin) * frac
    zs = zmin + (zmax - zmin) * frac
    pts = [(x, zmin + offset) for x in xs] + [(x, zmax - offset) for x in xs]
    pts += [(xmin + offset, z) for z in zs] + [(xmax - offset, z) for z in zs]
    return [(float(x), float(z)) for x, z in pts]


def build_inclusion_scenario(dx: float = 20.0, npml: int = 20, n_receivers_per_edge: int = 50,
                             n_sources_per_edge: int = 2) -> Scenario:
    """Two velocity and two attenuation inclusions in a 2 km square."""
    grid = inclusion_grid(dx, npml)
    rect = Rectangle((1000.0, 1000.0), 200.0, 800.0)
    v = field_from_regions(grid, 1500.0, [(Circle((1000.0, 1600.0), 250.0), 1800.0), (rect, 1300.0)])
    alpha = field_from_regions(grid, 0.01, [(Circle((1000.0, 400.0), 250.0), 0.1), (rect, 0.1)])
    offset = grid.dx
    # keep receiver spacing above one cell so no two snap to the same node
    fit = int(np.floor((grid.extent[1] - grid.extent[0] - 2 * offset) / grid.dx)) - 1
    if n_receivers_per_edge > fit:
        warnings.warn(f"grid fits {fit} receivers per edge; using {fit} instead of {n_receivers_per_edge}",
                      stacklevel=2)
        n_receivers_per_edge = fit
    acq = Acquisition(grid, _source_positions(grid, n_sources_per_edge, offset),
                      edge_positions(grid, n_receivers_per_edge, offset))
    return Scenario(velocity_to_slowness_sq(v), alpha, velocity_to_slowness_sq(np.full(grid.n, 1500.0)),
                    np.zeros(grid.n), acq, INCLUSION_FREQUENCIES)


# ---------------------------------------------------------------------------
# forward modelling


def _map(fn, items, threads):
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def forward_fields(grid, m, alpha, omega, source_nodes, amplitude=1.0, law=DEFAULT_LAW,
                   disc=None) -> np.ndarray:
    """Padded wavefields A^{-1} b for each source node, shape (n_pad, S)."""
    op = assemble(grid, m, alpha, omega, law, disc)
    F = helmholtz.factorize(op.assembled)
    return F.solve(point_sources(grid, source_nodes, amplitude))


def generate_data(m_true, alpha_true, acquisition: Acquisition, frequencies, wavelet=None,
                  law: AttenuationLaw = DEFAULT_LAW, disc: Discretization | None = None,
                  threads: int = 1) -> SurveyData:
    """Observed data P A(m, alpha)^{-1} b_s for every source and frequency."""
    disc = disc or INCLUSION_DISC
    grid = acquisition.grid
    freqs = np.asarray(frequencies, dtype=float)
    wavelet = np.ones(len(freqs), complex) if wavelet is None else np.asarray(wavelet, complex)
    P = sampling_operator(grid, acquisition.receiver_nodes)

    def one(f):
        U = forward_fields(grid, m_true, alpha_true, 2 * np.pi * freqs[f], acquisition.source_nodes,
                           wavelet[f], law, disc)
        return P.sample(U).T

    cols = _map(one, range(len(freqs)), threads)
    data = np.stack(cols, axis=1)
    return SurveyData(acquisition, freqs, data, wavelet, law, disc)


def add_noise(survey: SurveyData, snr_db: float, seed: int = 0) -> SurveyData:
    """Complex Gaussian noise with rms(signal) / rms(noise) = 10^(snr_db / 20) exactly."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    d = survey.data
    noise = rng.standard_normal(d.shape) + 1j * rng.standard_normal(d.shape)
    rms = lambda x: np.sqrt(np.mean(np.abs(x) ** 2))
    noise *= rms(d) / rms(noise) * 10.0 ** (-snr_db / 20.0)
    return SurveyData(survey.acquisition, survey.frequencies, d + noise, survey.wavelet,
                      survey.law, survey.disc)


def snr_db(clean, noisy) -> float:
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return float(20 * np.log10(np.sqrt(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))))


def ricker_spectrum(f_dominant: float, omega):
    """Zero-phase Ricker amplitude spectrum, normalized to one at the peak."""
    if not f_dominant > 0:
        raise ValueError("dominant frequency must be positive")
    r = (np.abs(np.asarray(omega, dtype=float)) / (2 * np.pi * f_dominant)) ** 2
    return r * np.exp(1.0 - r)


def synthesize_seismogram(m, alpha, acquisition: Acquisition, source_index: int, freq_grid,
                          wavelet=None, reduction_velocity: float = 2500.0, delay: float | None = None,
                          f_dominant: float = 10.0, law=DEFAULT_LAW, disc=None, threads: int = 1):
    """Time-domain traces at every receiver for one shot.

    ``freq_grid`` must be ``df, 2 df, ..., K df``. ``wavelet`` defaults to a
    Ricker spectrum; the wavelet is delayed by ``delay`` (default 1.5 / f_dominant)
    so it is causal. Returns ``(traces, meta)`` with ``traces[r, n]`` at reduced
    time ``meta["t0"] + n * meta["dt"]``.
    """
    grid = acquisition.grid
    freqs = np.asarray(freq_grid, dtype=float)
    if freqs.ndim != 1 or len(freqs) < 2:
        raise ValueError("freq_grid needs at least two frequencies")
    df = freqs[0]
    if not df > 0 or not np.allclose(freqs, df * np.arange(1, len(freqs) + 1), rtol=1e-9, atol=0):
        raise ValueError("freq_grid must be uniform and start at df > 0")
    omegas = 2 * np.pi * freqs
    if wavelet is None:
        wavelet = ricker_spectrum(f_dominant, omegas)
    wavelet = np.broadcast_to(np.asarray(wavelet, dtype=complex), freqs.shape)
    delay = 1.5 / f_dominant if delay is None else float(delay)

    src = np.array(acquisition.sources[source_index])
    rec = np.array(acquisition.receivers)
    offsets = np.linalg.norm(rec - src, axis=1)
    vmin = float(np.min(1.0 / np.sqrt(m)))
    duration = 1.0 / df
    if duration < offsets.max() / vmin + delay:
        raise ValueError(f"trace length {duration:.3f} s is shorter than the arrival spread "
                         f"{offsets.max() / vmin + delay:.3f} s; decrease df")

    P = sampling_operator(grid, acquisition.receiver_nodes)
    node = acquisition.source_nodes[source_index:source_index + 1]

    def one(k):
        if wavelet[k] == 0:
            return np.zeros(P.m, complex)
        U = forward_fields(grid, m, alpha, omegas[k], node, 1.0, law, disc)
        return P.sample(U)[:, 0]

    U = np.stack(_map(one, range(len(freqs)), threads), axis=1)
    if reduction_velocity and np.isfinite(reduction_velocity):
        tau = offsets / reduction_velocity
    else:
        tau = np.zeros_like(offsets)
    # exp(-i w t) convention: a delay t0 multiplies by exp(+i w t0)
    spec = U * wavelet[None, :] * np.exp(1j * omegas[None, :] * (delay - tau[:, None]))
    full = np.zeros((P.m, len(freqs) + 1), complex)
    full[:, 1:] = np.conj(spec)
    nt = 2 * len(freqs)
    traces = np.fft.irfft(full, n=nt, axis=1) * (nt * df)
    meta = {"dt": 1.0 / (nt * df), "t0": -delay, "df": float(df), "nt": nt,
            "offsets": offsets.tolist(), "reduction_velocity": float(reduction_velocity or 0.0),
            "source_index": int(source_index), "source": src.tolist()}
    return traces, meta


# ---------------------------------------------------------------------------
# misfit landscapes


@dataclass
class ScanResult:
    a_values: np.ndarray
    b_values: np.ndarray
    fwi_misfit: np.ndarray
    wri_objective: np.ndarray

    def __post_init__(self):
        shape = (len(self.a_values), len(self.b_values))
        if self.fwi_misfit.shape != shape or self.wri_objective.shape != shape:
            raise ValueError("misfit matrices must be (len(a), len(b))")


def scan_model(v_true, alpha_true, v_init, alpha_init, a, b):
    v = np.asarray(v_true) + a * a * (np.asarray(v_init) - np.asarray(v_true))
    al = np.asarray(alpha_true) + b * b * (np.asarray(alpha_init) - np.asarray(alpha_true))
    return velocity_to_slowness_sq(v), al


def misfit_scan(v_true, alpha_true, v_init, alpha_init, a_grid, b_grid, survey: SurveyData,
                penalties: Penalties | None = None, eig_fraction: float = 1e-2, threads: int = 1):
    """FWI misfit and zero-dual WRI objective on the (a, b) model family.

    The family depends on a^2 and b^2 only, so each |a|, |b| pair is
    computed once. gamma (if not given) is tuned at the initial model.
    """
    a_grid = np.asarray(a_grid, dtype=float)
    b_grid = np.asarray(b_grid, dtype=float)
    if np.any(np.abs(a_grid) > 1) or np.any(np.abs(b_grid) > 1):
        raise ValueError("scan coordinates must lie in [-1, 1]")
    grid = survey.grid
    scale = survey.source_scale
    pen = penalties or Penalties()
    lam = pen.lam * scale**2
    if pen.gamma is None:
        m0, a0 = scan_model(v_true, alpha_true, v_init, alpha_init, 1.0, 1.0)
        lam_max = max(normal_operator_max_eig(assemble(grid, m0, a0, survey.omega(f), survey.law,
                                                       survey.disc).assembled, scale)
                      for f in range(len(survey.frequencies)))
        gamma = pen.lam / (eig_fraction * lam_max)
    else:
        gamma = pen.gamma
    P = survey.sampler()
    Pm = P.as_matrix()
    PtP = Pm.T @ Pm

    def cell(key):
        aa, bb = key
        m, al = scan_model(v_true, alpha_true, v_init, alpha_init, aa, bb)
        fwi = wri = 0.0
        for f in range(len(survey.frequencies)):
            A = assemble(grid, m, al, survey.omega(f), survey.law, survey.disc).assembled
            bsrc = survey.sources(f)
            d = survey.data[:, f, :].T
            u0 = helmholtz.factorize(A).solve(bsrc)
            fwi += float(np.sum(np.abs(P.sample(u0) - d) ** 2))
            AH = sp.csr_matrix(A.conj().T)
            K = lam * (AH @ A) + gamma * PtP
            u = helmholtz.factorize(K).solve(lam * (AH @ bsrc) + gamma * P.inject(d))
            wri += float(lam * np.sum(np.abs(A @ u - bsrc) ** 2)
                         + gamma * np.sum(np.abs(P.sample(u) - d) ** 2))
        return fwi, wri

    # round so that e.g. -0.1 and 0.1 from linspace share one cell
    ka = np.round(np.abs(a_grid), 12)
    kb = np.round(np.abs(b_grid), 12)
    keys = [(x, y) for x in np.unique(ka) for y in np.unique(kb)]
    values = dict(zip(keys, _map(cell, keys, threads)))
    fwi = np.array([[values[(x, y)][0] for y in kb] for x in ka])
    wri = np.array([[values[(x, y)][1] for y in kb] for x in ka])
    return ScanResult(a_grid, b_grid, fwi, wri)


def local_minima(values) -> list[int]:
    """Indices of strict local minima of a 1-D sequence (ends compared to one neighbour)."""
    v = np.asarray(values, dtype=float)
    out = []
    for i in range(len(v)):
        left = v[i - 1] if i > 0 else np.inf
        right = v[i + 1] if i < len(v) - 1 else np.inf
        if v[i] < left and v[i] < right:
            out.append(i)
    return out
