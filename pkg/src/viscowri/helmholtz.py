"""Discrete viscoacoustic Helmholtz operator with PML, sampling and sparse solves.

The operator acts on the padded grid and is assembled in the symmetric
(complex-symmetric) stretched-coordinate form

    K = (1 + delta) [Dx (x) Sz + Sx (x) Dz + c_mix Dx (x) Dz] + w^2 diag(sx sz m rho)

where ``D = d/dt (1/s d/dt)`` is the 1D stretched second difference and
``S = diag(s)``.  Inside the interior ``s = 1``, so the mass term is exactly
``w^2 m rho(alpha)`` on those rows; everything else (Laplacian, PML rows,
pad mass from edge-replicated parameters) is collected in ``delta_part``.

Two stencils are available:

* ``"optimized9"`` (default): isotropic 9-point Laplacian with a frequency
  dependent scale ``1 + (w h / v_ref)^2 / 12`` that cancels the leading
  dispersion error at the reference velocity. The mass term stays diagonal.
* ``"standard5"``: plain second-order 5-point Laplacian.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D
from .physics import DEFAULT_LAW, AttenuationLaw, beta, rho

STENCILS = ("optimized9", "standard5")


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class Discretization:
    """Stencil settings shared by every operator of one experiment.

    ``v_ref`` fixes the dispersion correction of the 9-point stencil and
    ``pml_velocity`` the PML damping; ``None`` derives them from the model
    being assembled (mean and max velocity respectively).
    """

    stencil: str = "optimized9"
    v_ref: float | None = None
    pml_velocity: float | None = None
    pml_reflection: float = 1e-3

    def __post_init__(self):
        if self.stencil not in STENCILS:
            raise ValueError(f"unknown stencil {self.stencil!r}; expected one of {STENCILS}")

    def to_dict(self) -> dict:
        return {"stencil": self.stencil, "v_ref": self.v_ref, "pml_velocity": self.pml_velocity,
                "pml_reflection": self.pml_reflection}


def extend_to_pad(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """Edge-replicate an interior field onto the padded grid (flat)."""
    img = np.asarray(values).reshape(grid.nx, grid.nz)
    return np.pad(img, grid.npml, mode="edge").ravel()


def pml_stretch(n_int: int, npml: int, h: float, omega: float, c_ref: float, reflection: float):
    """Stretch factors ``1 + i sigma / omega`` at padded nodes and half nodes.

    Returns ``(s_node, s_half)`` with lengths ``n_int + 2 npml`` and one more;
    ``s_half[k]`` sits at position ``k - 1/2``.
    """
    n = n_int + 2 * npml
    if npml == 0:
        return np.ones(n, complex), np.ones(n + 1, complex)
    thickness = npml * h
    sigma_max = 3.0 * c_ref * np.log(1.0 / reflection) / (2.0 * thickness)

    def sigma(pos):
        depth = np.maximum(np.maximum(npml - pos, pos - (npml + n_int - 1)), 0.0) * h
        return sigma_max * (depth / thickness) ** 2

    s_node = 1.0 + 1j * sigma(np.arange(n, dtype=float)) / omega
    s_half = 1.0 + 1j * sigma(np.arange(n + 1) - 0.5) / omega
    return s_node, s_half


def _second_difference(s_half: np.ndarray, h: float) -> sp.csr_matrix:
    c = 1.0 / (s_half * h * h)
    main = -(c[:-1] + c[1:])
    off = c[1:-1]
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _velocity_stats(m):
    v = 1.0 / np.sqrt(np.asarray(m, dtype=float))
    return float(v.min()), float(v.mean()), float(v.max())


def check_resolution(grid: Grid2D, m, omega: float):
    """Points per minimum wavelength; warn below 4, fail below 2.5."""
    vmin, _, _ = _velocity_stats(m)
    f = abs(omega) / (2 * np.pi)
    ppw = vmin / (f * max(grid.dx, grid.dz))
    if ppw < 2.5:
        raise ResolutionError(f"only {ppw:.2f} grid points per minimum wavelength (need >= 2.5)")
    if ppw < 4.0:
        warnings.warn(f"{ppw:.2f} grid points per minimum wavelength; results will be dispersive",
                      stacklevel=3)
    return ppw


def build_laplacian(grid: Grid2D, omega: float, c_pml: float, v_ref: float,
                    disc: Discretization) -> sp.csr_matrix:
    """PML-stretched Laplacian on the padded grid (symmetric form, no mass)."""
    sxn, sxh = pml_stretch(grid.nx, grid.npml, grid.dx, omega, c_pml, disc.pml_reflection)
    szn, szh = pml_stretch(grid.nz, grid.npml, grid.dz, omega, c_pml, disc.pml_reflection)
    Dx = _second_difference(sxh, grid.dx)
    Dz = _second_difference(szh, grid.dz)
    lap = sp.kron(Dx, sp.diags(szn)) + sp.kron(sp.diags(sxn), Dz)
    if disc.stencil == "optimized9":
        h2 = grid.dx**2 + grid.dz**2
        lap = lap + (h2 / 12.0) * sp.kron(Dx, Dz)
        lap = (1.0 + omega**2 * h2 / (24.0 * v_ref**2)) * lap
    return sp.csr_matrix(lap), np.outer(sxn, szn).ravel()


@dataclass
class HelmholtzOperator:
    """A(m, alpha) at one angular frequency.

    ``assembled == delta_part + E diag(mass_diag) E^T`` where ``E`` embeds the
    interior into the padded grid (``interior`` holds its padded indices).
    """

    omega: float
    grid: Grid2D
    delta_part: sp.csr_matrix
    mass_diag: np.ndarray
    interior: np.ndarray
    assembled: sp.csr_matrix = field(repr=False)
    law: AttenuationLaw = DEFAULT_LAW

    @property
    def shape(self):
        return self.assembled.shape

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.assembled @ u

    def apply_delta(self, u: np.ndarray) -> np.ndarray:
        return self.delta_part @ u

    def embed(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n_pad, dtype=complex)
        out[self.interior] = x
        return out

    def interior_of(self, u: np.ndarray) -> np.ndarray:
        return u[self.interior]

    def apply_with(self, u: np.ndarray, m: np.ndarray, rho_vals) -> np.ndarray:
        """delta_part u + w^2 E (u_int * rho_vals * m), keeping this operator's pad."""
        out = self.delta_part @ u
        out[self.interior] += self.omega**2 * u[self.interior] * rho_vals * m
        return out


def assemble(grid: Grid2D, m, alpha, omega: float, law: AttenuationLaw = DEFAULT_LAW,
             disc: Discretization | None = None, check: bool = True) -> HelmholtzOperator:
    disc = disc or Discretization()
    m = grid.check_field(np.asarray(m, dtype=float), "m")
    alpha = grid.check_field(np.asarray(alpha, dtype=float), "alpha")
    if np.any(~(m > 0)):
        raise ValueError("squared slowness must be strictly positive")
    if check:
        check_resolution(grid, m, omega)
    vmin, vmean, vmax = _velocity_stats(m)
    c_pml = disc.pml_velocity or vmax
    v_ref = disc.v_ref or vmean
    lap, sxsz = build_laplacian(grid, omega, c_pml, v_ref, disc)

    interior = grid.interior_pad_indices
    m_pad = extend_to_pad(grid, m)
    a_pad = extend_to_pad(grid, alpha)
    pad_mass = omega**2 * sxsz * m_pad * rho(a_pad, omega, law)
    pad_mass[interior] = 0.0
    delta_part = sp.csr_matrix(lap + sp.diags(pad_mass))
    delta_part.sum_duplicates()

    mass_diag = omega**2 * m * rho(alpha, omega, law)
    full = np.zeros(grid.n_pad, dtype=complex)
    full[interior] = mass_diag
    assembled = sp.csr_matrix(delta_part + sp.diags(full))
    assembled.sum_duplicates()
    return HelmholtzOperator(float(omega), grid, delta_part, mass_diag, interior, assembled, law)


def apply_trilinear_m(u_int: np.ndarray, rho_vals, omega: float) -> np.ndarray:
    """Diagonal of L with L m = w^2 (u * rho) * m on interior nodes."""
    return omega**2 * np.asarray(u_int) * np.broadcast_to(rho_vals, np.shape(u_int))


def apply_trilinear_alpha(u_int: np.ndarray, m: np.ndarray, omega: float,
                          law: AttenuationLaw = DEFAULT_LAW) -> np.ndarray:
    """Diagonal of H with H alpha = 2 w^2 beta (u * m) * alpha."""
    return 2.0 * omega**2 * beta(omega, law) * np.asarray(u_int) * np.asarray(m)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplingOperator:
    """Row selector P: picks ``indices`` out of vectors of length ``size``."""

    indices: np.ndarray
    size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or len(np.unique(idx)) != len(idx):
            raise ValueError("sampling indices must be a 1-D array of unique integers")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.size):
            raise IndexError("sampling index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return len(self.indices)

    def sample(self, u: np.ndarray) -> np.ndarray:
        if u.shape[0] != self.size:
            raise ValueError(f"vector of length {u.shape[0]} does not match operator size {self.size}")
        return u[self.indices]

    def inject(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d)
        if d.shape[0] != self.m:
            raise ValueError(f"expected {self.m} samples, got {d.shape[0]}")
        out = np.zeros((self.size,) + d.shape[1:], dtype=np.result_type(d, float))
        out[self.indices] = d
        return out

    def as_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((np.ones(self.m), (np.arange(self.m), self.indices)),
                             shape=(self.m, self.size))


def sampling_operator(grid: Grid2D, nodes, padded: bool = True) -> SamplingOperator:
    """P for interior node indices ``nodes`` acting on padded (or interior) vectors."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if padded:
        return SamplingOperator(grid.interior_pad_indices[nodes], grid.n_pad)
    return SamplingOperator(nodes, grid.n)


def point_sources(grid: Grid2D, nodes, amplitude=1.0) -> np.ndarray:
    """Padded right-hand sides (one column per node) of delta sources.

    Each has a single nonzero ``amplitude / (dx dz)``.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    b = np.zeros((grid.n_pad, len(nodes)), dtype=complex)
    b[grid.interior_pad_indices[nodes], np.arange(len(nodes))] = amplitude / (grid.dx * grid.dz)
    return b


# ---------------------------------------------------------------------------
# linear solves


class Factorization:
    """Reusable solver for one sparse matrix: sparse LU or CG on normal equations."""

    def __init__(self, K, method="lu", tol=1e-10, maxiter=None, refine=3, ordering=None):
        if K.shape[0] != K.shape[1]:
            raise ValueError(f"matrix must be square, got {K.shape}")
        self.K = sp.csc_matrix(K)
        self.method = method
        self.tol = tol
        self.refine = refine
        self.maxiter = maxiter
        self.last_residual = None
        if method == "lu":
            _check_structural(self.K)
            # minimum degree on K + K^T suits the Hermitian normal matrices,
            # COLAMD the (complex-symmetric) Helmholtz operator itself
            if ordering is None:
                herm = abs(self.K - self.K.conj().T).max() <= 1e-12 * abs(self.K).max()
                ordering = "MMD_AT_PLUS_A" if herm else "COLAMD"
            try:
                self._lu = spla.splu(self.K, permc_spec=ordering)
            except RuntimeError as exc:
                raise SingularMatrixError(f"sparse LU failed: {exc}", _zero_pivot_row(self.K)) from exc
            bad = np.flatnonzero(self._lu.U.diagonal() == 0)
            if bad.size:
                row = int(np.argsort(self._lu.perm_r)[bad[0]])
                raise SingularMatrixError(f"zero pivot in sparse LU (row {row})", row)
        elif method == "cgne":
            self._KH = sp.csr_matrix(self.K.conj().T)
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=complex)
        if self.method == "lu":
            x = self._lu.solve(y)
            ynorm = np.linalg.norm(y)
            for _ in range(self.refine):
                r = y - self.K @ x
                rel = np.linalg.norm(r) / ynorm if ynorm > 0 else 0.0
                if rel <= self.tol:
                    break
                x = x + self._lu.solve(r)
            self.last_residual = np.linalg.norm(y - self.K @ x) / ynorm if ynorm > 0 else 0.0
            return x
        if y.ndim == 2:
            return np.column_stack([self.solve(y[:, k]) for k in range(y.shape[1])])
        return self._solve_cgne(y)

    def _solve_cgne(self, y):
        n = self.K.shape[0]
        KH = self._KH
        K = self.K
        normal = spla.LinearOperator((n, n), matvec=lambda v: KH @ (K @ v), dtype=complex)
        d = np.asarray(abs(KH).multiply(abs(KH)).sum(axis=1)).ravel()
        d[d == 0] = 1.0
        M = spla.LinearOperator((n, n), matvec=lambda v: v / d, dtype=complex)
        rhs = KH @ y
        ynorm = np.linalg.norm(y)
        if ynorm == 0:
            return np.zeros(n, complex)
        x, info = spla.cg(normal, rhs, rtol=self.tol * 1e-2, atol=0.0,
                          maxiter=self.maxiter or 20 * n, M=M)
        rel = np.linalg.norm(K @ x - y) / ynorm
        self.last_residual = rel
        if info != 0 and rel > self.tol:
            raise SolverError(f"CGNE did not converge, relative residual {rel:.3e}")
        return x


def _check_structural(K):
    mag = abs(sp.csr_matrix(K))
    rows = np.flatnonzero(np.asarray(mag.sum(axis=1)).ravel() == 0)
    if rows.size:
        raise SingularMatrixError(f"matrix row {rows[0]} is identically zero (singular pivot)", int(rows[0]))
    cols = np.flatnonzero(np.asarray(mag.sum(axis=0)).ravel() == 0)
    if cols.size:
        raise SingularMatrixError(f"matrix column {cols[0]} is identically zero (singular pivot)", int(cols[0]))


def _zero_pivot_row(K):
    d = K.diagonal()
    zero = np.flatnonzero(d == 0)
    return int(zero[0]) if zero.size else None


def factorize(K, method="lu", tol=1e-10, ordering=None) -> Factorization:
    return Factorization(K, method=method, tol=tol, ordering=ordering)


def solve(F: Factorization, y: np.ndarray) -> np.ndarray:
    return F.solve(y)
