"""Bound-constrained isotropic-TV least squares by variable splitting.

Solves

    min_{x in box}  w * TV(x) + lam/2 * sum_k || g_k * x - y_k ||^2

for real ``x`` and complex diagonal blocks ``g_k``, where ``w = mu_over_xi * xi``.
The gradient split ``p_x = Dx x, p_z = Dz x`` and the bound split ``p_y = x``
are each relaxed with scaled duals ``q``; one step is an x-update (linear
solve), generalized soft thresholding, box projection and dual ascent.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import BoxBounds, Grid2D
from .helmholtz import SolverError


@lru_cache(maxsize=16)
def difference_operators(grid: Grid2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Forward differences along x and z; the last row of each is zero."""

    def d1(n):
        main = -np.ones(n)
        main[-1] = 0.0
        return sp.diags([main, np.ones(n - 1)], [0, 1], format="csr")

    Dx = sp.kron(d1(grid.nx), sp.identity(grid.nz), format="csr")
    Dz = sp.kron(sp.identity(grid.nx), d1(grid.nz), format="csr")
    return Dx, Dz


def grad_x(grid: Grid2D, w):
    return difference_operators(grid)[0] @ w


def grad_z(grid: Grid2D, w):
    return difference_operators(grid)[1] @ w


def grad_x_adjoint(grid: Grid2D, v):
    return difference_operators(grid)[0].T @ v


def grad_z_adjoint(grid: Grid2D, v):
    return difference_operators(grid)[1].T @ v


def tv_norm(grid: Grid2D, w) -> float:
    gx = grad_x(grid, w)
    gz = grad_z(grid, w)
    return float(np.sum(np.sqrt(np.abs(gx) ** 2 + np.abs(gz) ** 2)))


def shrink2(gx, gz, threshold):
    """Isotropic soft thresholding: scale (gx, gz) by max(1 - t/r, 0); r = 0 maps to 0."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    gx = np.asarray(gx, dtype=float)
    gz = np.asarray(gz, dtype=float)
    r = np.sqrt(gx * gx + gz * gz)
    scale = np.zeros_like(r)
    nz = r > 0
    scale[nz] = np.maximum(1.0 - threshold / r[nz], 0.0)
    return scale * gx, scale * gz


def project_box(x, bounds: BoxBounds):
    return np.minimum(np.maximum(x, bounds.lower), bounds.upper)


@dataclass
class TvProblem:
    grid: Grid2D
    g: np.ndarray
    y: np.ndarray
    lam: float
    mu_over_xi: float
    xi: float
    bounds: BoxBounds = BoxBounds()
    tol: float = 1e-8

    def __post_init__(self):
        self.g = np.atleast_2d(np.asarray(self.g, dtype=complex))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=complex))
        if self.g.shape != self.y.shape or self.g.shape[1] != self.grid.n:
            raise ValueError(f"g {self.g.shape} and y {self.y.shape} must be (K, {self.grid.n})")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("g has non-finite entries")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.mu_over_xi < 0 or self.xi < 0:
            raise ValueError("mu_over_xi and xi must be non-negative")
        if self.xi == 0 and (self.mu_over_xi > 0 or not self.bounds.unbounded):
            raise ValueError("xi = 0 is only valid without regularization and bounds")
        self.curvature = np.sum(np.abs(self.g) ** 2, axis=0)
        self.gy = np.real(np.sum(np.conj(self.g) * self.y, axis=0))

    @property
    def tv_weight(self) -> float:
        return self.mu_over_xi * self.xi

    def misfit(self, x) -> float:
        return float(0.5 * self.lam * np.sum(np.abs(self.g * x - self.y) ** 2))

    def objective(self, x) -> float:
        if not self.bounds.contains(x, tol=1e-12 * max(1.0, float(np.max(np.abs(x))))):
            return np.inf
        return self.tv_weight * tv_norm(self.grid, x) + self.misfit(x)

    def normal_matrix(self) -> sp.csr_matrix:
        Dx, Dz = difference_operators(self.grid)
        M = sp.diags(self.lam * self.curvature + self.xi) + self.xi * (Dx.T @ Dx + Dz.T @ Dz)
        return sp.csr_matrix(M)


@dataclass
class TvState:
    x: np.ndarray
    px: np.ndarray
    py: np.ndarray
    pz: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    qz: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid2D, x=None) -> "TvState":
        z = np.zeros(grid.n)
        x = z.copy() if x is None else np.array(x, dtype=float)
        return cls(x, z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def consistent(cls, grid: Grid2D, x, bounds: BoxBounds = BoxBounds()) -> "TvState":
        """Splits satisfied at ``x`` (projected onto the box), zero duals."""
        x = project_box(np.array(x, dtype=float), bounds)
        z = np.zeros(grid.n)
        return cls(x, grad_x(grid, x), x.copy(), grad_z(grid, x), z.copy(), z.copy(), z.copy())

    def copy(self) -> "TvState":
        return TvState(*(v.copy() for v in (self.x, self.px, self.py, self.pz, self.qx, self.qy, self.qz)))

    def reset_duals(self) -> "TvState":
        z = np.zeros_like(self.x)
        return replace(self, qx=z.copy(), qy=z.copy(), qz=z.copy())


def tv_x_update(problem: TvProblem, state: TvState) -> np.ndarray:
    """Solve [lam Re(G^H G) + xi (Dx^T Dx + I + Dz^T Dz)] x = rhs for real x."""
    lam, xi = problem.lam, problem.xi
    if xi == 0:
        x = state.x.copy()
        ok = problem.curvature > 0
        x[ok] = problem.gy[ok] / problem.curvature[ok]
        return x
    Dx, Dz = difference_operators(problem.grid)
    rhs = (lam * problem.gy + xi * (Dx.T @ (state.px + state.qx)) + xi * (state.py + state.qy)
           + xi * (Dz.T @ (state.pz + state.qz)))
    M = problem.normal_matrix()
    if not np.any(rhs):
        return np.zeros_like(rhs)
    diag = M.diagonal()
    precond = spla.LinearOperator(M.shape, matvec=lambda v: v / diag, dtype=float)
    x, info = spla.cg(M, rhs, x0=state.x, rtol=problem.tol, atol=0.0, M=precond,
                      maxiter=10 * problem.grid.n)
    if info != 0:
        res = np.linalg.norm(M @ x - rhs) / np.linalg.norm(rhs)
        raise SolverError(f"TV x-update did not converge (relative residual {res:.3e})")
    return x


def soft_threshold_level(problem: TvProblem, state: TvState, x, factor: float = 0.02) -> float:
    """``factor * max(r)`` with r the split magnitude at ``x`` (threshold recipe)."""
    gx = grad_x(problem.grid, x) - state.qx
    gz = grad_z(problem.grid, x) - state.qz
    return float(factor * np.max(np.sqrt(gx * gx + gz * gz)))


def tv_admm_step(problem: TvProblem, state: TvState, n_inner: int = 1) -> TvState:
    """One (or ``n_inner``) full split cycle: x, (px, pz), py, then duals."""
    grid = problem.grid
    for _ in range(n_inner):
        x = tv_x_update(problem, state)
        if problem.xi == 0:
            state = TvState.consistent(grid, x)
            continue
        gx = grad_x(grid, x)
        gz = grad_z(grid, x)
        px, pz = shrink2(gx - state.qx, gz - state.qz, problem.mu_over_xi)
        py = project_box(x - state.qy, problem.bounds)
        state = TvState(
            x=x, px=px, py=py, pz=pz,
            qx=state.qx + px - gx,
            qy=state.qy + py - x,
            qz=state.qz + pz - gz,
        )
    return state


def augmented_lagrangian(problem: TvProblem, state: TvState, duals: TvState | None = None) -> float:
    """Scaled augmented Lagrangian at (x, p) with the duals of ``duals`` (default: state's)."""
    d = duals or state
    grid = problem.grid
    if not problem.bounds.contains(state.py, tol=1e-12 * max(1.0, float(np.max(np.abs(state.py))))):
        return np.inf
    tv_part = problem.tv_weight * np.sum(np.sqrt(state.px**2 + state.pz**2))
    split = (np.sum((state.px - grad_x(grid, state.x) + d.qx) ** 2)
             + np.sum((state.py - state.x + d.qy) ** 2)
             + np.sum((state.pz - grad_z(grid, state.x) + d.qz) ** 2))
    return float(tv_part + problem.misfit(state.x) + 0.5 * problem.xi * split)


def split_violation(grid: Grid2D, state: TvState) -> tuple[float, float, float]:
    return (float(np.max(np.abs(state.px - grad_x(grid, state.x)))),
            float(np.max(np.abs(state.py - state.x))),
            float(np.max(np.abs(state.pz - grad_z(grid, state.x)))))
