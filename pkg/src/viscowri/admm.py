"""Iteratively refined wavefield reconstruction inversion for (m, alpha).

Each outer iteration reconstructs the wavefields from the relaxed wave
equation, then updates squared slowness and attenuation through two
bound-constrained TV subproblems, and refreshes the scaled multipliers with
the exact (non-linearized) operator.

Shapes used throughout, for a batch with F frequencies and S sources:

* ``u[f]``, ``b_dual[f]``: (n_pad, S) complex, on the padded grid
* ``d_dual[f]``: (M, S) complex
* ``m``, ``alpha``: (n,) real interior fields

The source equation is row-scaled by ``survey.source_scale`` so that the
largest source entry is one; source residuals are reported in these units
and data residuals in the units of the data.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import helmholtz
from .grid import BoxBounds
from .helmholtz import HelmholtzOperator, SolverError, assemble
from .physics import beta, rho
from .survey import SurveyData
from .tv import TvProblem, TvState, soft_threshold_level, tv_admm_step, tv_norm, tv_x_update

log = logging.getLogger(__name__)

MODES = ("peaceman_rachford", "admm")
REGULARIZATIONS = ("none", "tv", "btv")
HISTORY_COLUMNS = ("k", "batch", "sum_src_residual_sq", "sum_data_residual_sq", "tv_m", "tv_alpha")


@dataclass
class Penalties:
    """Penalty weights of one batch.

    ``mu`` and ``nu`` multiply TV(m) and TV(alpha); ``xi_m`` and ``xi_alpha``
    are the splitting penalties of the two TV subproblems.  ``None`` means
    "tune on first use" (see :func:`tune_penalties`).
    """

    lam: float = 1.0
    gamma: float | None = None
    mu: float | None = None
    nu: float | None = None
    xi_m: float | None = None
    xi_alpha: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        for name in ("mu", "nu", "xi_m", "xi_alpha"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def resolved(self) -> bool:
        return None not in (self.gamma, self.mu, self.nu, self.xi_m, self.xi_alpha)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lam", "gamma", "mu", "nu", "xi_m", "xi_alpha")}


@dataclass
class InversionOptions:
    mode: str = "peaceman_rachford"
    reg: str = "btv"
    velocity_bounds: tuple[float, float] = (1200.0, 2000.0)
    alpha_bounds: tuple[float, float] = (0.0, 0.15)
    lam: float = 1.0
    lam_growth: float = 1.0
    mu_weight: float = 0.6
    nu_weight: float = 0.4
    threshold_factor: float = 0.02
    eig_fraction: float = 1e-2
    update_alpha: bool = True
    reset_tv_duals: bool = False
    solver: str = "lu"
    threads: int = 1
    pr_relaxation: float = 0.5
    data_dual_step: float = 1.0
    min_slowness_fraction: float = 1e-2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reg not in REGULARIZATIONS:
            raise ValueError(f"reg must be one of {REGULARIZATIONS}, got {self.reg!r}")
        if not self.lam > 0 or not self.lam_growth > 0:
            raise ValueError("lam and lam_growth must be positive")
        if not 0 < self.eig_fraction:
            raise ValueError("eig_fraction must be positive")
        if not 0 < self.pr_relaxation <= 1:
            raise ValueError("pr_relaxation must lie in (0, 1]")
        if not 0 <= self.data_dual_step <= 1:
            raise ValueError("data_dual_step must lie in [0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def bounds(self) -> tuple[BoxBounds, BoxBounds]:
        if self.reg != "btv":
            return BoxBounds(), BoxBounds()
        vmin, vmax = self.velocity_bounds
        return (BoxBounds.velocity_to_slowness_sq(vmin, vmax),
                BoxBounds(*self.alpha_bounds))


@dataclass
class BatchPlan:
    batches: list
    max_iterations: list | int = 30
    eps_b: float = 1e-3
    eps_d: float = 1e-5

    def __post_init__(self):
        self.batches = [[float(f) for f in b] for b in self.batches]
        if not self.batches or any(len(b) == 0 for b in self.batches):
            raise ValueError("every batch needs at least one frequency")
        if any(f <= 0 for b in self.batches for f in b):
            raise ValueError("frequencies must be positive")
        if isinstance(self.max_iterations, (int, np.integer)):
            self.max_iterations = [int(self.max_iterations)] * len(self.batches)
        self.max_iterations = [int(n) for n in self.max_iterations]
        if len(self.max_iterations) != len(self.batches):
            raise ValueError("need one max_iterations entry per batch")
        if any(n < 1 for n in self.max_iterations):
            raise ValueError("max_iterations must be >= 1")


@dataclass
class AdmmState:
    m: np.ndarray
    alpha: np.ndarray
    u: list
    b_dual: list
    d_dual: list
    tv_m: TvState
    tv_alpha: TvState
    k: int = 0
    src_residual: float = np.inf
    data_residual: float = np.inf


@dataclass
class History:
    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


# ---------------------------------------------------------------------------
# spectrum estimates


def power_iteration(matvec, n: int, tol: float = 1e-4, maxiter: int = 300, seed: int = 0,
                    dtype=complex) -> tuple[float, bool]:
    """Largest eigenvalue of a Hermitian positive semidefinite operator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    if np.dtype(dtype).kind == "c":
        v = v + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        w = matvec(v)
        new = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, True
        v = w / nw
        if est > 0 and abs(new - est) <= tol * abs(new):
            return new, True
        est = new
    return est, False


def gershgorin_bound(A: sp.spmatrix, scale: float = 1.0) -> float:
    """Upper bound on the largest eigenvalue of scale^2 A^H A."""
    absA = abs(sp.csr_matrix(A))
    rows = absA.T @ (absA @ np.ones(A.shape[1]))
    return float(scale**2 * rows.max())


def normal_operator_max_eig(A: sp.spmatrix, scale: float = 1.0, seed: int = 0) -> float:
    B = sp.csr_matrix(A) * scale
    BH = sp.csr_matrix(B.conj().T)
    val, ok = power_iteration(lambda v: BH @ (B @ v), A.shape[1], seed=seed)
    if not ok:
        log.warning("power iteration did not converge; using Gershgorin bound")
        return gershgorin_bound(A, scale)
    return val


# ---------------------------------------------------------------------------
# solver


class IrWri:
    """All per-batch machinery: operators, factorizations, subproblems.

    ``survey`` must hold exactly the frequencies of the batch.
    """

    def __init__(self, survey: SurveyData, options: InversionOptions | None = None,
                 penalties: Penalties | None = None):
        self.survey = survey
        self.options = options or InversionOptions()
        self.penalties = penalties or Penalties(lam=self.options.lam)
        self.grid = survey.grid
        self.scale = survey.source_scale
        self.omegas = [survey.omega(f) for f in range(len(survey.frequencies))]
        self.P = survey.sampler()
        self.Pm = self.P.as_matrix()
        self.b = [survey.sources(f) for f in range(len(self.omegas))]
        self.d = [survey.data[:, f, :].T.copy() for f in range(len(self.omegas))]
        self.m_bounds, self.a_bounds = self.options.bounds()
        self.ops: list[HelmholtzOperator] | None = None
        self._ops_model = None
        self.n_factorizations = 0
        self._m_floor = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def lam_eff(self) -> float:
        return self.penalties.lam * self.scale**2

    def _map(self, fn, items):
        items = list(items)
        if self.options.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.options.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def operators(self, m, alpha) -> list[HelmholtzOperator]:
        """Operators at (m, alpha), reused while the model is unchanged."""
        key = (m.tobytes(), alpha.tobytes())
        if self.ops is None or self._ops_model != key:
            s = self.survey
            self.ops = self._map(lambda w: assemble(self.grid, m, alpha, w, s.law, s.disc),
                                 self.omegas)
            self._ops_model = key
        return self.ops

    def initial_state(self, m0, alpha0=None, tv_m: TvState | None = None,
                      tv_alpha: TvState | None = None) -> AdmmState:
        g = self.grid
        m0 = np.array(g.check_field(np.asarray(m0, dtype=float), "m"))
        alpha0 = np.zeros(g.n) if alpha0 is None else np.array(g.check_field(np.asarray(alpha0, float), "alpha"))
        S, M = self.survey.acquisition.n_sources, self.P.m
        F = len(self.omegas)
        self._m_floor = self.options.min_slowness_fraction * float(m0.min())
        return AdmmState(
            m=m0, alpha=alpha0,
            u=[np.zeros((g.n_pad, S), complex) for _ in range(F)],
            b_dual=[np.zeros((g.n_pad, S), complex) for _ in range(F)],
            d_dual=[np.zeros((M, S), complex) for _ in range(F)],
            tv_m=tv_m or TvState.consistent(g, m0, self.m_bounds),
            tv_alpha=tv_alpha or TvState.consistent(g, alpha0, self.a_bounds),
        )

    # -- penalties ----------------------------------------------------------

    def estimate_gamma(self, state: AdmmState) -> float:
        """gamma with lam / gamma = eig_fraction * lambda_max(scale^2 A^H A)."""
        ops = self.operators(state.m, state.alpha)
        lam_max = max(normal_operator_max_eig(op.assembled, self.scale) for op in ops)
        return self.penalties.lam / (self.options.eig_fraction * lam_max)

    def _tv_weights(self, g, y, weight, bounds, state_tv):
        """(tv weight, xi) from the curvature scale and the threshold recipe."""
        if weight == 0 or self.options.reg == "none":
            return 0.0, 0.0
        curv = self.lam_eff * np.sum(np.abs(g) ** 2, axis=0)
        c = float(np.median(curv))
        if not c > 0:
            c = float(curv.mean()) or 1.0
        xi = weight * c
        trial = TvProblem(self.grid, g, y, self.lam_eff, 0.0, xi, bounds)
        x = tv_x_update(trial, state_tv)
        thr = soft_threshold_level(trial, state_tv, x, self.options.threshold_factor)
        return thr * xi, xi

    # -- primal blocks ------------------------------------------------------

    def _factor(self, K):
        self.n_factorizations += 1
        return helmholtz.factorize(K, method=self.options.solver)

    def wavefield_update(self, state: AdmmState, f: int) -> np.ndarray:
        """Solve (lam A^H A + gamma P^T P) u = lam A^H (b~ + b) + gamma P^T (d~ + d)."""
        op = self.operators(state.m, state.alpha)[f]
        A = op.assembled
        AH = sp.csr_matrix(A.conj().T)
        lam, gamma = self.lam_eff, self.penalties.gamma
        K = lam * (AH @ A) + gamma * (self.Pm.T @ self.Pm)
        rhs = lam * (AH @ (state.b_dual[f] + self.b[f])) + gamma * self.P.inject(state.d_dual[f] + self.d[f])
        F = self._factor(K)
        u = F.solve(rhs)
        if F.last_residual is not None and F.last_residual > 1e-8:
            raise SolverError(f"wavefield solve at {self.omegas[f] / (2 * np.pi):g} Hz "
                              f"left relative residual {F.last_residual:.2e}")
        return u

    def _m_problem(self, state: AdmmState) -> tuple[np.ndarray, np.ndarray]:
        ops = self.operators(state.m, state.alpha)
        G, Y = [], []
        for f, op in enumerate(ops):
            w = op.omega
            u = state.u[f]
            r = rho(state.alpha, w, self.survey.law)
            G.append((w**2 * r[:, None] * u[op.interior]).T)
            Y.append(((state.b_dual[f] + self.b[f]) - op.delta_part @ u)[op.interior].T)
        return np.vstack(G), np.vstack(Y)

    def _alpha_problem(self, state: AdmmState) -> tuple[np.ndarray, np.ndarray]:
        ops = self.operators(state.m, state.alpha)
        G, Y = [], []
        for f, op in enumerate(ops):
            w = op.omega
            u = state.u[f]
            ui = u[op.interior]
            G.append((2 * w**2 * beta(w, self.survey.law) * state.m[:, None] * ui).T)
            base = op.delta_part @ u
            base[op.interior] += w**2 * state.m[:, None] * ui
            Y.append(((state.b_dual[f] + self.b[f]) - base)[op.interior].T)
        return np.vstack(G), np.vstack(Y)

    def _tv_update(self, g, y, tv_state, which):
        pen = self.penalties
        weight_name, xi_name = ("mu", "xi_m") if which == "m" else ("nu", "xi_alpha")
        bounds = self.m_bounds if which == "m" else self.a_bounds
        if getattr(pen, weight_name) is None or getattr(pen, xi_name) is None:
            w = self.options.mu_weight if which == "m" else self.options.nu_weight
            tvw, xi = self._tv_weights(g, y, w, bounds, tv_state)
            if xi == 0 and not bounds.unbounded:
                xi = self.lam_eff * float(np.median(np.sum(np.abs(g) ** 2, axis=0))) or 1.0
            self.penalties = replace(pen, **{weight_name: tvw, xi_name: xi})
            pen = self.penalties
        tvw, xi = getattr(pen, weight_name), getattr(pen, xi_name)
        problem = TvProblem(self.grid, g, y, self.lam_eff, tvw / xi if xi > 0 else 0.0, xi, bounds)
        return tv_admm_step(problem, tv_state)

    def slowness_update(self, state: AdmmState) -> AdmmState:
        g, y = self._m_problem(state)
        tv_m = self._tv_update(g, y, state.tv_m, "m")
        m = tv_m.x
        if self._m_floor > 0 and np.any(m < self._m_floor):
            log.warning("clipping %d non-physical squared-slowness values", int(np.sum(m < self._m_floor)))
            m = np.maximum(m, self._m_floor)
        return replace(state, m=m, tv_m=tv_m)

    def attenuation_update(self, state: AdmmState) -> AdmmState:
        g, y = self._alpha_problem(state)
        tv_a = self._tv_update(g, y, state.tv_alpha, "alpha")
        return replace(state, alpha=tv_a.x, tv_alpha=tv_a)

    # -- duals --------------------------------------------------------------

    def dual_update_b(self, state: AdmmState, f: int, step: float = 1.0) -> np.ndarray:
        op = self.operators(state.m, state.alpha)[f]
        return state.b_dual[f] + step * (self.b[f] - op.assembled @ state.u[f])

    def dual_update_d(self, state: AdmmState, f: int, step: float = 1.0) -> np.ndarray:
        return state.d_dual[f] + step * (self.d[f] - self.P.sample(state.u[f]))

    def _refresh_b(self, state, step=1.0):
        return replace(state, b_dual=[self.dual_update_b(state, f, step) for f in range(len(self.omegas))])

    def _refresh_d(self, state, step=1.0):
        step *= self.options.data_dual_step
        return replace(state, d_dual=[self.dual_update_d(state, f, step) for f in range(len(self.omegas))])

    # -- iteration ----------------------------------------------------------

    def residuals(self, state: AdmmState) -> tuple[float, float]:
        ops = self.operators(state.m, state.alpha)
        src = sum(float(np.sum(np.abs(op.assembled @ state.u[f] - self.b[f]) ** 2))
                  for f, op in enumerate(ops)) * self.scale**2
        dat = sum(float(np.sum(np.abs(self.P.sample(state.u[f]) - self.d[f]) ** 2))
                  for f in range(len(ops)))
        return src, dat

    def update_wavefields(self, state: AdmmState) -> AdmmState:
        if self.penalties.gamma is None:
            self.penalties = replace(self.penalties, gamma=self.estimate_gamma(state))
        self.operators(state.m, state.alpha)
        u = self._map(lambda f: self.wavefield_update(state, f), range(len(self.omegas)))
        return replace(state, u=u)

    def pr_iteration(self, state: AdmmState, mode: str | None = None) -> AdmmState:
        mode = mode or self.options.mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        pr = mode == "peaceman_rachford"
        r = self.options.pr_relaxation
        state = self.update_wavefields(state)
        if pr:
            state = self._refresh_d(self._refresh_b(state, r), r)
        state = self.slowness_update(state)
        if pr:
            state = self._refresh_b(state, r)
        if self.options.update_alpha:
            state = self.attenuation_update(state)
            if pr:
                state = self._refresh_b(state, r)
        if not pr:
            state = self._refresh_d(self._refresh_b(state))
        src, dat = self.residuals(state)
        return replace(state, k=state.k + 1, src_residual=src, data_residual=dat)


def check_stop(state: AdmmState, max_iterations: int, eps_b: float = 1e-3, eps_d: float = 1e-5) -> bool:
    if state.k >= max_iterations:
        return True
    return state.src_residual <= eps_b and state.data_residual <= eps_d


def tune_penalties(survey: SurveyData, m, alpha=None, options: InversionOptions | None = None) -> Penalties:
    """Resolve every penalty from one wavefield reconstruction at (m, alpha)."""
    solver = IrWri(survey, options)
    state = solver.update_wavefields(solver.initial_state(m, alpha))
    solver.slowness_update(state)
    solver.attenuation_update(state)
    return solver.penalties


def run_inversion(survey: SurveyData, m0, alpha0=None, plan: BatchPlan | None = None,
                  penalties: Penalties | None = None, options: InversionOptions | None = None,
                  callback=None):
    """Frequency-batch driver. Returns ``(m, alpha, history)``."""
    options = options or InversionOptions()
    plan = plan or BatchPlan([list(survey.frequencies)])
    grid = survey.grid
    m = np.array(grid.check_field(np.asarray(m0, float), "m"))
    alpha = np.zeros(grid.n) if alpha0 is None else np.array(grid.check_field(np.asarray(alpha0, float), "alpha"))
    history = History()
    tv_m = tv_a = None
    lam = penalties.lam if penalties is not None else options.lam
    for ib, (freqs, max_it) in enumerate(zip(plan.batches, plan.max_iterations)):
        sub = survey.subset(freqs)
        pen = replace(penalties, lam=lam) if penalties is not None else Penalties(lam=lam)
        solver = IrWri(sub, options, pen)
        if tv_m is not None and options.reset_tv_duals:
            tv_m, tv_a = tv_m.reset_duals(), tv_a.reset_duals()
        state = solver.initial_state(m, alpha, tv_m, tv_a)
        history.snapshots.append({"batch": ib, "k": 0, "m": m.copy(), "alpha": alpha.copy()})
        while True:
            state = solver.pr_iteration(state)
            row = {"k": len(history.rows) + 1, "batch": ib,
                   "sum_src_residual_sq": state.src_residual,
                   "sum_data_residual_sq": state.data_residual,
                   "tv_m": tv_norm(grid, state.m), "tv_alpha": tv_norm(grid, state.alpha)}
            history.rows.append(row)
            log.info("batch %d it %d src %.3e data %.3e", ib, state.k, state.src_residual, state.data_residual)
            if callback is not None:
                callback(state, row, solver)
            if check_stop(state, max_it, plan.eps_b, plan.eps_d):
                break
        m, alpha, tv_m, tv_a = state.m, state.alpha, state.tv_m, state.tv_alpha
        history.snapshots.append({"batch": ib, "k": state.k, "m": m.copy(), "alpha": alpha.copy(),
                                  "penalties": solver.penalties.to_dict()})
        lam *= options.lam_growth
    return m, alpha, history
