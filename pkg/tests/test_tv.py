import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from viscowri.grid import BoxBounds, make_grid
from viscowri.tv import (TvProblem, TvState, augmented_lagrangian, difference_operators, grad_x,
                         grad_x_adjoint, grad_z, grad_z_adjoint, project_box, shrink2, split_violation,
                         tv_admm_step, tv_norm, tv_x_update)

G16 = make_grid(16, 16, 1.0, 1.0)


def blocky(g, rng, noise=0.3):
    X, Z = g.cell_centers()
    clean = ((X > 4) & (X < 11) & (Z > 3) & (Z < 12)).astype(float)
    return clean + noise * rng.standard_normal(g.n)


# -- differences and TV norm ---------------------------------------------------


def test_constant_field_has_zero_gradient():
    g = make_grid(6, 5, 2.0, 3.0)
    c = np.full(g.n, 4.2)
    assert np.all(grad_x(g, c) == 0) and np.all(grad_z(g, c) == 0)
    assert tv_norm(g, c) == 0


def test_gradient_adjoints(rng):
    g = make_grid(9, 7, 1.0, 1.0)
    u, v = rng.standard_normal(g.n), rng.standard_normal(g.n)
    for op, adj in ((grad_x, grad_x_adjoint), (grad_z, grad_z_adjoint)):
        lhs = op(g, u) @ v
        rhs = u @ adj(g, v)
        assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(lhs))


def test_ramp_gradient():
    g = make_grid(6, 4, 20.0, 20.0)
    X, _ = g.cell_centers()
    img = g.as_image(grad_x(g, X))
    assert np.all(img[:-1, :] == 20.0)
    assert np.all(img[-1, :] == 0.0)  # Neumann row


def test_tv_norm_step_and_homogeneity(rng):
    # 1 x K strip is not allowed (nx >= 3), so use a 3 x K block with a step along z
    g = make_grid(3, 8, 1.0, 1.0)
    w = np.zeros(g.n)
    w[g.index(np.repeat(np.arange(3), 4), np.tile(np.arange(4, 8), 3))] = 1.0
    assert tv_norm(g, w) == pytest.approx(3.0)
    u = rng.standard_normal(g.n)
    assert tv_norm(g, -2.5 * u) == pytest.approx(2.5 * tv_norm(g, u), rel=1e-14)


# -- shrinkage and projection --------------------------------------------------


def test_shrink2_examples():
    px, pz = shrink2(np.array([2.0 * 0.6]), np.array([2.0 * 0.8]), 1.0)
    assert px[0] == pytest.approx(0.6) and pz[0] == pytest.approx(0.8)  # scale 0.5
    px, pz = shrink2(np.array([0.1, -0.2]), np.array([0.0, 0.1]), 1.0)
    assert np.all(px == 0) and np.all(pz == 0)
    gx, gz = np.array([1.0, 0.0, -3.0]), np.array([2.0, 0.0, 4.0])
    px, pz = shrink2(gx, gz, 0.0)
    np.testing.assert_array_equal(px, gx)
    np.testing.assert_array_equal(pz, gz)
    with pytest.raises(ValueError):
        shrink2(gx, gz, -1)


def test_shrink2_magnitude(rng):
    gx, gz = rng.standard_normal(100), rng.standard_normal(100)
    t = 0.7
    px, pz = shrink2(gx, gz, t)
    np.testing.assert_allclose(np.hypot(px, pz), np.maximum(np.hypot(gx, gz) - t, 0), atol=1e-15)


def test_project_box_examples(rng):
    b = BoxBounds(1.0, 4.0)
    assert project_box(np.array([5.0]), b)[0] == 4.0
    x = np.array([1.0, 2.5, 4.0])
    np.testing.assert_array_equal(project_box(x, b), x)
    assert np.all(project_box(rng.standard_normal(10), BoxBounds(3.0, 3.0)) == 3.0)
    a, c = 5 * rng.standard_normal(50), 5 * rng.standard_normal(50)
    pa = project_box(a, b)
    np.testing.assert_array_equal(project_box(pa, b), pa)
    assert np.linalg.norm(pa - project_box(c, b)) <= np.linalg.norm(a - c)


# -- x-update ------------------------------------------------------------------


def test_x_update_matches_dense_solve(rng):
    g = G16
    gdiag = rng.standard_normal((2, g.n)) + 1j * rng.standard_normal((2, g.n))
    y = rng.standard_normal((2, g.n)) + 1j * rng.standard_normal((2, g.n))
    lam, xi = 1.7, 0.9
    prob = TvProblem(g, gdiag, y, lam, 0.1, xi)
    st = TvState(*(rng.standard_normal(g.n) for _ in range(7)))
    x = tv_x_update(prob, st)
    # dense oracle assembled from scratch
    Dx, Dz = (d.toarray() for d in difference_operators(g))
    M = lam * np.diag(np.real(np.sum(np.conj(gdiag) * gdiag, axis=0))) + xi * (Dx.T @ Dx + np.eye(g.n) + Dz.T @ Dz)
    rhs = (lam * np.real(np.sum(np.conj(gdiag) * y, axis=0)) + xi * Dx.T @ (st.px + st.qx)
           + xi * (st.py + st.qy) + xi * Dz.T @ (st.pz + st.qz))
    expected = np.linalg.solve(M, rhs)
    assert np.linalg.norm(x - expected) <= 1e-8 * np.linalg.norm(expected)


def test_x_update_limits(rng):
    g = G16
    y = rng.standard_normal(g.n) + 1j * rng.standard_normal(g.n)
    st = TvState.zeros(g)
    big = TvProblem(g, np.ones((1, g.n)), y[None], 1e10, 0.0, 1.0)
    np.testing.assert_allclose(tv_x_update(big, st), y.real, atol=1e-8)
    # a zero misfit weight is not allowed, use a vanishing y instead
    zero = TvProblem(g, np.ones((1, g.n)), np.zeros((1, g.n)), 1.0, 0.0, 1.0)
    assert np.all(tv_x_update(zero, st) == 0)


def test_x_update_without_splitting(rng):
    g = G16
    gd = rng.standard_normal((1, g.n)) + 1j * rng.standard_normal((1, g.n))
    y = rng.standard_normal((1, g.n)) + 1j * rng.standard_normal((1, g.n))
    prob = TvProblem(g, gd, y, 1.0, 0.0, 0.0)
    x = tv_x_update(prob, TvState.zeros(g))
    np.testing.assert_allclose(x, np.real(np.conj(gd[0]) * y[0]) / np.abs(gd[0]) ** 2, rtol=1e-12)
    with pytest.raises(ValueError):
        TvProblem(g, gd, y, 1.0, 0.5, 0.0)


# -- full step -----------------------------------------------------------------


def test_denoising_matches_proximal_gradient(rng):
    y = blocky(G16, rng)
    weight = 0.25
    ref = oracles.fgp_tv_denoise(G16, y, weight, n_iter=50000, tol=1e-15)
    ref_obj = weight * tv_norm(G16, ref) + 0.5 * np.sum((ref - y) ** 2)
    xi = 1.0
    prob = TvProblem(G16, np.ones((1, G16.n)), y[None], 1.0, weight / xi, xi)
    st = TvState.zeros(G16)
    for k in range(500):
        st = tv_admm_step(prob, st)
        if k == 199:
            assert abs(prob.objective(st.x) - ref_obj) <= 1e-3 * ref_obj
    assert abs(prob.objective(st.x) - ref_obj) <= 1e-3 * ref_obj
    assert max(split_violation(G16, st)) <= 1e-4 * np.max(np.abs(y))


def test_unconstrained_fixed_point(rng):
    y = rng.standard_normal(G16.n)
    prob = TvProblem(G16, np.ones((1, G16.n)), y[None], 1.0, 0.0, 1.0)
    st = TvState.zeros(G16)
    for _ in range(200):
        st = tv_admm_step(prob, st)
    np.testing.assert_allclose(st.x, y, atol=1e-6)
    assert max(np.max(np.abs(q)) for q in (st.qx, st.qy, st.qz)) <= 1e-6


def test_consistent_split_keeps_duals(rng):
    # x already fits y exactly and the splits are satisfied: no dual moves
    x = rng.standard_normal(G16.n)
    prob = TvProblem(G16, np.ones((1, G16.n)), x[None], 1.0, 0.0, 1.0)
    new = tv_admm_step(prob, TvState.consistent(G16, x))
    np.testing.assert_allclose(new.x, x, atol=1e-8)
    assert max(np.max(np.abs(q)) for q in (new.qx, new.qy, new.qz)) <= 1e-8


def test_step_does_not_increase_lagrangian(rng):
    for seed in range(5):
        r = np.random.default_rng(seed)
        g = make_grid(8, 7, 1.0, 1.0)
        gd = r.standard_normal((2, g.n)) + 1j * r.standard_normal((2, g.n))
        y = r.standard_normal((2, g.n)) + 1j * r.standard_normal((2, g.n))
        prob = TvProblem(g, gd, y, 1.3, 0.2, 0.8, BoxBounds(-0.5, 0.5))
        st = TvState(r.uniform(-0.5, 0.5, g.n), *(r.standard_normal(g.n) for _ in range(2)),
                     r.standard_normal(g.n), *(0.1 * r.standard_normal(g.n) for _ in range(3)))
        st.py[:] = project_box(st.py, prob.bounds)
        before = augmented_lagrangian(prob, st)
        new = tv_admm_step(prob, st)
        after = augmented_lagrangian(prob, new, duals=st)
        assert after <= before + 1e-10 * abs(before)


def test_bounds_respected_by_projection(rng):
    y = 3 * rng.standard_normal(G16.n)
    b = BoxBounds(-1.0, 1.0)
    prob = TvProblem(G16, np.ones((1, G16.n)), y[None], 1.0, 0.05, 1.0, b)
    st = TvState.consistent(G16, np.zeros(G16.n), b)
    for _ in range(300):
        st = tv_admm_step(prob, st)
        assert b.contains(st.py)
    assert b.contains(st.x, tol=1e-3)


def test_problem_validation():
    g = make_grid(4, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        TvProblem(g, np.ones((1, 3)), np.ones((1, 3)), 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        TvProblem(g, np.ones((1, g.n)), np.ones((1, g.n)), 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        TvProblem(g, np.full((1, g.n), np.nan), np.ones((1, g.n)), 1.0, 0.0, 1.0)
    assert sp.issparse(TvProblem(g, np.ones((1, g.n)), np.ones((1, g.n)), 1.0, 0.0, 1.0).normal_matrix())
