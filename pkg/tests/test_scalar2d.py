import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfields import _kernels, scalar2d
from cellfields.complexes import build_cartesian_2d


def random_history(cplx, rng, scale=1.0):
    return scalar2d.ScalarHistory(
        cplx,
        scale * rng.normal(size=(cplx.n0, cplx.n1)),
        scale * rng.normal(size=(cplx.n0 + 1, cplx.n1)),
        scale * rng.normal(size=(cplx.n0, cplx.n1 + 1)),
    )


def random_variation(cplx, rng):
    return scalar2d.ScalarVariation(
        rng.normal(size=(cplx.n0, cplx.n1)),
        rng.normal(size=(cplx.n0 + 1, cplx.n1)),
        rng.normal(size=(cplx.n0, cplx.n1 + 1)),
    )


def dyadic_history(cplx, rng, denom=16):
    # values with short mantissas so grid arithmetic stays exact
    def grid(shape):
        return rng.integers(-2 * denom, 2 * denom, size=shape) / denom
    return scalar2d.ScalarHistory(
        cplx,
        grid((cplx.n0, cplx.n1)),
        grid((cplx.n0 + 1, cplx.n1)),
        grid((cplx.n0, cplx.n1 + 1)),
    )


# -- action -----------------------------------------------------------------


def test_action_constant_zero():
    cplx = build_cartesian_2d(3, 4, 0.4, 0.3)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    hist.centers[:] = 1.7
    hist.tfaces[:] = 1.7
    hist.sfaces[:] = 1.7
    model = scalar2d.WaveModel()
    assert scalar2d.action(model, hist) == 0.0


def test_action_constant_nonlinearity_counts_corners():
    cplx = build_cartesian_2d(3, 4, 0.4, 0.3)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    for arr in (hist.centers, hist.tfaces, hist.sfaces):
        arr[:] = 0.6
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(2.0))
    expected = 12 * 4.0 * (2.0 * 0.6 ** 3) * 0.4 * 0.3
    assert scalar2d.action(model, hist) == pytest.approx(expected, rel=1e-13)


def test_action_single_atom_unit_future_face():
    cplx = build_cartesian_2d(1, 1, 1.0, 1.0)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    hist.set_face((0, 0), "0+", 1.0)
    model = scalar2d.WaveModel()
    # the two corners toward the future face contribute 1/2 each
    assert scalar2d.action(model, hist) == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ds_matches_action_differences(seed):
    rng = np.random.default_rng(seed)
    cplx = build_cartesian_2d(int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                              0.35, 0.45)
    hist = random_history(cplx, rng, 0.8)
    var = random_variation(cplx, rng)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.7))
    total = scalar2d.dS(model, hist, var).total
    eps = 1e-5
    plus = hist.copy()
    minus = hist.copy()
    for arrp, arrm, v in ((plus.centers, minus.centers, var.centers),
                          (plus.tfaces, minus.tfaces, var.tfaces),
                          (plus.sfaces, minus.sfaces, var.sfaces)):
        arrp += eps * v
        arrm -= eps * v
    fd = (scalar2d.action(model, plus) - scalar2d.action(model, minus)) / (2 * eps)
    assert abs(total - fd) <= 1e-7 * max(1.0, abs(total))


# -- interior equation ------------------------------------------------------


def test_interior_residual_constant_zero():
    cplx = build_cartesian_2d(2, 3, 0.5, 0.25)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(1.5))
    assert np.all(scalar2d.interior_residual_grid(model, hist) == 0.0)


def test_interior_residual_linear_data_zero():
    cplx = build_cartesian_2d(3, 4, 0.5, 0.25)
    hist = scalar2d.ScalarHistory.from_function(
        cplx, lambda x0, x1: 0.25 * x0 - 0.75 * x1 + 0.5)
    model = scalar2d.WaveModel()
    grid = scalar2d.interior_residual_grid(model, hist)
    assert np.all(grid == 0.0)


def test_interior_residual_is_action_gradient():
    rng = np.random.default_rng(3)
    cplx = build_cartesian_2d(3, 3, 0.4, 0.55)
    hist = random_history(cplx, rng)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(1.2))
    eps = 1e-6
    for atom in [(0, 0), (1, 1), (2, 2), (1, 2)]:
        plus = hist.copy()
        minus = hist.copy()
        plus.centers[atom] += eps
        minus.centers[atom] -= eps
        fd = (scalar2d.action(model, plus) - scalar2d.action(model, minus)) / (2 * eps)
        assert scalar2d.interior_residual(model, hist, atom) == pytest.approx(fd, abs=1e-8)


# -- gluing -----------------------------------------------------------------


def test_glue_solve_midpoint():
    cplx = build_cartesian_2d(2, 1, 0.3, 0.7)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    hist.centers[0, 0] = 0.0
    hist.centers[1, 0] = 2.0
    face = cplx.face_key((0, 0), "0+")
    assert scalar2d.glue_solve(hist, face) == 1.0
    hist.tfaces[1, 0] = 1.0
    assert scalar2d.gluing_residual(scalar2d.WaveModel(), hist, face) == 0.0


def test_glue_solve_rejects_boundary_face():
    cplx = build_cartesian_2d(2, 2, 0.3, 0.7)
    hist = scalar2d.ScalarHistory.zeros(cplx)
    with pytest.raises(ValueError):
        scalar2d.glue_solve(hist, cplx.face_key((0, 0), "0-"))


def test_apply_glue_zeroes_all_residuals_exactly():
    rng = np.random.default_rng(11)
    cplx = build_cartesian_2d(4, 5, 0.5, 0.25)
    hist = dyadic_history(cplx, rng)
    scalar2d.apply_glue(hist)
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(0.9))
    tg, sg = scalar2d.gluing_residual_grids(model, hist)
    assert np.all(tg == 0.0)
    assert np.all(sg == 0.0)


def test_gluing_and_forms_ignore_nonlinearity():
    rng = np.random.default_rng(5)
    cplx = build_cartesian_2d(3, 4, 0.6, 0.45)
    hist = random_history(cplx, rng)
    var1 = random_variation(cplx, rng)
    var2 = random_variation(cplx, rng)
    models = [scalar2d.WaveModel(),
              scalar2d.WaveModel(scalar2d.CubicNonlinearity(1.3)),
              scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.8))]
    tg0, sg0 = scalar2d.gluing_residual_grids(models[0], hist)
    for model in models[1:]:
        tg, sg = scalar2d.gluing_residual_grids(model, hist)
        assert np.array_equal(tg, tg0)
        assert np.array_equal(sg, sg0)
    for atom, label in [((0, 0), "0+"), ((1, 2), "1-"), ((2, 3), "1+")]:
        theta = [scalar2d.cartan_form(m, hist, atom, label, var1) for m in models]
        omega = [scalar2d.omega_form(m, hist, atom, label, var1, var2)
                 for m in models]
        assert theta[0] == theta[1] == theta[2]
        assert omega[0] == omega[1] == omega[2]


def test_theta_sum_equals_ds_boundary_block():
    rng = np.random.default_rng(17)
    cplx = build_cartesian_2d(3, 3, 0.8, 0.35)
    hist = random_history(cplx, rng)
    var = random_variation(cplx, rng)
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(0.4))
    total = sum(scalar2d.cartan_form(model, hist, atom, label, var)
                for atom, label in scalar2d.boundary_incidences(cplx))
    assert total == pytest.approx(scalar2d.dS(model, hist, var).boundary, rel=1e-12, abs=1e-12)


# -- evolution --------------------------------------------------------------


def test_evolve_constant_stays_constant():
    initial = scalar2d.InitialData(0.4, 0.3, np.full(5, 0.75), np.full(5, 0.75))
    boundary = scalar2d.DirichletBoundary(0.75, 0.75)
    hist = scalar2d.evolve(scalar2d.WaveModel(), initial, 4, boundary)
    assert np.all(hist.centers == 0.75)
    assert np.all(hist.tfaces == 0.75)
    assert np.all(hist.sfaces == 0.75)


def test_evolve_half_step_mirror_relation():
    rng = np.random.default_rng(23)
    initial = scalar2d.InitialData(0.3, 0.5, rng.normal(size=6), rng.normal(size=6))
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(0.2))
    hist = scalar2d.evolve(model, initial, 3, scalar2d.DirichletBoundary())
    for i in range(1, hist.complex.n0):
        assert np.array_equal(hist.centers[i, :],
                              2.0 * hist.tfaces[i, :] - hist.centers[i - 1, :])


def test_evolve_produced_residuals_vanish_exactly():
    rng = np.random.default_rng(29)
    n1 = 7
    initial = scalar2d.InitialData(
        0.5, 0.25,
        rng.integers(-16, 16, size=n1) / 16.0,
        rng.integers(-16, 16, size=n1) / 16.0,
    )
    boundary = scalar2d.DirichletBoundary(0.25, -0.5)
    model = scalar2d.WaveModel()
    hist = scalar2d.evolve(model, initial, 6, boundary)
    assert np.all(scalar2d.interior_residual_grid(model, hist) == 0.0)
    tg, sg = scalar2d.gluing_residual_grids(model, hist)
    assert np.all(tg == 0.0)
    assert np.all(sg == 0.0)


def test_evolve_produced_residuals_tiny_with_nonlinearity():
    rng = np.random.default_rng(31)
    initial = scalar2d.InitialData(0.2, 0.3, 0.1 * rng.normal(size=6),
                                   0.1 * rng.normal(size=6))
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.5))
    hist = scalar2d.evolve(model, initial, 4, scalar2d.DirichletBoundary())
    scale = max(1.0, float(np.max(np.abs(hist.centers))))
    assert np.max(np.abs(scalar2d.interior_residual_grid(model, hist))) <= 1e-12 * scale
    tg, sg = scalar2d.gluing_residual_grids(model, hist)
    assert np.max(np.abs(tg)) <= 1e-12 * scale
    assert np.max(np.abs(sg)) <= 1e-12 * scale


def _evolved_linear_6x6():
    rng = np.random.default_rng(37)
    initial = scalar2d.InitialData(0.2, 0.3, 0.1 * rng.normal(size=6),
                                   0.1 * rng.normal(size=6))
    boundary = scalar2d.DirichletBoundary(0.1 * rng.normal(size=6),
                                          0.1 * rng.normal(size=6))
    model = scalar2d.WaveModel()
    hist = scalar2d.evolve(model, initial, 5, boundary)
    return model, hist


def test_evolve_agrees_with_newton_solve():
    model, hist = _evolved_linear_6x6()
    boundary = scalar2d.BoundaryData.from_history(hist)
    solved = scalar2d.solve(model, hist.complex, boundary)
    assert np.max(np.abs(solved.centers - hist.centers)) <= 1e-10
    assert np.max(np.abs(solved.tfaces - hist.tfaces)) <= 1e-10
    assert np.max(np.abs(solved.sfaces - hist.sfaces)) <= 1e-10


def test_evolve_restrict_roundtrip():
    model, hist = _evolved_linear_6x6()
    boundary = scalar2d.BoundaryData.from_history(hist)
    solved = scalar2d.solve(model, hist.complex, boundary)
    initial, dirichlet = scalar2d.restrict_to_initial_data(solved)
    replay = scalar2d.evolve(model, initial, solved.complex.n0 - 1, dirichlet)
    assert np.max(np.abs(replay.centers - solved.centers)) <= 1e-10
    assert np.max(np.abs(replay.tfaces - solved.tfaces)) <= 1e-10
    assert np.max(np.abs(replay.sfaces - solved.sfaces)) <= 1e-10


def test_newton_solver_handles_nonlinearity():
    rng = np.random.default_rng(41)
    cplx = build_cartesian_2d(4, 4, 0.2, 0.3)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(1.0))
    boundary = scalar2d.BoundaryData(0.3 * rng.normal(size=4), 0.3 * rng.normal(size=4),
                                     0.3 * rng.normal(size=4), 0.3 * rng.normal(size=4))
    hist = scalar2d.solve(model, cplx, boundary, tol=1e-12)
    assert np.max(np.abs(scalar2d.interior_residual_grid(model, hist))) <= 1e-12
    tg, sg = scalar2d.gluing_residual_grids(model, hist)
    assert max(np.max(np.abs(tg)), np.max(np.abs(sg))) <= 1e-12


# -- first variations and the multisymplectic check -------------------------


def test_first_variation_matches_solution_differences():
    rng = np.random.default_rng(43)
    cplx = build_cartesian_2d(3, 3, 0.25, 0.35)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.9))
    base = scalar2d.BoundaryData(0.2 * rng.normal(size=3), 0.2 * rng.normal(size=3),
                                 0.2 * rng.normal(size=3), 0.2 * rng.normal(size=3))
    hist = scalar2d.solve(model, cplx, base, tol=1e-13)
    bvar = scalar2d.boundary_basis(cplx)[2]
    var = scalar2d.first_variation(model, hist, bvar)
    eps = 1e-5
    def shifted(sign):
        b = scalar2d.BoundaryData(base.tfaces_minus + sign * eps * bvar.tfaces_minus,
                                  base.tfaces_plus + sign * eps * bvar.tfaces_plus,
                                  base.sfaces_minus + sign * eps * bvar.sfaces_minus,
                                  base.sfaces_plus + sign * eps * bvar.sfaces_plus)
        return scalar2d.solve(model, cplx, b, guess=hist, tol=1e-13)
    hp = shifted(+1.0)
    hm = shifted(-1.0)
    fd_centers = (hp.centers - hm.centers) / (2 * eps)
    assert np.max(np.abs(fd_centers - var.centers)) <= 1e-7


def test_defect_zero_for_equal_variations():
    model, hist = _evolved_linear_6x6()
    var = scalar2d.first_variation(model, hist, scalar2d.boundary_basis(hist.complex)[0])
    assert scalar2d.multisymplectic_defect(model, hist, var, var) == 0.0


@pytest.mark.parametrize("nonlin,tol", [
    (None, 1e-10),
    (scalar2d.CosineNonlinearity(1.0), 1e-9),
])
def test_defect_small_on_solutions(nonlin, tol):
    rng = np.random.default_rng(47)
    cplx = build_cartesian_2d(4, 4, 0.2, 0.3)
    model = scalar2d.WaveModel(nonlin)
    boundary = scalar2d.BoundaryData(0.3 * rng.normal(size=4), 0.3 * rng.normal(size=4),
                                     0.3 * rng.normal(size=4), 0.3 * rng.normal(size=4))
    hist = scalar2d.solve(model, cplx, boundary, tol=1e-13)
    variations = [scalar2d.first_variation(model, hist, b)
                  for b in scalar2d.boundary_basis(cplx)]
    worst = 0.0
    for a in range(len(variations)):
        for b in range(a + 1, len(variations)):
            d = scalar2d.multisymplectic_defect(model, hist, variations[a], variations[b])
            worst = max(worst, abs(d))
    assert worst <= tol


def test_defect_refuses_non_solutions():
    rng = np.random.default_rng(53)
    cplx = build_cartesian_2d(3, 3, 0.4, 0.6)
    hist = random_history(cplx, rng)
    model = scalar2d.WaveModel()
    var = scalar2d.ScalarVariation.zeros(cplx)
    with pytest.raises(scalar2d.NotASolutionError) as err:
        scalar2d.multisymplectic_defect(model, hist, var, var)
    assert "interior" in err.value.residuals


# -- reduced model ----------------------------------------------------------


def test_reduce_constant_bulk():
    cplx = build_cartesian_2d(4, 4, 0.3, 0.5)
    model = scalar2d.WaveModel()
    out = scalar2d.reduce(model, cplx, np.full((4, 4), 1.2))
    assert np.all(out.residuals == 0.0)
    assert out.value == 0.0


def test_reduce_value_matches_plaquette_oracle():
    rng = np.random.default_rng(59)
    cplx = build_cartesian_2d(5, 4, 0.35, 0.55)
    model = scalar2d.WaveModel(scalar2d.CubicNonlinearity(0.7))
    bulk = rng.normal(size=(5, 4))
    out = scalar2d.reduce(model, cplx, bulk)
    # oracle: sum quarter lagrangians of the corners around each
    # complete plaquette, faces replaced by center midpoints
    h, k = cplx.h, cplx.k
    nl = model.nonlinearity
    expected = 0.0
    for i in range(cplx.n0 - 1):
        for j in range(cplx.n1 - 1):
            for (a0, a1), (c0, c1) in [((i, j), (1, 1)), ((i + 1, j), (-1, 1)),
                                       ((i, j + 1), (1, -1)), ((i + 1, j + 1), (-1, -1))]:
                c = bulk[a0, a1]
                f0 = 0.5 * (c + bulk[a0 + c0, a1])
                f1 = 0.5 * (c + bulk[a0, a1 + c1])
                d0 = (f0 - c) / h * c0
                d1 = (f1 - c) / k * c1
                expected += h * k * (0.5 * d0 ** 2 - 0.5 * d1 ** 2 + float(nl.value(c)))
    assert out.value == pytest.approx(expected, rel=1e-12)
    lifted = scalar2d.action(model, out.lift, corners="complete")
    assert out.value == pytest.approx(lifted, rel=1e-12)


def test_reduce_residual_matches_value_gradient():
    rng = np.random.default_rng(61)
    cplx = build_cartesian_2d(4, 5, 0.3, 0.45)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.8))
    bulk = rng.normal(size=(4, 5))
    out = scalar2d.reduce(model, cplx, bulk)
    eps = 1e-6
    for atom in [(1, 1), (2, 3), (1, 2)]:
        plus = bulk.copy()
        minus = bulk.copy()
        plus[atom] += eps
        minus[atom] -= eps
        fd = (scalar2d.reduce(model, cplx, plus).value
              - scalar2d.reduce(model, cplx, minus).value) / (2 * eps)
        assert out.residuals[atom[0] - 1, atom[1] - 1] == pytest.approx(fd, abs=1e-8)


def test_reduced_solutions_lift_to_full_solutions():
    rng = np.random.default_rng(67)
    cplx = build_cartesian_2d(5, 5, 0.2, 0.3)
    model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(0.6))
    bulk = 0.2 * rng.normal(size=(5, 5))
    # Newton on the interior bulk entries with a numeric jacobian
    idx = [(i, j) for i in range(1, 4) for j in range(1, 4)]
    for _ in range(60):
        res = np.array([scalar2d.reduce(model, cplx, bulk).residuals[i - 1, j - 1]
                        for i, j in idx])
        if np.max(np.abs(res)) <= 1e-12:
            break
        jac = np.zeros((len(idx), len(idx)))
        eps = 1e-7
        for col, (i, j) in enumerate(idx):
            plus = bulk.copy()
            plus[i, j] += eps
            rp = np.array([scalar2d.reduce(model, cplx, plus).residuals[a - 1, b - 1]
                           for a, b in idx])
            jac[:, col] = (rp - res) / eps
        step = np.linalg.solve(jac, -res)
        for col, (i, j) in enumerate(idx):
            bulk[i, j] += step[col]
    out = scalar2d.reduce(model, cplx, bulk)
    assert np.max(np.abs(out.residuals)) <= 1e-12
    full = scalar2d.interior_residual_grid(model, out.lift)
    assert np.max(np.abs(full[1:-1, 1:-1])) <= 1e-11
    tg, sg = scalar2d.gluing_residual_grids(model, out.lift)
    assert np.max(np.abs(tg[:, 1:-1])) <= 1e-14
    assert np.max(np.abs(sg[1:-1, :])) <= 1e-14


# -- boundary-data model ----------------------------------------------------


def test_boundary_model_examples():
    model = scalar2d.WaveModel()
    assert scalar2d.boundary_model_Lb(model, [0.7, 0.7, 0.7, 0.7], 1.0, 1.0) == 0.0
    assert scalar2d.boundary_model_Lb(model, [1.0, 0.0, 0.0, 0.0], 1.0, 1.0) == 4.0
    cos_model = scalar2d.WaveModel(scalar2d.CosineNonlinearity(1.0))
    h, k = 0.4, 0.7
    val = scalar2d.boundary_model_Lb(cos_model, [0.3, 0.3, 0.3, 0.3], h, k)
    assert val == pytest.approx(4 * h * k * np.cos(0.3), rel=1e-13)


# -- slab momentum ----------------------------------------------------------


def test_slab_momentum_constant_in_space_solution():
    # uniform motion: spatially constant rows advancing by 2*delta per
    # atom; the Dirichlet values must follow the moving edge centers
    n1, n_steps, delta = 5, 4, 0.3
    rows = 0.5 + 2.0 * delta * np.arange(n_steps + 1)
    initial = scalar2d.InitialData(0.4, 0.3, np.full(n1, rows[0]),
                                   np.full(n1, rows[0] - delta))
    boundary = scalar2d.DirichletBoundary(rows, rows)
    model = scalar2d.WaveModel()
    hist = scalar2d.evolve(model, initial, n_steps, boundary)
    assert np.max(np.abs(hist.centers - rows[:, None])) <= 1e-12
    values = [scalar2d.slab_momentum(model, hist, m)
              for m in range(hist.complex.n0 + 1)]
    assert np.max(np.abs(np.diff(values))) <= 1e-12


def test_slab_momentum_flux_identity():
    model, hist = _evolved_linear_6x6()
    h, k = hist.complex.h, hist.complex.k
    for m in range(1, hist.complex.n0):
        q_lo = scalar2d.slab_momentum(model, hist, m)
        q_hi = scalar2d.slab_momentum(model, hist, m + 1)
        row = hist.centers[m, :]
        d1 = (hist.sfaces[m, 1:] - 2.0 * row) + hist.sfaces[m, :-1]
        flux = (2.0 * h / k) * float(np.sum(d1))
        assert q_hi - q_lo == pytest.approx(flux, abs=1e-12)


# -- kernels ----------------------------------------------------------------


def test_kernel_builds_agree():
    if _kernels.corner_action_sum_numba is None:
        pytest.skip("compiled kernel build unavailable")
    rng = np.random.default_rng(71)
    n0, n1 = 13, 9
    centers = rng.normal(size=(n0, n1))
    tfaces = rng.normal(size=(n0 + 1, n1))
    sfaces = rng.normal(size=(n0, n1 + 1))
    nvals = rng.normal(size=(n0, n1))
    h, k = 0.37, 0.29
    a_np = _kernels.corner_action_sum_numpy(centers, tfaces, sfaces, h, k, nvals)
    a_nb = _kernels.corner_action_sum_numba(centers, tfaces, sfaces, h, k, nvals)
    assert a_nb == pytest.approx(a_np, rel=1e-12)
    np.testing.assert_allclose(
        _kernels.interior_residual_grid_numba(centers, tfaces, sfaces, h, k, nvals),
        _kernels.interior_residual_grid_numpy(centers, tfaces, sfaces, h, k, nvals),
        rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(
        _kernels.time_gluing_grid_numba(centers, tfaces, h, k),
        _kernels.time_gluing_grid_numpy(centers, tfaces, h, k),
        rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(
        _kernels.space_gluing_grid_numba(centers, sfaces, h, k),
        _kernels.space_gluing_grid_numpy(centers, sfaces, h, k),
        rtol=1e-13, atol=1e-13)


def test_kernel_env_flag_selects_numpy_build():
    code = ("import os; os.environ['CELLFIELDS_DISABLE_NUMBA'] = '1'; "
            "from cellfields import _kernels; "
            "print(_kernels.NUMBA_ENABLED, "
            "_kernels.corner_action_sum is _kernels.corner_action_sum_numpy)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["False", "True"]


# -- model validation and symmetry ------------------------------------------


def test_wavemodel_rejects_inconsistent_derivative():
    bad = scalar2d.CallableNonlinearity(lambda p: np.sin(p),
                                        lambda p: 1.1 * np.cos(p))
    with pytest.raises(ValueError):
        scalar2d.WaveModel(bad)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_action_negates_under_axis_swap(seed):
    rng = np.random.default_rng(seed)
    n0, n1 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    h, k = 0.3, 0.65
    cplx = build_cartesian_2d(n0, n1, h, k)
    hist = random_history(cplx, rng)
    swapped = scalar2d.ScalarHistory(
        build_cartesian_2d(n1, n0, k, h),
        hist.centers.T.copy(), hist.sfaces.T.copy(), hist.tfaces.T.copy())
    model = scalar2d.WaveModel()
    s = scalar2d.action(model, hist)
    assert scalar2d.action(model, swapped) == pytest.approx(-s, rel=1e-12, abs=1e-12)
