import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfields import mech1d
from cellfields.complexes import build_time_complex
from cellfields.liegroup import so_group
from cellfields.mech1d import (
    CallablePotential,
    HarmonicPotential,
    NotASolutionError,
    ParticleHistory,
    ParticleModel,
    ParticleVariation,
    RigidBodyModel,
    RigidVariation,
    SolverFailure,
    VeselovModel,
    ZeroPotential,
    action,
    angular_momentum_matrices,
    boundary_model_Sb,
    boundary_model_solve,
    dS,
    first_variation,
    noether_current,
    omega_form,
    perturb,
    reduce_Sr,
    residual_blocks,
    solve,
    symplectic_defect,
    theta_form,
    uniform_rotation_history,
    veselov_action,
    veselov_vs_rigid,
)

SO3 = so_group(3)


def wavy_potential(w):
    w = np.asarray(w, dtype=float)
    return CallablePotential(
        value_fn=lambda q: np.cos(w @ q),
        grad_fn=lambda q: -np.sin(w @ q) * w,
        hess_fn=lambda q: -np.cos(w @ q) * np.outer(w, w),
    )


def random_particle(cplx, d, rng, scale=1.0):
    return ParticleHistory(
        cplx,
        scale * rng.standard_normal((cplx.n_atoms + 1, d)),
        scale * rng.standard_normal((cplx.n_atoms, d)),
    )


def random_particle_variation(cplx, d, rng):
    return ParticleVariation(
        rng.standard_normal((cplx.n_atoms + 1, d)),
        rng.standard_normal((cplx.n_atoms, d)),
    )


def random_rigid(cplx, rng, scale=0.4):
    n = cplx.n_atoms
    qb = np.stack([SO3.random(rng, scale) for _ in range(n + 1)])
    qc = np.stack([SO3.random(rng, scale) for _ in range(n)])
    em = 0.5 * rng.standard_normal((n, 3))
    ep = 0.5 * rng.standard_normal((n, 3))
    return mech1d.RigidHistory(cplx, qb, qc, em, ep)


def random_rigid_variation(cplx, rng):
    n = cplx.n_atoms
    return RigidVariation(
        rng.standard_normal((n + 1, 3)),
        rng.standard_normal((n, 3)),
        rng.standard_normal((n, 3)),
        rng.standard_normal((n, 3)),
    )


def fd_action_derivative(model, hist, var, eps):
    sp = action(model, perturb(model, hist, var, eps))
    sm = action(model, perturb(model, hist, var, -eps))
    return (sp - sm) / (2 * eps)


# ---------------------------------------------------------------------------
# action values


def test_action_constant_history_is_zero():
    cplx = build_time_complex(4, 0.3)
    model = ParticleModel(mass=2.0)
    hist = ParticleHistory(cplx, np.full((5, 2), 1.7), np.full((4, 2), 1.7))
    assert action(model, hist) == 0.0


def test_action_single_atom_unit_steps():
    cplx = build_time_complex(1, 1.0)
    model = ParticleModel(mass=1.0)
    hist = ParticleHistory(cplx, [[0.0], [2.0]], [[1.0]])
    assert action(model, hist) == pytest.approx(1.0, abs=1e-15)


def test_action_rigid_identity_zero():
    cplx = build_time_complex(3, 0.5)
    model = RigidBodyModel(SO3, np.ones(3))
    eye = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
    hist = mech1d.RigidHistory(cplx, eye, eye[:3].copy(), np.zeros((3, 3)), np.zeros((3, 3)))
    assert action(model, hist) == 0.0


# ---------------------------------------------------------------------------
# first variation


def test_ds_zero_variation():
    cplx = build_time_complex(3, 0.2)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(2.0))
    rng = np.random.default_rng(7)
    hist = random_particle(cplx, 2, rng)
    var = ParticleVariation.zeros(cplx, 2)
    blocks = dS(model, hist, var)
    assert blocks.total == 0.0


def test_ds_matches_finite_difference_particle():
    cplx = build_time_complex(4, 0.3)
    model = ParticleModel(mass=1.3, potential=wavy_potential([0.9, -0.4]))
    rng = np.random.default_rng(11)
    hist = random_particle(cplx, 2, rng)
    var = random_particle_variation(cplx, 2, rng)
    exact = dS(model, hist, var).total
    errs = []
    for eps in (1e-3, 1e-4):
        errs.append(abs(exact - fd_action_derivative(model, hist, var, eps)))
    assert errs[0] <= 1e-4
    assert errs[1] <= 1e-6
    if errs[1] > 1e-11:  # above the round-off floor the ratio must be ~100
        assert 20 < errs[0] / errs[1] < 500


def test_ds_matches_finite_difference_rigid():
    cplx = build_time_complex(3, 0.25)
    model = RigidBodyModel(SO3, np.array([1.0, 2.0, 3.0]))
    rng = np.random.default_rng(13)
    hist = random_rigid(cplx, rng)
    var = random_rigid_variation(cplx, rng)
    exact = dS(model, hist, var).total
    errs = []
    for eps in (1e-3, 1e-4):
        errs.append(abs(exact - fd_action_derivative(model, hist, var, eps)))
    assert errs[0] <= 1e-3
    assert errs[1] <= 1e-5
    if errs[1] > 1e-11:
        assert 20 < errs[0] / errs[1] < 500


def test_ds_interior_variation_vanishes_on_solution():
    cplx = build_time_complex(6, 0.1)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    res = solve(model, cplx, [1.0], [0.2])
    rng = np.random.default_rng(3)
    var = random_particle_variation(cplx, 1, rng)
    var.vb[0] = 0.0
    var.vb[-1] = 0.0
    assert abs(dS(model, res.history, var).total) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_ds_fd_property(n, seed):
    cplx = build_time_complex(n, 0.4)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(0.7))
    rng = np.random.default_rng(seed)
    hist = random_particle(cplx, 1, rng)
    var = random_particle_variation(cplx, 1, rng)
    exact = dS(model, hist, var).total
    fd = fd_action_derivative(model, hist, var, 1e-5)
    assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))


# ---------------------------------------------------------------------------
# solvers


def test_solve_free_particle_uniform_spacing():
    cplx = build_time_complex(5, 0.3)
    model = ParticleModel(mass=1.4)
    res = solve(model, cplx, [0.0, 1.0], [1.0, -2.0])
    # free motion: all decimation points equally spaced along the segment
    times = np.array([t for _, _, t in cplx.decimation_points()])
    frac = times / cplx.total_time
    expected = np.array([0.0, 1.0]) + frac[:, None] * np.array([1.0, -3.0])
    chain = np.empty((11, 2))
    chain[0::2] = res.history.qb
    chain[1::2] = res.history.qc
    assert np.max(np.abs(chain - expected)) <= 1e-12


def test_solve_harmonic_against_brute_force():
    # independent route: residuals coded directly on the time-ordered
    # unknown vector, finite-difference Jacobian, plain Newton
    n, a, m = 10, 0.1, 1.0
    cplx = build_time_complex(n, a)
    model = ParticleModel(mass=m, potential=HarmonicPotential(1.0))
    qa, qb = 1.0, np.cos(2.0)

    def oracle_residual(z):
        # z = [c_1, b_1, c_2, ..., b_{n-1}, c_n] in time order
        centers = z[0::2]
        markers = np.concatenate([[qa], z[1::2], [qb]])
        out = np.empty(2 * n - 1)
        out[0::2] = -(m / a) * (markers[1:] - 2 * centers + markers[:-1]) - 2 * a * centers
        out[1::2] = (m / a) * (
            (markers[1:-1] - centers[:-1]) - (centers[1:] - markers[1:-1])
        )
        return out

    z = np.zeros(2 * n - 1)
    for _ in range(40):
        r = oracle_residual(z)
        if np.max(np.abs(r)) < 1e-13:
            break
        h = 1e-7
        J = np.empty((z.size, z.size))
        for j in range(z.size):
            zp = z.copy()
            zp[j] += h
            J[:, j] = (oracle_residual(zp) - r) / h
        z = z + np.linalg.solve(J, -r)
    assert np.max(np.abs(oracle_residual(z))) < 1e-12

    res = solve(model, cplx, qa, qb)
    assert np.max(np.abs(res.history.qc[:, 0] - z[0::2])) <= 1e-9
    assert np.max(np.abs(res.history.qb[1:-1, 0] - z[1::2])) <= 1e-9


def test_uniform_rotation_solves_rigid_equations():
    cplx = build_time_complex(6, 0.2)
    rng = np.random.default_rng(5)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    for inertia, ax in [
        (np.array([2.0, 2.0, 2.0]), axis),
        (np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 0.0])),
    ]:
        model = RigidBodyModel(SO3, inertia)
        hist = uniform_rotation_history(model, cplx, ax, 0.7)
        blocks = residual_blocks(model, hist)
        for key in ("interior", "gluing", "wedge_minus", "wedge_plus"):
            assert np.max(np.abs(blocks[key])) <= 1e-10, key


def test_rigid_solve_reaches_uniform_rotation():
    cplx = build_time_complex(4, 0.15)
    model = RigidBodyModel(SO3, np.array([1.5, 1.5, 1.5]))
    axis = np.array([0.0, 1.0, 0.0])
    ref = uniform_rotation_history(model, cplx, axis, 0.9)
    res = solve(model, cplx, ref.qb[0], ref.qb[-1])
    assert res.residual <= 1e-10
    assert abs(action(model, res.history) - action(model, ref)) <= 1e-8


def test_solver_failure_reports():
    cplx = build_time_complex(3, 0.2)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    with pytest.raises(SolverFailure) as exc:
        solve(model, cplx, [0.0], [1.0], max_iter=0)
    assert exc.value.residual_norm is not None
    assert "residual" in exc.value.report()


def test_rigid_branch_notice_single_atom():
    cplx = build_time_complex(1, 0.5)
    model = RigidBodyModel(SO3, np.ones(3))
    qa = np.eye(3)
    chi = SO3.algebra_element(np.array([0.0, 0.0, 2.5 * np.sqrt(2.0)]))
    qb = SO3.exp(chi)  # rotation by 2.5 rad
    res = solve(model, cplx, qa, qb, search_branches=True)
    assert len(res.branches) == 2
    assert res.notice is not None
    for s, h in res.branches:
        assert np.max(np.abs(mech1d._rigid_residual_vector(model, h))) <= 1e-10


# ---------------------------------------------------------------------------
# Noether currents


def test_noether_free_particle_momentum():
    cplx = build_time_complex(6, 0.25)
    model = ParticleModel(mass=1.1)
    res = solve(model, cplx, [0.0, 1.0], [2.0, 0.0])
    h = res.history
    # half-step displacements agree between the first and last segments
    assert np.max(np.abs((h.qc[0] - h.qb[0]) - (h.qb[-1] - h.qc[-1]))) <= 1e-12
    sites, vals = noether_current(model, h, [1.0, 0.0])
    assert len(sites) == 12
    assert np.max(np.abs(vals - vals[0])) <= 1e-12


def test_noether_rigid_angular_momentum():
    cplx = build_time_complex(8, 0.1)
    model = RigidBodyModel(SO3, np.array([2.0, 2.0, 2.0]))
    hist = uniform_rotation_history(model, cplx, np.array([0.3, -0.5, 0.8]), 0.6)
    mats = angular_momentum_matrices(model, hist)
    spread = np.max(np.abs(mats - mats[0]))
    assert spread <= 1e-9
    _, vals = noether_current(model, hist, [0.1, 0.2, -0.3], solution_tol=1e-8)
    assert np.max(np.abs(vals - vals[0])) <= 1e-9


def test_noether_constant_history_zero():
    cplx = build_time_complex(3, 0.4)
    model = ParticleModel(mass=1.0)
    hist = ParticleHistory(cplx, np.full((4, 1), 0.7), np.full((3, 1), 0.7))
    _, vals = noether_current(model, hist, [2.0])
    assert np.max(np.abs(vals)) == 0.0


def test_noether_refuses_off_shell():
    cplx = build_time_complex(3, 0.4)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    rng = np.random.default_rng(2)
    hist = random_particle(cplx, 1, rng)
    with pytest.raises(NotASolutionError) as exc:
        noether_current(model, hist, [1.0])
    assert exc.value.residuals


# ---------------------------------------------------------------------------
# symplectic form


def test_symplectic_defect_antisymmetry():
    cplx = build_time_complex(4, 0.2)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    rng = np.random.default_rng(17)
    hist = random_particle(cplx, 2, rng)
    var = random_particle_variation(cplx, 2, rng)
    assert symplectic_defect(model, hist, var, var) == 0.0


def test_symplectic_defect_free_particle():
    cplx = build_time_complex(5, 0.3)
    model = ParticleModel(mass=2.0)
    res = solve(model, cplx, [0.0, 0.0], [1.0, 1.0])
    basis = [np.array(v) for v in ([1.0, 0.0], [0.0, 1.0])]
    vars_ = [
        first_variation(model, res.history, b, np.zeros(2)) for b in basis
    ] + [first_variation(model, res.history, np.zeros(2), b) for b in basis]
    for v in vars_:
        for w in vars_:
            assert abs(symplectic_defect(model, res.history, v, w)) <= 1e-12


def test_symplectic_defect_harmonic():
    cplx = build_time_complex(7, 0.12)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    res = solve(model, cplx, [0.8], [-0.3])
    v = first_variation(model, res.history, [1.0], [0.0])
    w = first_variation(model, res.history, [0.0], [1.0])
    assert abs(symplectic_defect(model, res.history, v, w)) <= 1e-9
    # interior equations hold along the variations
    blocks = residual_blocks(model, res.history)
    assert np.max(np.abs(blocks["interior"])) <= 1e-12


def test_symplectic_defect_rigid():
    cplx = build_time_complex(3, 0.2)
    model = RigidBodyModel(SO3, np.array([1.0, 1.7, 2.4]))
    hist = uniform_rotation_history(model, cplx, np.array([1.0, 0.0, 0.0]), 0.8)
    vs = [
        first_variation(model, hist, e, np.zeros(3))
        for e in np.eye(3)
    ] + [first_variation(model, hist, np.zeros(3), e) for e in np.eye(3)]
    worst = max(
        abs(symplectic_defect(model, hist, v, w)) for v in vs for w in vs
    )
    assert worst <= 1e-9


def test_omega_is_minus_d_theta_rigid():
    # finite-difference exterior derivative of theta against omega_form,
    # with the variations extended as constant-chart-coefficient fields
    cplx = build_time_complex(2, 0.3)
    model = RigidBodyModel(SO3, np.array([1.0, 2.0, 3.0]))
    rng = np.random.default_rng(23)
    hist = random_rigid(cplx, rng)
    v = random_rigid_variation(cplx, rng)
    w = random_rigid_variation(cplx, rng)
    for site, mk in (((1, "-"), 0), ((2, "+"), 2)):
        eps = 1e-4

        def d_along(a_var, b_var):
            tp = theta_form(model, perturb(model, hist, a_var, eps), b_var, site)
            tm = theta_form(model, perturb(model, hist, a_var, -eps), b_var, site)
            return (tp - tm) / (2 * eps)

        br = SO3.coefficients(
            SO3.bracket(
                SO3.algebra_element(v.xib[mk]), SO3.algebra_element(w.xib[mk])
            )
        )
        br_var = RigidVariation.zeros(cplx, 3)
        br_var.xib[mk] = br
        d_theta = d_along(v, w) - d_along(w, v) - theta_form(model, hist, br_var, site)
        assert abs(omega_form(model, hist, v, w, site) + d_theta) <= 5e-6


# ---------------------------------------------------------------------------
# structural identities


def test_rigid_momentum_conjugation_identities():
    rng = np.random.default_rng(31)
    cplx = build_time_complex(4, 0.3)
    for _ in range(10):
        hist = random_rigid(cplx, rng, scale=0.8)
        for i in range(cplx.n_atoms):
            phim = hist.qb[i].T @ hist.qc[i]
            phip = hist.qc[i].T @ hist.qb[i + 1]
            Em = SO3.algebra_element(hist.em[i])
            Ep = SO3.algebra_element(hist.ep[i])
            um = 0.5 * (phim @ Em + Em @ phim.T)
            wm = 0.5 * (Em @ phim + phim.T @ Em)
            up = 0.5 * (Ep @ phip + phip.T @ Ep)
            wp = 0.5 * (phip @ Ep + Ep @ phip.T)
            assert np.max(np.abs(wm - phim.T @ um @ phim)) <= 1e-12
            assert np.max(np.abs(up - phip.T @ wp @ phip)) <= 1e-12


def test_gluing_residual_is_potential_independent():
    cplx = build_time_complex(5, 0.2)
    rng = np.random.default_rng(41)
    hist = random_particle(cplx, 2, rng)
    m_free = ParticleModel(mass=1.3)
    m_wavy = ParticleModel(mass=1.3, potential=wavy_potential([1.0, 2.0]))
    g1 = residual_blocks(m_free, hist)["gluing"]
    g2 = residual_blocks(m_wavy, hist)["gluing"]
    assert np.array_equal(g1, g2)
    var = random_particle_variation(cplx, 2, rng)
    assert dS(m_free, hist, var).gluing == dS(m_wavy, hist, var).gluing


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_rigid_identities_property(seed):
    rng = np.random.default_rng(seed)
    phi = SO3.random(rng, 1.0)
    E = SO3.algebra_element(rng.standard_normal(3))
    u = 0.5 * (phi @ E + E @ phi.T)
    w = 0.5 * (E @ phi + phi.T @ E)
    assert np.max(np.abs(w - phi.T @ u @ phi)) <= 1e-12


# ---------------------------------------------------------------------------
# reduced models


def test_reduce_particle_constant_bulk():
    cplx = build_time_complex(4, 0.3)
    model = ParticleModel(mass=1.0)
    red = reduce_Sr(model, np.full((4, 1), 2.2), cplx)
    assert red.value == 0.0
    wavy = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    red2 = reduce_Sr(wavy, np.full((4, 1), 2.0), cplx)
    # constant bulk: only the potential terms survive, two per pair
    assert red2.value == pytest.approx(-2 * 0.3 * 3 * 2.0, abs=1e-14)


def test_reduce_particle_three_point_example():
    cplx = build_time_complex(3, 0.5)
    model = ParticleModel(mass=1.0)
    red = reduce_Sr(model, [0.0, 1.0, 2.0], cplx)
    assert red.value == pytest.approx(1.0, abs=1e-15)


def test_reduce_round_trip_particle():
    cplx = build_time_complex(6, 0.15)
    model = ParticleModel(mass=1.0, potential=HarmonicPotential(1.0))
    res = solve(model, cplx, [1.0], [0.4])
    red = reduce_Sr(model, res.history.qc, cplx)
    contracted = action(model, res.history, include_boundary_halves=False)
    assert abs(red.value - contracted) <= 1e-12
    assert np.max(np.abs(np.asarray(red.lifted) - res.history.qb[1:-1])) <= 1e-9


def test_reduce_round_trip_rigid():
    cplx = build_time_complex(5, 0.2)
    model = RigidBodyModel(SO3, np.array([1.2, 1.2, 1.2]))
    hist = uniform_rotation_history(model, cplx, np.array([0.6, 0.8, 0.0]), 0.5)
    red = reduce_Sr(model, list(hist.qc), cplx)
    contracted = action(model, hist, include_boundary_halves=False)
    assert abs(red.value - contracted) <= 1e-12
    for lifted, marker in zip(red.lifted, hist.qb[1:-1]):
        assert np.max(np.abs(lifted - marker)) <= 1e-9


def test_reduce_rigid_reports_both_branches():
    cplx = build_time_complex(2, 0.4)
    model = RigidBodyModel(SO3, np.array([1.0, 2.0, 3.0]))
    rng = np.random.default_rng(9)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    chi = SO3.algebra_element(2.5 * np.sqrt(2.0) * axis)  # 2.5 rad rotation
    bulk = [np.eye(3), SO3.exp(chi)]
    red = reduce_Sr(model, bulk, cplx)
    assert len(red.branches) == 1
    site_branches = red.branches[0]
    assert len(site_branches) == 2
    actions = [s for s, _ in site_branches]
    assert actions[0] <= actions[1]
    assert red.value == pytest.approx(actions[0])
    for _, mu in site_branches:
        assert np.max(np.abs(mu.T @ mu - np.eye(3))) <= 1e-10


def test_boundary_model_values():
    model = ParticleModel(mass=1.0)
    assert boundary_model_Sb(model, np.full((3, 1), 1.0), np.full((3, 1), 1.0), 0.5) == 0.0
    assert boundary_model_Sb(model, [[0.0]], [[1.0]], 0.5) == pytest.approx(0.5, abs=1e-15)


def test_boundary_model_free_solutions_match():
    cplx = build_time_complex(4, 0.25)
    model = ParticleModel(mass=1.0)
    res = solve(model, cplx, [0.0], [2.0])
    markers = boundary_model_solve(model, cplx, [0.0], [2.0])
    assert np.max(np.abs(markers - res.history.qb)) <= 1e-8


# ---------------------------------------------------------------------------
# Veselov comparison


def test_veselov_identity_chain():
    model = VeselovModel(SO3, np.eye(3))
    chain = [np.eye(3)] * 3
    assert veselov_action(model, chain, 0.5) == 0.0
    lam = np.diag([1.0, 2.0, 3.0])
    model2 = VeselovModel(SO3, lam)
    expected = 2 * (2 * 3 / 0.5) * (1 - np.trace(lam) / 3)
    assert veselov_action(model2, chain, 0.5) == pytest.approx(expected, abs=1e-12)


def test_veselov_vs_rigid_second_order_mismatch():
    out = veselov_vs_rigid(SO3, np.ones(3))
    assert out["order"] >= 2.0
    table = dict(veselov_vs_rigid(SO3, np.ones(3), steps=[1e-1, 1e-2, 1e-3])["table"])
    ratios = [table[s] / s**2 for s in (1e-1, 1e-2, 1e-3)]
    assert max(ratios) <= 2 * ratios[0] + 1e-9


# ---------------------------------------------------------------------------
# Jacobian spot check


def test_rigid_jacobian_matches_directional_fd():
    cplx = build_time_complex(3, 0.3)
    model = RigidBodyModel(SO3, np.array([1.0, 1.5, 2.0]))
    rng = np.random.default_rng(19)
    hist = random_rigid(cplx, rng, scale=0.3)
    J = mech1d._rigid_jacobian(model, hist)
    size = J.shape[0]
    for _ in range(5):
        dx = rng.standard_normal(size)
        eps = 1e-5
        rp = mech1d._rigid_residual_vector(model, mech1d._rigid_apply(model, hist, eps * dx))
        rm = mech1d._rigid_residual_vector(model, mech1d._rigid_apply(model, hist, -eps * dx))
        fd = (rp - rm) / (2 * eps)
        assert np.max(np.abs(J @ dx - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))
