import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfields.liegroup import (
    BranchAmbiguityError,
    MatrixGroup,
    so_group,
    su_group,
)

GROUPS = [so_group(3), su_group(2), so_group(4), su_group(3)]
IDS = ["so3", "su2", "so4", "su3"]


@pytest.fixture(params=GROUPS, ids=IDS)
def group(request) -> MatrixGroup:
    return request.param


def test_basis_orthonormal(group):
    d = group.dim
    gram = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            gram[i, j] = group.pairing_scale * np.real(
                np.trace(group.basis[i].conj().T @ group.basis[j])
            )
    assert np.allclose(gram, np.eye(d), atol=1e-12)


def test_algebra_dim(group):
    n = group.size
    expected = n * (n - 1) // 2 if group.tag == "SO" else n * n - 1
    assert group.dim == expected


def test_coefficients_roundtrip(group):
    rng = np.random.default_rng(7)
    c = rng.standard_normal(group.dim)
    xi = group.algebra_element(c)
    assert np.allclose(group.coefficients(xi), c, atol=1e-12)


def test_random_members(group):
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = group.random(rng, scale=0.8)
        assert group.is_member(g)
        assert np.allclose(g @ group.inv(g), np.eye(group.size), atol=1e-12)


def test_theta_small_rotation_so3():
    g3 = so_group(3)
    # exp(eps f_1) pairs to eps + O(eps^3) in the first slot
    for eps in (1e-2, 1e-3):
        th = g3.theta_components(g3.exp(eps * g3.basis[0]))
        assert abs(th[0] - eps) <= 2.0 * eps**3
    # third-order error confirmed by the ratio between the two eps values
    e1 = abs(g3.theta_components(g3.exp(1e-2 * g3.basis[0]))[0] - 1e-2)
    e2 = abs(g3.theta_components(g3.exp(1e-3 * g3.basis[0]))[0] - 1e-3)
    assert e2 < e1 * 1e-2


def test_theta_equals_scaled_algebra_part(group):
    rng = np.random.default_rng(3)
    g = group.random(rng, scale=0.4)
    th = group.theta_components(g)
    coeff = group.coefficients(group.proj_algebra(g))
    # -Re Tr(f_i g) reads off the algebra part up to the pairing scale
    assert np.allclose(th, coeff / group.pairing_scale, atol=1e-12)


def test_theta_identity_zero(group):
    assert np.allclose(group.theta_components(group.identity()), 0.0, atol=1e-15)


def test_log_exp_roundtrip_bulk(group):
    rng = np.random.default_rng(11)
    n_draws = 250  # x4 groups = 1000 round trips overall
    for _ in range(n_draws):
        c = rng.standard_normal(group.dim)
        c *= 0.9 * np.pi * rng.uniform(0.01, 0.999) / np.linalg.norm(c)
        xi = group.algebra_element(c)
        g = group.exp(xi)
        # stay inside the principal branch of this group's exponential
        try:
            back = group.log(g)
        except BranchAmbiguityError:
            assert group.norm(xi) > 1.0  # only large draws may trip
            continue
        assert np.allclose(back, xi, atol=5e-13 * max(1.0, group.norm(xi)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_log_exp_roundtrip_su2_hypothesis(coeffs):
    su2 = su_group(2)
    xi = su2.algebra_element(np.array(coeffs))
    assert np.allclose(su2.log(su2.exp(xi)), xi, atol=1e-12)


def test_branch_ambiguity_raises():
    g3 = so_group(3)
    # rotation by pi about the x axis: eigenvalue angle exactly pi
    with pytest.raises(BranchAmbiguityError):
        g3.log(np.diag([1.0, -1.0, -1.0]))
    su2 = su_group(2)
    with pytest.raises(BranchAmbiguityError):
        su2.log(-np.eye(2, dtype=complex))


def test_frac_power(group):
    rng = np.random.default_rng(5)
    g = group.random(rng, scale=0.5)
    root = group.frac_power(g, 0.25)
    assert group.is_member(root)
    assert np.allclose(np.linalg.matrix_power(root, 4), g, atol=1e-12)


def test_adjoint_transport_composition(group):
    rng = np.random.default_rng(9)
    g1 = group.random(rng)
    g2 = group.random(rng)
    xi = group.random_algebra(rng)
    lhs = group.adjoint_transport(g1, group.adjoint_transport(g2, xi))
    rhs = group.adjoint_transport(g1 @ g2, xi)
    assert np.allclose(lhs, rhs, atol=1e-12)
    # inverse transport undoes it
    back = group.adjoint_transport(g1, group.adjoint_transport(g1, xi), inverse=True)
    assert np.allclose(back, xi, atol=1e-12)


def test_adjoint_preserves_norm(group):
    rng = np.random.default_rng(13)
    g = group.random(rng)
    xi = group.random_algebra(rng)
    assert abs(group.norm(group.adjoint_transport(g, xi)) - group.norm(xi)) < 1e-10


def test_project_idempotent_and_repairs(group):
    rng = np.random.default_rng(17)
    g = group.random(rng)
    assert np.allclose(group.project(g), g, atol=1e-12)
    noisy = g + 1e-8 * rng.standard_normal(g.shape)
    fixed = group.project(noisy)
    assert group.is_member(fixed, tol=1e-12)


def test_long_product_drift_control(group):
    rng = np.random.default_rng(23)
    steps = [group.random(rng, scale=0.3) for _ in range(200)]
    acc = group.identity()
    for i in range(10_000):
        acc = acc @ steps[i % len(steps)]
        if (i + 1) % 256 == 0:
            acc = group.project(acc)
    acc = group.project(acc)
    err = np.linalg.norm(acc.conj().T @ acc - np.eye(group.size))
    assert err < 1e-12


def test_bracket_closes(group):
    rng = np.random.default_rng(29)
    x = group.random_algebra(rng)
    y = group.random_algebra(rng)
    b = group.bracket(x, y)
    # closed: expanding in the basis reproduces the bracket
    assert np.allclose(group.algebra_element(group.coefficients(b)), b, atol=1e-10)
