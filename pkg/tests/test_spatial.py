import numpy as np
import pytest
import scipy.linalg

from loopdyn import spatial
from loopdyn.errors import SingularRetractionError
from loopdyn.spatial import (
    Se3Placement,
    action_matrix,
    dual_action_matrix,
    exp3,
    exp6,
    force_cross_dual,
    jlog6,
    log6,
    motion_cross,
    motion_cross_matrix,
    se3_right_jacobian,
    se3_right_jacobian_inv,
    skew,
)

RNG = np.random.default_rng(0)


def random_twist(rng, scale=1.0):
    return rng.uniform(-scale, scale, 6)


def test_log6_identity_is_zero():
    np.testing.assert_allclose(log6(Se3Placement.identity()), np.zeros(6), atol=1e-15)


def test_log6_pure_translation():
    M = Se3Placement(np.eye(3), [0.1, 0.0, 0.0])
    np.testing.assert_allclose(log6(M), [0.1, 0, 0, 0, 0, 0], atol=1e-15)


def test_log6_matches_dense_matrix_logarithm():
    # rotation pi/3 about z, translation (0.2, 0, 0), checked on the 4x4
    # homogeneous form against scipy's matrix logarithm
    M = Se3Placement(exp3([0, 0, np.pi / 3]), [0.2, 0.0, 0.0])
    xi = log6(M)
    L = scipy.linalg.logm(M.homogeneous())
    np.testing.assert_allclose(xi[:3], np.real(L[:3, 3]), atol=1e-10)
    np.testing.assert_allclose(skew(xi[3:]), np.real(L[:3, :3]), atol=1e-10)


def test_exp_log_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w = rng.standard_normal(3)
        w *= rng.uniform(0, np.pi - 1e-3) / np.linalg.norm(w)
        M = Se3Placement(exp3(w), rng.standard_normal(3))
        M2 = exp6(log6(M))
        np.testing.assert_allclose(M2.rotation, M.rotation, atol=1e-10)
        np.testing.assert_allclose(M2.translation, M.translation, atol=1e-10)


def test_log6_rejects_near_pi():
    M = Se3Placement(exp3([np.pi - 1e-9, 0, 0]), np.zeros(3))
    with pytest.raises(SingularRetractionError):
        log6(M)


def test_placement_group_axioms():
    rng = np.random.default_rng(2)
    for _ in range(50):
        A = Se3Placement.random(rng)
        B = Se3Placement.random(rng)
        C = Se3Placement.random(rng)
        AB_C = (A * B) * C
        A_BC = A * (B * C)
        np.testing.assert_allclose(AB_C.rotation, A_BC.rotation, atol=1e-12)
        np.testing.assert_allclose(AB_C.translation, A_BC.translation, atol=1e-12)
        I = A * A.inverse()
        assert I.is_identity(tol=1e-12)
        assert abs(np.linalg.det(A.rotation) - 1.0) < 1e-12


def test_action_matrix_is_group_homomorphism():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        A = Se3Placement.random(rng)
        B = Se3Placement.random(rng)
        np.testing.assert_allclose(
            action_matrix(A * B), action_matrix(A) @ action_matrix(B), atol=1e-10)


def test_dual_pairing_invariance():
    rng = np.random.default_rng(4)
    for _ in range(200):
        M = Se3Placement.random(rng)
        f = rng.standard_normal(6)
        m = rng.standard_normal(6)
        lhs = (dual_action_matrix(M) @ f) @ (action_matrix(M) @ m)
        np.testing.assert_allclose(lhs, f @ m, atol=1e-10)


def test_motion_cross_trivial_cases():
    assert np.allclose(motion_cross(np.zeros(6), RNG.standard_normal(6)), 0.0)
    nu = np.array([0, 0, 0, 0, 0, 1.0])
    m = np.array([0, 0, 0, 1.0, 0, 0])
    np.testing.assert_allclose(motion_cross(nu, m), [0, 0, 0, 0, 1.0, 0], atol=1e-15)


def test_motion_cross_matches_matrix_form():
    rng = np.random.default_rng(5)
    for _ in range(100):
        nu = rng.standard_normal(6)
        m = rng.standard_normal(6)
        np.testing.assert_allclose(motion_cross(nu, m), motion_cross_matrix(nu) @ m,
                                   atol=1e-12)
        # bilinear and antisymmetric
        np.testing.assert_allclose(motion_cross(nu, m), -motion_cross(m, nu), atol=1e-12)


def test_motion_cross_is_adjoint_derivative():
    # d/dt Ad(exp(t a)) b at t = 0 equals a x b, by finite difference
    rng = np.random.default_rng(6)
    h = 1e-6
    for _ in range(20):
        a = rng.standard_normal(6)
        b = rng.standard_normal(6)
        fd = (action_matrix(exp6(h * a)) @ b - action_matrix(exp6(-h * a)) @ b) / (2 * h)
        np.testing.assert_allclose(motion_cross(a, b), fd, atol=1e-8)


def test_force_cross_dual_trivial():
    assert np.allclose(force_cross_dual(np.zeros(6)), 0.0)
    f = np.array([0, 0, 1.0, 0, 0, 0])
    C = force_cross_dual(f)
    S = skew([0, 0, 1.0])
    np.testing.assert_allclose(C[:3, 3:], S, atol=1e-15)
    np.testing.assert_allclose(C[3:, :3], S, atol=1e-15)
    assert np.allclose(C[:3, :3], 0.0)
    assert np.allclose(C[3:, 3:], 0.0)


def test_force_cross_dual_matches_transform_derivative():
    # nu x* f = d/dt X*(exp(t nu)) f at t = 0, and equals -<f>* nu
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(20):
        nu = rng.standard_normal(6)
        f = rng.standard_normal(6)
        fd = (dual_action_matrix(exp6(h * nu)) @ f
              - dual_action_matrix(exp6(-h * nu)) @ f) / (2 * h)
        np.testing.assert_allclose(-force_cross_dual(f) @ nu, fd, atol=1e-8)


def test_se3_right_jacobian_finite_difference():
    rng = np.random.default_rng(8)
    h = 1e-7
    for _ in range(20):
        xi = random_twist(rng, 1.2)
        Jr = se3_right_jacobian(xi)
        fd = np.zeros((6, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            P = exp6(xi).inverse() * exp6(xi + e)
            fd[:, k] = log6(P) / h
        np.testing.assert_allclose(Jr, fd, atol=1e-5)
        np.testing.assert_allclose(se3_right_jacobian_inv(xi) @ Jr, np.eye(6), atol=1e-9)


def test_jlog6_finite_difference():
    rng = np.random.default_rng(9)
    h = 1e-7
    for _ in range(20):
        M = Se3Placement.random(rng)
        J = jlog6(M)
        fd = np.zeros((6, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            fd[:, k] = (log6(M * exp6(e)) - log6(M * exp6(-e))) / (2 * h)
        np.testing.assert_allclose(J, fd, atol=1e-5)
