import numpy as np
import pytest

from loopdyn import closure as clo
from loopdyn import condyn, rba
from loopdyn import model as mod
from loopdyn.closure import ClosureConstraint
from loopdyn.condyn import ConstraintSet
from loopdyn.model import WORLD
from loopdyn.spatial import Se3Placement, action_matrix, exp3
from conftest import random_config

from pathlib import Path

MODEL_DIR = Path(__file__).resolve().parents[1] / "src" / "loopdyn" / "models"


@pytest.fixture(scope="module")
def fourbar():
    return mod.load_model(MODEL_DIR / "fourbar.yaml")


@pytest.fixture(scope="module")
def fourbar_cs(fourbar):
    return ConstraintSet(clo.model_closures(fourbar))


def fourbar_state(fourbar, fourbar_cs, rng, vel_scale=1.0):
    q = mod.integrate_config(fourbar, fourbar.reference_config(),
                             0.4 * rng.standard_normal(fourbar.nv))
    q = condyn.project_to_manifold(fourbar, fourbar_cs, q)
    v = vel_scale * rng.standard_normal(fourbar.nv)
    return q, v


def fd_config(m, f, q, h=1e-6):
    y0 = np.atleast_1d(f(q))
    out = np.zeros(y0.shape + (m.nv,))
    for k in range(m.nv):
        e = np.zeros(m.nv)
        e[k] = h
        out[..., k] = (f(mod.integrate_config(m, q, e))
                       - f(mod.integrate_config(m, q, -e))) / (2 * h)
    return out


def fd_vector(f, x, h=1e-6):
    y0 = np.atleast_1d(f(x))
    out = np.zeros(y0.shape + (len(x),))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        out[..., k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# residual

def test_residual_zero_at_closed_configuration(fourbar, fourbar_cs):
    cache = rba.forward_kinematics(fourbar, fourbar.reference_config())
    for c in fourbar_cs:
        np.testing.assert_allclose(clo.constraint_residual(fourbar, cache, c),
                                   np.zeros(6), atol=1e-12)


def test_residual_pure_translation_offset(flyer_arm):
    # anchor placed so that F1 sits at +0.01 z in F2's coordinates
    q = flyer_arm.neutral_config()
    cache = rba.forward_kinematics(flyer_arm, q)
    M1 = rba.frame_placement(flyer_arm, cache, "hand")
    anchor = M1 * Se3Placement(np.eye(3), [0, 0, -0.01])
    c = ClosureConstraint.foot_ground(flyer_arm, "hand", anchor)
    r = clo.constraint_residual(flyer_arm, cache, c)
    np.testing.assert_allclose(r, [0, 0, 0.01, 0, 0, 0], atol=1e-12)


def test_residual_small_after_projection(fourbar, fourbar_cs):
    rng = np.random.default_rng(0)
    for _ in range(10):
        q, _ = fourbar_state(fourbar, fourbar_cs, rng)
        cache = rba.forward_kinematics(fourbar, q)
        for c in fourbar_cs:
            assert np.abs(clo.constraint_residual(fourbar, cache, c)).max() < 1e-8


# ---------------------------------------------------------------------------
# velocity

def test_velocity_zero_cases(fourbar, fourbar_cs, flyer_arm):
    cache = rba.forward_kinematics(fourbar, fourbar.reference_config())
    for c in fourbar_cs:
        np.testing.assert_allclose(clo.constraint_velocity(fourbar, cache, c),
                                   np.zeros(6), atol=1e-15)
    # both frames on one rigid body: any motion gives zero relative velocity
    c_same = ClosureConstraint(
        "same-body", joint1=0, placement1=Se3Placement(np.eye(3), [0.1, 0, 0]),
        joint2=0, placement2=Se3Placement(exp3([0, 0.4, 0]), [0, 0.2, 0]))
    rng = np.random.default_rng(1)
    q = random_config(flyer_arm, rng)
    v = rng.standard_normal(flyer_arm.nv)
    fa_cache = rba.forward_kinematics(flyer_arm, q, v)
    np.testing.assert_allclose(
        clo.constraint_velocity(flyer_arm, fa_cache, c_same), np.zeros(6), atol=1e-12)


def test_velocity_matches_residual_flow(fourbar, fourbar_cs):
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(5):
        q, v = fourbar_state(fourbar, fourbar_cs, rng)
        cache = rba.forward_kinematics(fourbar, q, v)
        for c in fourbar_cs:
            nu = clo.constraint_velocity(fourbar, cache, c)
            rp = clo.constraint_residual(
                fourbar, rba.forward_kinematics(fourbar, mod.integrate_config(fourbar, q, h * v)), c)
            rm = clo.constraint_residual(
                fourbar, rba.forward_kinematics(fourbar, mod.integrate_config(fourbar, q, -h * v)), c)
            np.testing.assert_allclose(nu, (rp - rm) / (2 * h), atol=1e-5)


# ---------------------------------------------------------------------------
# acceleration split

def test_static_drift_is_zero(fourbar, fourbar_cs):
    cache = rba.forward_kinematics(fourbar, fourbar.reference_config())
    for c in fourbar_cs:
        _, a0 = clo.constraint_acc_split(fourbar, cache, c)
        np.testing.assert_allclose(a0, np.zeros(6), atol=1e-15)


def test_same_subtree_jacobian_columns_vanish(flyer_arm):
    # frames on seg1 and seg2: only the elbow can move them relative to each
    # other, so the base and shoulder columns of J_c are zero
    rng = np.random.default_rng(3)
    q = random_config(flyer_arm, rng)
    cache = rba.forward_kinematics(flyer_arm, q)
    c = ClosureConstraint(
        "intra-arm", joint1=2, placement1=Se3Placement(np.eye(3), [0.1, 0, 0]),
        joint2=1, placement2=Se3Placement(np.eye(3), [0, 0, -0.2]))
    J = clo.constraint_jacobian(flyer_arm, cache, c)
    np.testing.assert_allclose(J[:, :7], 0.0, atol=1e-12)
    assert np.abs(J[:, 7]).max() > 1e-3


def test_acceleration_split_consistency(fourbar, fourbar_cs):
    # a_c evaluated with accelerations equals J qdd + a0 for any qdd
    rng = np.random.default_rng(4)
    for _ in range(5):
        q, v = fourbar_state(fourbar, fourbar_cs, rng)
        qdd = rng.standard_normal(fourbar.nv)
        cache0 = rba.forward_kinematics(fourbar, q, v)
        cache_a = rba.forward_kinematics(fourbar, q, v, qdd)
        for c in fourbar_cs:
            J, a0 = clo.constraint_acc_split(fourbar, cache0, c)
            a_c = clo.constraint_acceleration(fourbar, cache_a, c)
            np.testing.assert_allclose(J @ qdd + a0, a_c, atol=1e-10)


def test_drift_matches_velocity_flow(fourbar, fourbar_cs):
    # a0 = d(nu_c)/dt along the zero-acceleration flow
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(5):
        q, v = fourbar_state(fourbar, fourbar_cs, rng)
        cache0 = rba.forward_kinematics(fourbar, q, v)
        for c in fourbar_cs:
            _, a0 = clo.constraint_acc_split(fourbar, cache0, c)
            vp = clo.constraint_velocity(
                fourbar, rba.forward_kinematics(fourbar, mod.integrate_config(fourbar, q, h * v), v), c)
            vm = clo.constraint_velocity(
                fourbar, rba.forward_kinematics(fourbar, mod.integrate_config(fourbar, q, -h * v), v), c)
            np.testing.assert_allclose(a0, (vp - vm) / (2 * h), atol=1e-5)


def test_jacobian_matches_residual_finite_difference(fourbar, fourbar_cs):
    rng = np.random.default_rng(6)
    for _ in range(5):
        q, _ = fourbar_state(fourbar, fourbar_cs, rng)
        cache = rba.forward_kinematics(fourbar, q)
        for c in fourbar_cs:
            J = clo.constraint_jacobian(fourbar, cache, c)
            fd = fd_config(fourbar,
                           lambda qq: clo.constraint_residual(
                               fourbar, rba.forward_kinematics(fourbar, qq), c), q)
            np.testing.assert_allclose(J, fd, atol=1e-5)


def test_swap_consistency(fourbar, fourbar_cs):
    # swapping the frame roles negates-and-transforms all quantities by X21
    rng = np.random.default_rng(7)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    qdd = rng.standard_normal(fourbar.nv)
    cache = rba.forward_kinematics(fourbar, q, v, qdd)
    for c in fourbar_cs:
        cs = ClosureConstraint("swapped", c.joint2, c.placement2, c.joint1, c.placement1)
        M1 = cache.oM[c.joint1] * c.placement1
        M2 = cache.oM[c.joint2] * c.placement2
        X21 = action_matrix((M2.inverse() * M1))
        for fn in (clo.constraint_velocity, clo.constraint_acceleration):
            orig = fn(fourbar, cache, c)
            swapped = fn(fourbar, cache, cs)
            np.testing.assert_allclose(swapped, -X21 @ orig, atol=1e-9)
        r = clo.constraint_residual(fourbar, cache, c)
        rs = clo.constraint_residual(fourbar, cache, cs)
        np.testing.assert_allclose(rs, -X21 @ r, atol=1e-9)


# ---------------------------------------------------------------------------
# acceleration derivatives

def test_acc_derivatives_zero_when_static(fourbar, fourbar_cs):
    q = fourbar.reference_config()
    cache = rba.forward_kinematics(fourbar, q)
    kd = rba.kinematics_derivatives(fourbar, cache)
    for c in fourbar_cs:
        da_dq, da_dv = clo.acc_derivatives(fourbar, cache, kd, c)
        np.testing.assert_allclose(da_dq, 0.0, atol=1e-12)


def test_acc_derivatives_zero_for_coincident_same_body(flyer_arm):
    rng = np.random.default_rng(8)
    q = random_config(flyer_arm, rng)
    v = rng.standard_normal(flyer_arm.nv)
    qdd = rng.standard_normal(flyer_arm.nv)
    cache = rba.forward_kinematics(flyer_arm, q, v, qdd)
    kd = rba.kinematics_derivatives(flyer_arm, cache)
    P = Se3Placement(exp3([0.1, 0.2, 0.3]), [0.05, 0, 0.02])
    c = ClosureConstraint("coincident", joint1=1, placement1=P, joint2=1, placement2=P)
    da_dq, da_dv = clo.acc_derivatives(flyer_arm, cache, kd, c)
    np.testing.assert_allclose(da_dq, 0.0, atol=1e-12)
    np.testing.assert_allclose(da_dv, 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_acc_derivatives_finite_difference(fourbar, fourbar_cs, seed):
    rng = np.random.default_rng(100 + seed)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    qdd = rng.standard_normal(fourbar.nv)
    cache = rba.forward_kinematics(fourbar, q, v, qdd)
    kd = rba.kinematics_derivatives(fourbar, cache)
    for c in fourbar_cs:
        da_dq, da_dv = clo.acc_derivatives(fourbar, cache, kd, c)
        fd_q = fd_config(fourbar, lambda qq: clo.constraint_acceleration(
            fourbar, rba.forward_kinematics(fourbar, qq, v, qdd), c), q)
        fd_v = fd_vector(lambda vv: clo.constraint_acceleration(
            fourbar, rba.forward_kinematics(fourbar, q, vv, qdd), c), v)
        tol_q = 1e-5 * max(1.0, np.abs(fd_q).max())
        tol_v = 1e-5 * max(1.0, np.abs(fd_v).max())
        np.testing.assert_allclose(da_dq, fd_q, atol=tol_q)
        np.testing.assert_allclose(da_dv, fd_v, atol=tol_v)


def test_acc_derivative_dv_is_linear_in_v(fourbar, fourbar_cs):
    rng = np.random.default_rng(9)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    qdd = np.zeros(fourbar.nv)
    dv_dir = rng.standard_normal(fourbar.nv)
    for c in fourbar_cs:
        cache1 = rba.forward_kinematics(fourbar, q, v, qdd)
        kd1 = rba.kinematics_derivatives(fourbar, cache1)
        _, da_dv1 = clo.acc_derivatives(fourbar, cache1, kd1, c)
        cache2 = rba.forward_kinematics(fourbar, q, 2 * v, qdd)
        kd2 = rba.kinematics_derivatives(fourbar, cache2)
        _, da_dv2 = clo.acc_derivatives(fourbar, cache2, kd2, c)
        np.testing.assert_allclose(da_dv2 @ dv_dir, 2 * (da_dv1 @ dv_dir), atol=1e-10)


# ---------------------------------------------------------------------------
# inverse-dynamics force derivative

def _total_id_fd(m, constraints, c, f, q, v, qdd):
    """FD of rnea with the configuration-dependent constraint forces."""
    def g(qq):
        cache = rba.forward_kinematics(m, qq)
        fext = np.zeros((len(m.joints), 6))
        for jid, phi in clo.constraint_joint_forces(m, cache, c, f).items():
            fext[jid] += phi
        return rba.rnea(m, qq, v, qdd, fext)
    return fd_config(m, g, q)


def test_id_force_derivative_zero_force(fourbar, fourbar_cs):
    q = fourbar.reference_config()
    cache = rba.forward_kinematics(fourbar, q)
    kd = rba.kinematics_derivatives(fourbar, cache)
    for c in fourbar_cs:
        D = clo.id_force_derivative(fourbar, cache, kd, c, np.zeros(6))
        np.testing.assert_allclose(D, 0.0, atol=1e-15)


def test_id_force_derivative_same_joint_reduces_to_jacobian_term(flyer_arm):
    # both frames on one body: phi2's transform is constant, the whole
    # configuration dependence sits in the fixed-force rnea derivative
    m = flyer_arm
    rng = np.random.default_rng(10)
    q = random_config(m, rng)
    v = rng.standard_normal(m.nv)
    qdd = rng.standard_normal(m.nv)
    f = rng.standard_normal(6)
    c = ClosureConstraint(
        "same-joint", joint1=2, placement1=Se3Placement(np.eye(3), [0.1, 0, 0]),
        joint2=2, placement2=Se3Placement(exp3([0, 0.3, 0]), [0, 0.1, 0]))
    cache = rba.forward_kinematics(m, q, v, qdd)
    kd = rba.kinematics_derivatives(m, cache)
    D = clo.id_force_derivative(m, cache, kd, c, f)
    np.testing.assert_allclose(D, 0.0, atol=1e-10)
    fext = np.zeros((len(m.joints), 6))
    for jid, phi in clo.constraint_joint_forces(m, cache, c, f).items():
        fext[jid] += phi
    dq_fixed, _, _ = rba.rnea_derivatives(m, q, v, qdd, fext)
    fd = _total_id_fd(m, None, c, f, q, v, qdd)
    np.testing.assert_allclose(dq_fixed + D, fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


@pytest.mark.parametrize("seed", [0, 1])
def test_id_force_derivative_finite_difference(fourbar, fourbar_cs, seed):
    rng = np.random.default_rng(200 + seed)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    qdd = rng.standard_normal(fourbar.nv)
    f = 5.0 * rng.standard_normal(6)
    cache = rba.forward_kinematics(fourbar, q, v, qdd)
    kd = rba.kinematics_derivatives(fourbar, cache)
    for c in fourbar_cs:
        fext = np.zeros((len(fourbar.joints), 6))
        for jid, phi in clo.constraint_joint_forces(fourbar, cache, c, f).items():
            fext[jid] += phi
        dq_fixed, _, _ = rba.rnea_derivatives(fourbar, q, v, qdd, fext)
        D = clo.id_force_derivative(fourbar, cache, kd, c, f)
        fd = _total_id_fd(fourbar, fourbar_cs, c, f, q, v, qdd)
        np.testing.assert_allclose(dq_fixed + D, fd,
                                   atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_constraint_forces_realize_jacobian_transpose(fourbar, fourbar_cs):
    # sum_k J_k^T phi_k equals J_c^T f, linking Eq.-17-style forces to the
    # stacked Jacobian
    rng = np.random.default_rng(11)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    f = rng.standard_normal(6)
    cache = rba.forward_kinematics(fourbar, q, v)
    for c in fourbar_cs:
        J = clo.constraint_jacobian(fourbar, cache, c)
        tau = np.zeros(fourbar.nv)
        for jid, phi in clo.constraint_joint_forces(fourbar, cache, c, f).items():
            tau += rba.joint_local_jacobian(fourbar, cache, jid).T @ phi
        np.testing.assert_allclose(tau, J.T @ f, atol=1e-10)
