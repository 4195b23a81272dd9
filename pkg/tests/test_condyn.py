import numpy as np
import pytest

from loopdyn import closure as clo
from loopdyn import condyn, rba
from loopdyn import model as mod
from loopdyn.closure import ClosureConstraint
from loopdyn.condyn import ConstraintSet
from loopdyn.errors import ProjectionError, StaleSolutionError
from loopdyn.model import MechState
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
    return q, vel_scale * rng.standard_normal(fourbar.nv)


def test_unconstrained_matches_dense_solve(flyer_arm):
    m = flyer_arm
    rng = np.random.default_rng(0)
    q = random_config(m, rng)
    v = rng.standard_normal(m.nv)
    u = rng.standard_normal(m.nu)
    sol = condyn.constrained_forward_dynamics(m, ConstraintSet(), q, v, u)
    M = rba.joint_space_inertia(m, q)
    b = rba.nonlinear_effects(m, q, v)
    np.testing.assert_allclose(sol.ddq, np.linalg.solve(M, m.actuation_matrix() @ u - b),
                               atol=1e-10)
    assert sol.lam.size == 0


def test_pendulum_equilibrium(pendulum):
    sol = condyn.constrained_forward_dynamics(
        pendulum, ConstraintSet(), np.zeros(1), np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(sol.ddq, [0.0], atol=1e-12)


def test_fourbar_static_compensation(fourbar, fourbar_cs):
    # gravity-compensating controls give zero acceleration and forces that
    # balance gravity in the stationarity identity
    q = fourbar.reference_config()
    u = condyn.quasi_static_control(fourbar, fourbar_cs, q)
    sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q,
                                              np.zeros(fourbar.nv), u)
    np.testing.assert_allclose(sol.ddq, 0.0, atol=1e-8)
    b = rba.nonlinear_effects(fourbar, q, np.zeros(fourbar.nv))
    M = rba.joint_space_inertia(fourbar, q)
    stat = M @ sol.ddq + b - sol.tau - sol.jac.T @ sol.lam
    np.testing.assert_allclose(stat, 0.0, atol=1e-9)
    assert np.abs(sol.lam).max() > 0.1  # the weld carries gravity load


def test_kkt_residual_and_constraint_satisfaction(fourbar, fourbar_cs):
    rng = np.random.default_rng(1)
    for _ in range(10):
        q, v = fourbar_state(fourbar, fourbar_cs, rng)
        u = rng.standard_normal(fourbar.nu)
        sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
        assert sol.kkt_residual < 1e-9
        np.testing.assert_allclose(sol.jac @ sol.ddq + sol.a0, 0.0, atol=1e-9)


def test_redundant_duplicate_constraint(fourbar, fourbar_cs):
    rng = np.random.default_rng(2)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    u = rng.standard_normal(fourbar.nu)
    ref = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
    dup = ConstraintSet(list(fourbar_cs) + list(fourbar_cs))
    sol = condyn.constrained_forward_dynamics(fourbar, dup, q, v, u)
    np.testing.assert_allclose(sol.ddq, ref.ddq, atol=1e-6)
    # the duplicated weld shares the load of the single-constraint run
    total = sol.lam[:6] + sol.lam[6:]
    np.testing.assert_allclose(total, ref.lam, atol=1e-4 * max(1.0, np.abs(ref.lam).max()))


def test_gauss_principle_minimality(fourbar, fourbar_cs):
    rng = np.random.default_rng(3)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    u = rng.standard_normal(fourbar.nu)
    sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
    M = rba.joint_space_inertia(fourbar, q)
    b = rba.nonlinear_effects(fourbar, q, v)
    ddq_free = np.linalg.solve(M, sol.tau - b)

    def obj(a):
        d = a - ddq_free
        return d @ M @ d

    base = obj(sol.ddq)
    # random feasible directions from the Jacobian null space
    _, s, VT = np.linalg.svd(sol.jac)
    null = VT[np.sum(s > 1e-9):]
    assert null.shape[0] >= 1
    for _ in range(100):
        d = null.T @ rng.standard_normal(null.shape[0])
        eps = rng.uniform(0.01, 1.0)
        assert obj(sol.ddq + eps * d) >= base - 1e-9


def test_stationarity_identity(fourbar, fourbar_cs):
    rng = np.random.default_rng(4)
    for _ in range(5):
        q, v = fourbar_state(fourbar, fourbar_cs, rng)
        u = rng.standard_normal(fourbar.nu)
        sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
        M = rba.joint_space_inertia(fourbar, q)
        b = rba.nonlinear_effects(fourbar, q, v)
        np.testing.assert_allclose(M @ sol.ddq + b - sol.tau - sol.jac.T @ sol.lam,
                                   0.0, atol=1e-9)


# ---------------------------------------------------------------------------
# derivatives

def fd_dynamics(m, cs, q, v, u, h=1e-6):
    nv, nu = m.nv, m.nu
    mdim = cs.dim
    blocks = {k: np.zeros((nv, d)) for k, d in
              (("q", nv), ("v", nv), ("u", nu))}
    lblocks = {k: np.zeros((mdim, d)) for k, d in
               (("q", nv), ("v", nv), ("u", nu))}

    def run(qq, vv, uu):
        s = condyn.constrained_forward_dynamics(m, cs, qq, vv, uu)
        return s.ddq, s.lam

    for k in range(nv):
        e = np.zeros(nv)
        e[k] = h
        ap, lp = run(mod.integrate_config(m, q, e), v, u)
        am, lm = run(mod.integrate_config(m, q, -e), v, u)
        blocks["q"][:, k] = (ap - am) / (2 * h)
        lblocks["q"][:, k] = (lp - lm) / (2 * h)
        ap, lp = run(q, v + e, u)
        am, lm = run(q, v - e, u)
        blocks["v"][:, k] = (ap - am) / (2 * h)
        lblocks["v"][:, k] = (lp - lm) / (2 * h)
    for k in range(nu):
        e = np.zeros(nu)
        e[k] = h
        ap, lp = run(q, v, u + e)
        am, lm = run(q, v, u - e)
        blocks["u"][:, k] = (ap - am) / (2 * h)
        lblocks["u"][:, k] = (lp - lm) / (2 * h)
    return blocks, lblocks


def assert_block(analytic, fd, tol=1e-5):
    scale = max(1.0, np.abs(fd).max())
    np.testing.assert_allclose(analytic, fd, atol=tol * scale)


def test_unconstrained_ddq_du_is_Minv_S(flyer_arm):
    m = flyer_arm
    rng = np.random.default_rng(5)
    q = random_config(m, rng)
    v = rng.standard_normal(m.nv)
    u = rng.standard_normal(m.nu)
    sol = condyn.constrained_forward_dynamics(m, ConstraintSet(), q, v, u)
    d = condyn.constrained_dynamics_derivatives(m, ConstraintSet(), sol)
    M = rba.joint_space_inertia(m, q)
    np.testing.assert_allclose(d.ddq_du, np.linalg.solve(M, m.actuation_matrix()),
                               atol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fourbar_derivatives_finite_difference(fourbar, fourbar_cs, seed):
    rng = np.random.default_rng(300 + seed)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    u = rng.standard_normal(fourbar.nu)
    sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
    d = condyn.constrained_dynamics_derivatives(fourbar, fourbar_cs, sol)
    fd, lfd = fd_dynamics(fourbar, fourbar_cs, q, v, u)
    assert_block(d.ddq_dq, fd["q"])
    assert_block(d.ddq_dv, fd["v"])
    assert_block(d.ddq_du, fd["u"])
    assert_block(d.lam_dq, lfd["q"])
    assert_block(d.lam_dv, lfd["v"])
    assert_block(d.lam_du, lfd["u"])


def test_flyer_arm_contact_derivatives(flyer_arm):
    # ground-contact constraint (world-anchored F2) through the same path
    m = flyer_arm
    rng = np.random.default_rng(6)
    q = random_config(m, rng, scale=0.3)
    cache = rba.forward_kinematics(m, q)
    anchor = rba.frame_placement(m, cache, "hand")
    cs = ConstraintSet([ClosureConstraint.foot_ground(m, "hand", anchor)])
    v = rng.standard_normal(m.nv)
    u = rng.standard_normal(m.nu)
    sol = condyn.constrained_forward_dynamics(m, cs, q, v, u)
    d = condyn.constrained_dynamics_derivatives(m, cs, sol)
    fd, lfd = fd_dynamics(m, cs, q, v, u)
    assert_block(d.ddq_dq, fd["q"])
    assert_block(d.ddq_dv, fd["v"])
    assert_block(d.ddq_du, fd["u"])
    assert_block(d.lam_dq, lfd["q"])
    assert_block(d.lam_dv, lfd["v"])
    assert_block(d.lam_du, lfd["u"])


def test_symmetric_static_fourbar_derivative_symmetry(fourbar, fourbar_cs):
    # the parallelogram is mirror symmetric about its midline at rest; the
    # coupler-pin and anchor-pin diagonal responses pair up under that mirror
    # (verified to break when the rocker mass distribution is skewed)
    q = fourbar.reference_config()
    sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q,
                                              np.zeros(fourbar.nv),
                                              np.zeros(fourbar.nu))
    d = condyn.constrained_dynamics_derivatives(fourbar, fourbar_cs, sol)
    i = fourbar.joint("coupler_pin").idx_v
    j = fourbar.joint("anchor_pin").idx_v
    scale = max(1.0, abs(d.ddq_dq[i, i]))
    assert abs(d.ddq_dq[i, i] - d.ddq_dq[j, j]) < 1e-8 * scale


def test_stale_solution_rejected(fourbar, fourbar_cs):
    rng = np.random.default_rng(7)
    q, v = fourbar_state(fourbar, fourbar_cs, rng)
    u = np.zeros(fourbar.nu)
    sol = condyn.constrained_forward_dynamics(fourbar, fourbar_cs, q, v, u)
    with pytest.raises(StaleSolutionError):
        condyn.constrained_dynamics_derivatives(fourbar, fourbar_cs, sol,
                                                q=mod.integrate_config(fourbar, q, 1e-3 * np.ones(fourbar.nv)))


# ---------------------------------------------------------------------------
# projection

def test_projection_fixed_point(fourbar, fourbar_cs):
    q = fourbar.reference_config()
    np.testing.assert_allclose(condyn.project_to_manifold(fourbar, fourbar_cs, q),
                               q, atol=1e-12)


def test_projection_small_perturbation(fourbar, fourbar_cs):
    rng = np.random.default_rng(8)
    q = fourbar.reference_config().copy()
    q[fourbar.joint("coupler_pin").idx_q] += 1e-3
    qp = condyn.project_to_manifold(fourbar, fourbar_cs, q)
    cache = rba.forward_kinematics(fourbar, qp)
    for c in fourbar_cs:
        assert np.abs(clo.constraint_residual(fourbar, cache, c)).max() < 1e-9


def test_projection_impossible_geometry(fourbar):
    # welding the crank tip to an anchor far outside the reachable workspace
    far = ClosureConstraint.foot_ground(
        fourbar, "coupler_mid",
        anchor=__import__("loopdyn.spatial", fromlist=["Se3Placement"]).Se3Placement(
            np.eye(3), [2.0, 0.0, 2.0]))
    with pytest.raises(ProjectionError):
        condyn.project_to_manifold(fourbar, ConstraintSet([far]),
                                   fourbar.reference_config())


# ---------------------------------------------------------------------------
# stepping

def test_step_static_equilibrium(fourbar, fourbar_cs):
    q = fourbar.reference_config()
    u = condyn.quasi_static_control(fourbar, fourbar_cs, q)
    state = MechState(q=q, v=np.zeros(fourbar.nv))
    nxt, _ = condyn.step(fourbar, fourbar_cs, state, u, 1e-3)
    np.testing.assert_allclose(nxt.q, q, atol=1e-10)
    np.testing.assert_allclose(nxt.v, 0.0, atol=1e-7)


def test_pendulum_small_oscillation_period(pendulum):
    # effective length of a uniform-ish pendulum: I_pivot / (m l_com)
    m = pendulum
    I_pivot = 1.0 * 0.5**2 + 0.02
    l_eff = I_pivot / (1.0 * 0.5)
    period = 2 * np.pi * np.sqrt(l_eff / 9.81)
    state = MechState(q=np.array([0.02]), v=np.zeros(1))
    dt = 1e-4
    cs = ConstraintSet()
    t, crossings = 0.0, []
    prev = state.q[0]
    while t < 3.2 * period and len(crossings) < 3:
        state, _ = condyn.step(m, cs, state, np.zeros(1), dt, baumgarte=None)
        t += dt
        if prev < 0 <= state.q[0]:
            crossings.append(t)
        prev = state.q[0]
    assert len(crossings) >= 2
    measured = crossings[-1] - crossings[-2]
    assert abs(measured - period) / period < 0.01


def test_fourbar_rollout_baumgarte_residual(fourbar, fourbar_cs):
    # 2 s passive rollout with stabilization keeps closure drift small
    state = MechState(q=fourbar.reference_config(), v=np.zeros(fourbar.nv))
    dt = 1e-3
    worst = 0.0
    for _ in range(2000):
        state, _ = condyn.step(fourbar, fourbar_cs, state, np.zeros(fourbar.nu), dt)
        cache = rba.forward_kinematics(fourbar, state.q)
        for c in fourbar_cs:
            worst = max(worst, np.abs(clo.constraint_residual(fourbar, cache, c)).max())
    assert worst < 1e-4


def test_fourbar_energy_conservation(fourbar, fourbar_cs):
    # conservative rollout: energy drift stays below 1e-3 J over 2 s
    m = fourbar
    state = MechState(q=m.reference_config(), v=np.zeros(m.nv))
    dt = 1e-3

    def energy(s):
        cache = rba.forward_kinematics(m, s.q, s.v)
        return rba.kinetic_energy(m, cache) + rba.potential_energy(m, cache)

    e0 = energy(state)
    # kick it gently so something moves
    state = MechState(q=state.q, v=np.zeros(m.nv))
    drift = 0.0
    for _ in range(2000):
        state, _ = condyn.step(m, fourbar_cs, state, np.zeros(m.nu), dt)
        drift = max(drift, abs(energy(state) - e0))
    assert drift < 1e-3
