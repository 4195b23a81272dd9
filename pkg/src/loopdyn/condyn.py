"""Constrained forward dynamics and its analytical derivatives.

The constrained acceleration minimizes the inertia-weighted distance to the
free acceleration subject to the stacked acceleration-level constraints
J qdd + a0 = 0.  The saddle-point system

    [ 0    J ] [ y_dual ]   [ -a0    ]
    [ J^T  M ] [ qdd    ] = [ tau - b ]

is solved with proximal regularization -mu I on the dual block, iterated
until the unregularized residual meets KKT_TOL.  The reported constraint
force lam = -y_dual satisfies the mechanical convention
M qdd + b = tau + J^T lam.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import closure as clo
from . import rba
from .errors import ProjectionError, RankDeficiencyError, StaleSolutionError
from .model import MechState, difference_config, integrate_config

KKT_TOL = 1e-9
PROX_MU = 1e-8
PROX_MU_MAX = 1e-2
PROX_MAX_ITERS = 25

# Constraint rows whose Jacobian is structurally zero (e.g. the out-of-plane
# components of a planar linkage loop) carry indeterminate preload; they are
# excluded from the solve and their forces pinned to zero.
ROW_DROP_TOL = 1e-5

BAUMGARTE_ALPHA = 20.0


@dataclass
class ConstraintSet:
    """Ordered active constraints; ordering fixes the force layout."""
    constraints: tuple

    def __init__(self, constraints=()):
        self.constraints = tuple(constraints)

    @property
    def dim(self):
        return 6 * len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def names(self):
        return [c.name for c in self.constraints]

    def slice_of(self, i):
        return slice(6 * i, 6 * (i + 1))


@dataclass
class KktSolution:
    """Solution of the constrained-dynamics KKT system at one state."""
    ddq: np.ndarray
    lam: np.ndarray            # physical forces, F1 coordinates per constraint
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    tau: np.ndarray
    jac: np.ndarray            # stacked m x nv constraint Jacobian
    a0: np.ndarray             # stacked drift (after optional stabilization)
    mu: float
    kkt_residual: float        # scaled unregularized residual
    baumgarte: float | None
    active_rows: np.ndarray = field(repr=False, default=None)
    lu: tuple = field(repr=False, default=None)
    y_dual: np.ndarray = field(repr=False, default=None)

    @property
    def nv(self):
        return len(self.ddq)


def _assemble(model, constraints, q, v, baumgarte):
    """Caches, stacked (J, a0) with optional stabilization, and M, b."""
    tf = rba.joint_transforms(model, q)
    cache0 = rba.forward_kinematics(model, q, v, transforms=tf)
    m = constraints.dim
    J = np.zeros((m, model.nv))
    a0 = np.zeros(m)
    for i, c in enumerate(constraints):
        ck = clo.constraint_kinematics(model, cache0, c)
        s = constraints.slice_of(i)
        J[s] = ck.jacobian
        a0[s] = ck.acceleration
        if baumgarte is not None:
            a0[s] += 2.0 * baumgarte * ck.velocity + baumgarte**2 * ck.residual
    M = rba.joint_space_inertia(model, q, transforms=tf)
    b = rba.rnea(model, q, v, np.zeros(model.nv), transforms=tf)
    return cache0, J, a0, M, b


def constrained_forward_dynamics(model, constraints, q, v, u, baumgarte=None):
    """Solve the constrained dynamics at (q, v) under controls u.

    With an empty constraint set this reduces to qdd = M^-1 (tau - b).
    Raises RankDeficiencyError when the system stays unsolvable after
    proximal escalation, naming the worst constraint block.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    tau = model.actuation_matrix() @ u
    cache0, J, a0, M, b = _assemble(model, constraints, q, v, baumgarte)
    nv, m_full = model.nv, constraints.dim
    k_bot = tau - b
    k_scale = 1.0 + max(np.abs(a0).max() if m_full else 0.0, np.abs(k_bot).max())

    # structurally zero rows carry indeterminate preload: pin them to zero
    active = np.abs(J).max(axis=1) > ROW_DROP_TOL if m_full else np.zeros(0, dtype=bool)
    Ja = J[active]
    k_top = -a0[active]
    m = int(active.sum())

    if m == 0:
        lu = scipy.linalg.lu_factor(M)
        ddq = scipy.linalg.lu_solve(lu, k_bot)
        resid = np.abs(M @ ddq - k_bot).max() / k_scale
        return KktSolution(ddq=ddq, lam=np.zeros(m_full), q=q.copy(), v=v.copy(),
                           u=u.copy(), tau=tau, jac=J, a0=a0, mu=0.0,
                           kkt_residual=resid, baumgarte=baumgarte,
                           active_rows=active, lu=lu, y_dual=np.zeros(m_full))

    mu = PROX_MU
    while True:
        K = np.zeros((m + nv, m + nv))
        K[:m, :m] = -mu * np.eye(m)
        K[:m, m:] = Ja
        K[m:, :m] = Ja.T
        K[m:, m:] = M
        try:
            lu = scipy.linalg.lu_factor(K)
        except (scipy.linalg.LinAlgError, ValueError):
            lu = None
        if lu is not None:
            y_act = np.zeros(m)
            best = None
            for _ in range(PROX_MAX_ITERS):
                rhs = np.concatenate([k_top - mu * y_act, k_bot])
                y = scipy.linalg.lu_solve(lu, rhs)
                y_act, ddq = y[:m], y[m:]
                top = Ja @ ddq - k_top
                bot = Ja.T @ y_act + M @ ddq - k_bot
                resid = max(np.abs(top).max(), np.abs(bot).max()) / k_scale
                if not np.isfinite(resid):
                    best = None
                    break
                if best is None or resid < best[0]:
                    best = (resid, y_act.copy(), ddq.copy(), top)
                if resid < KKT_TOL:
                    break
            if best is not None and (best[0] < KKT_TOL or mu * 10.0 > PROX_MU_MAX):
                if best[0] >= 1e-6:
                    row_err = np.zeros(m_full)
                    row_err[active] = np.abs(best[3])
                    worst = int(np.argmax([row_err[6 * i:6 * i + 6].max()
                                           for i in range(len(constraints))]))
                    raise RankDeficiencyError(
                        f"constrained dynamics unsolvable (residual {best[0]:.2e})",
                        constraint_name=constraints.names()[worst])
                resid, y_act, ddq, _ = best
                y_dual = np.zeros(m_full)
                y_dual[active] = y_act
                return KktSolution(ddq=ddq, lam=-y_dual, q=q.copy(), v=v.copy(),
                                   u=u.copy(), tau=tau, jac=J, a0=a0, mu=mu,
                                   kkt_residual=resid, baumgarte=baumgarte,
                                   active_rows=active, lu=lu, y_dual=y_dual)
        if mu * 10.0 > PROX_MU_MAX:
            raise RankDeficiencyError("KKT factorization failed at maximum mu")
        mu *= 10.0


@dataclass
class DynDerivatives:
    """Dense derivative blocks of (qdd, lam) with respect to (q, v, u)."""
    ddq_dq: np.ndarray
    ddq_dv: np.ndarray
    ddq_du: np.ndarray
    lam_dq: np.ndarray
    lam_dv: np.ndarray
    lam_du: np.ndarray


def constrained_dynamics_derivatives(model, constraints, sol, q=None, v=None, u=None,
                                     return_workspace=False):
    """Assemble the full derivative of the KKT solution via Eq.-style reuse.

    The top right-hand-side block stacks the constraint-acceleration
    derivatives, the bottom one the inverse-dynamics derivatives including
    the configuration dependence of the constraint forces; both are pushed
    through the stored factorization.  With ``return_workspace`` the internal
    (cache, kd) pair is returned for reuse by cost models.
    """
    for given, stored, name in ((q, sol.q, "q"), (v, sol.v, "v"), (u, sol.u, "u")):
        if given is not None and not np.array_equal(np.asarray(given, dtype=float), stored):
            raise StaleSolutionError(f"solution was not computed at the given {name}")
    if sol.baumgarte is not None:
        raise ValueError("derivatives are defined for the unstabilized dynamics")
    nv, m_full, nu = model.nv, constraints.dim, model.nu
    P = model.actuation_matrix()
    active = sol.active_rows
    m = int(active.sum()) if m_full else 0

    tf = rba.joint_transforms(model, sol.q)
    cache = rba.forward_kinematics(model, sol.q, sol.v, sol.ddq, transforms=tf)
    kd = rba.kinematics_derivatives(model, cache)

    fext = np.zeros((len(model.joints), 6))
    extra_dq = np.zeros((nv, nv))
    top_dq = np.zeros((m_full, nv))
    top_dv = np.zeros((m_full, nv))
    for i, c in enumerate(constraints):
        s = constraints.slice_of(i)
        da_dq, da_dv = clo.acc_derivatives(model, cache, kd, c)
        top_dq[s] = da_dq
        top_dv[s] = da_dv
        f_dual = sol.y_dual[s]
        for jid, phi in clo.constraint_joint_forces(model, cache, c, f_dual).items():
            fext[jid] += phi
        extra_dq += clo.id_force_derivative(model, cache, kd, c, f_dual)

    did_dq, did_dv, _ = rba.rnea_derivatives(model, sol.q, sol.v, sol.ddq, fext,
                                             transforms=tf)
    did_dq += extra_dq

    rhs = np.zeros((m + nv, 2 * nv + nu))
    rhs[:m, :nv] = -top_dq[active]
    rhs[:m, nv:2 * nv] = -top_dv[active]
    rhs[m:, :nv] = -did_dq
    rhs[m:, nv:2 * nv] = -did_dv
    rhs[m:, 2 * nv:] = P
    Y = scipy.linalg.lu_solve(sol.lu, rhs)
    # refine against the unregularized KKT matrix to remove the mu bias
    Ja = sol.jac[active]
    K = np.zeros((m + nv, m + nv))
    K[:m, m:] = Ja
    K[m:, :m] = Ja.T
    K[m:, m:] = rba.joint_space_inertia(model, sol.q, transforms=tf)
    for _ in range(2):
        Y += scipy.linalg.lu_solve(sol.lu, rhs - K @ Y)
    lam_dq = np.zeros((m_full, nv))
    lam_dv = np.zeros((m_full, nv))
    lam_du = np.zeros((m_full, nu))
    lam_dq[active] = -Y[:m, :nv]
    lam_dv[active] = -Y[:m, nv:2 * nv]
    lam_du[active] = -Y[:m, 2 * nv:]
    derivs = DynDerivatives(
        ddq_dq=Y[m:, :nv], ddq_dv=Y[m:, nv:2 * nv], ddq_du=Y[m:, 2 * nv:],
        lam_dq=lam_dq, lam_dv=lam_dv, lam_du=lam_du)
    if return_workspace:
        return derivs, cache, kd
    return derivs


def project_to_manifold(model, constraints, q_guess, tol=1e-9, max_iters=100,
                        locked=None):
    """Gauss-Newton projection of a configuration onto the closure manifold.

    ``locked`` lists tangent coordinates held fixed during the projection.
    Raises ProjectionError when the iteration does not reach ``tol``.
    """
    q = np.asarray(q_guess, dtype=float).copy()
    free = np.ones(model.nv, dtype=bool)
    if locked is not None:
        free[np.asarray(locked, dtype=int)] = False

    def residuals(qq):
        cache = rba.forward_kinematics(model, qq)
        r = np.concatenate([clo.constraint_residual(model, cache, c)
                            for c in constraints]) if len(constraints) else np.zeros(0)
        return cache, r

    cache, r = residuals(q)
    if len(r) == 0 or np.abs(r).max() < tol:
        return q
    for _ in range(max_iters):
        Jp = np.vstack([clo.projection_jacobian(model, cache, c) for c in constraints])
        dq = np.zeros(model.nv)
        dq[free] = -np.linalg.lstsq(Jp[:, free], r, rcond=None)[0]
        step_size = 1.0
        for _ in range(30):
            q_try = integrate_config(model, q, step_size * dq)
            cache_try, r_try = residuals(q_try)
            if np.abs(r_try).max() < np.abs(r).max() or np.abs(r_try).max() < tol:
                break
            step_size *= 0.5
        else:
            raise ProjectionError("projection line search stalled")
        q, cache, r = q_try, cache_try, r_try
        if np.abs(r).max() < tol:
            return q
    raise ProjectionError(
        f"projection did not converge (residual {np.abs(r).max():.2e})")


def project_state(model, constraints, state, locked=None):
    """Project q onto the manifold and v onto the constraint null space."""
    q = project_to_manifold(model, constraints, state.q, locked=locked)
    cache = rba.forward_kinematics(model, q)
    v = state.v.copy()
    if len(constraints):
        J = np.vstack([clo.constraint_jacobian(model, cache, c) for c in constraints])
        v -= np.linalg.lstsq(J, J @ v, rcond=None)[0]
    return MechState(q=q, v=v)


def step(model, constraints, state, u, dt, baumgarte=BAUMGARTE_ALPHA):
    """Semi-implicit Euler step: v += dt qdd, then q integrates dt v.

    Baumgarte stabilization is on by default for open-loop simulation; pass
    baumgarte=None inside optimal-control dynamics.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sol = constrained_forward_dynamics(model, constraints, state.q, state.v, u,
                                       baumgarte=baumgarte)
    v_next = state.v + dt * sol.ddq
    q_next = integrate_config(model, state.q, dt * v_next)
    return MechState(q=q_next, v=v_next), sol


def quasi_static_control(model, constraints, q):
    """Least-squares controls holding the configuration still.

    The constrained acceleration is affine in u, so one linear solve gives
    the minimizer of ||qdd(u)|| over controls.
    """
    v0 = np.zeros(model.nv)
    u0 = np.zeros(model.nu)
    sol0 = constrained_forward_dynamics(model, constraints, q, v0, u0)
    derivs = constrained_dynamics_derivatives(model, constraints, sol0)
    B = derivs.ddq_du
    u = -np.linalg.lstsq(B, sol0.ddq, rcond=None)[0]
    return u
