"""Loop-closure constraints: residual, velocity, acceleration, derivatives.

A closure welds two frames, F1 on one branch of the tree and F2 on another
(or on the world, which models a foot-ground contact with the same code
path).  All constraint quantities are expressed in F1.  The position residual
satisfies d(residual)/dt = constraint velocity on the constraint manifold, so
positive position/velocity feedback stabilizes it.
"""

from dataclasses import dataclass

import numpy as np

from . import rba
from .model import WORLD
from .spatial import (
    Se3Placement,
    action_matrix,
    dual_action_matrix,
    force_cross_dual,
    log6,
    motion_cross,
    motion_cross_matrix,
    se3_left_jacobian_inv,
    se3_right_jacobian_inv,
)


@dataclass(frozen=True)
class ClosureConstraint:
    """Frame pair (F1, F2) with fixed joint-to-frame placements."""
    name: str
    joint1: int
    placement1: Se3Placement     # F1 in joint1's frame
    joint2: int
    placement2: Se3Placement     # F2 in joint2's frame
    dimension: int = 6

    @staticmethod
    def from_pair(model, pair):
        f1 = model.frames[pair.frame1]
        f2 = model.frames[pair.frame2]
        return ClosureConstraint(name=pair.name,
                                 joint1=f1.joint, placement1=f1.placement,
                                 joint2=f2.joint, placement2=f2.placement)

    @staticmethod
    def foot_ground(model, frame_name, anchor, name=None):
        """Contact welding a robot frame onto a world-anchored placement."""
        f = model.frames[model.frame_id(frame_name)]
        return ClosureConstraint(name=name or f"contact_{frame_name}",
                                 joint1=f.joint, placement1=f.placement,
                                 joint2=WORLD, placement2=anchor)


def model_closures(model):
    """ClosureConstraint objects for every closure pair of the model."""
    return [ClosureConstraint.from_pair(model, p) for p in model.closures]


@dataclass
class ConstraintKinematics:
    """Constraint-level kinematics at one state, all expressed in F1."""
    residual: np.ndarray     # 6, zero iff the frames coincide
    velocity: np.ndarray     # 6, J @ v
    jacobian: np.ndarray     # 6 x nv
    acceleration: np.ndarray  # 6, J qdd + a0 for the cache's acceleration


class _Geometry:
    """Shared per-constraint quantities derived from a kinematics cache."""

    __slots__ = ("M1", "M2", "M12", "X12", "nu1", "nu2", "nu2t", "a1", "a2")

    def __init__(self, model, cache, c):
        if c.joint1 == WORLD:
            self.M1 = c.placement1
            self.nu1 = np.zeros(6)
            self.a1 = np.zeros(6)
        else:
            self.M1 = cache.world_placement(c.joint1) * c.placement1
            Xf = action_matrix(c.placement1.inverse())
            self.nu1 = Xf @ cache.vel[c.joint1]
            self.a1 = Xf @ cache.acc[c.joint1]
        if c.joint2 == WORLD:
            self.M2 = c.placement2
            self.nu2 = np.zeros(6)
            self.a2 = np.zeros(6)
        else:
            self.M2 = cache.world_placement(c.joint2) * c.placement2
            Xf = action_matrix(c.placement2.inverse())
            self.nu2 = Xf @ cache.vel[c.joint2]
            self.a2 = Xf @ cache.acc[c.joint2]
        self.M12 = self.M1.inverse() * self.M2
        self.X12 = action_matrix(self.M12)
        self.nu2t = self.X12 @ self.nu2


def constraint_residual(model, cache, c):
    """Position-level 6D residual, zero iff the frames coincide."""
    g = _Geometry(model, cache, c)
    return log6(g.M12.inverse())


def constraint_velocity(model, cache, c):
    """Relative spatial velocity nu1 - X12 nu2 in F1."""
    g = _Geometry(model, cache, c)
    return g.nu1 - g.nu2t


def _frame_jac(model, cache, joint, placement):
    if joint == WORLD:
        return np.zeros((6, model.nv))
    return action_matrix(placement.inverse()) @ rba.joint_local_jacobian(model, cache, joint)


def constraint_jacobian(model, cache, c):
    """J_c = J1 - X12 J2, expressed in F1."""
    g = _Geometry(model, cache, c)
    J1 = _frame_jac(model, cache, c.joint1, c.placement1)
    J2 = _frame_jac(model, cache, c.joint2, c.placement2)
    return J1 - g.X12 @ J2


def constraint_acceleration(model, cache, c):
    """Constraint acceleration for the accelerations stored in the cache.

    Splits as a1 - X12 a2 + (nu1 x X12 nu2); with zero joint accelerations in
    the cache this is the drift a0.
    """
    g = _Geometry(model, cache, c)
    return g.a1 - g.X12 @ g.a2 + motion_cross(g.nu1, g.nu2t)


def constraint_acc_split(model, cache, c):
    """(J_c, a0) with a_c = J_c qdd + a0.

    The cache must be built at the desired (q, v) with zero accelerations so
    that the velocity-product drift can be read off directly.
    """
    return constraint_jacobian(model, cache, c), constraint_acceleration(model, cache, c)


def constraint_kinematics(model, cache, c):
    g = _Geometry(model, cache, c)
    J1 = _frame_jac(model, cache, c.joint1, c.placement1)
    J2 = _frame_jac(model, cache, c.joint2, c.placement2)
    J = J1 - g.X12 @ J2
    return ConstraintKinematics(
        residual=log6(g.M12.inverse()),
        velocity=g.nu1 - g.nu2t,
        jacobian=J,
        acceleration=g.a1 - g.X12 @ g.a2 + motion_cross(g.nu1, g.nu2t))


def projection_jacobian(model, cache, c):
    """Exact tangent Jacobian of the position residual, for Gauss-Newton.

    Reduces to J_c on the constraint manifold; away from it the log-map
    Jacobians correct for the finite relative placement.
    """
    g = _Geometry(model, cache, c)
    J1 = _frame_jac(model, cache, c.joint1, c.placement1)
    J2 = _frame_jac(model, cache, c.joint2, c.placement2)
    r = log6(g.M12.inverse())
    # residual = log(exp(-d2^) M2^-1 M1 exp(d1^)) to first order in d1, d2
    return se3_right_jacobian_inv(r) @ J1 - se3_left_jacobian_inv(r) @ J2


def _frame_blocks(model, kd, joint, placement):
    if joint == WORLD:
        z = np.zeros((6, kd.J.shape[2]))
        return z, z, z, z
    X = action_matrix(placement.inverse())
    return (X @ kd.J[joint], X @ kd.Vq[joint],
            X @ kd.Aq[joint], X @ kd.Av[joint])


def acc_derivatives(model, cache, kd, c):
    """Tangent-space derivatives (da_c/dq, da_c/dv) of the acceleration.

    The cache must hold the accelerations at which the derivative is taken
    (i.e. be built with the solution qdd); kd are its kinematic derivatives.
    """
    g = _Geometry(model, cache, c)
    J1, Vq1, Aq1, Av1 = _frame_blocks(model, kd, c.joint1, c.placement1)
    J2, Vq2, Aq2, Av2 = _frame_blocks(model, kd, c.joint2, c.placement2)
    X12 = g.X12
    gamma2 = X12 @ g.a2
    C_nu1 = motion_cross_matrix(g.nu1)
    C_nu2t = motion_cross_matrix(g.nu2t)

    # d(X12 a2): transport of the F2 acceleration plus frame motion of X12
    dg2_dq = motion_cross_matrix(gamma2) @ J1 - X12 @ motion_cross_matrix(g.a2) @ J2 \
        + X12 @ Aq2
    # d(nu1 x X12 nu2)
    dg3_dq = -C_nu2t @ Vq1 + C_nu1 @ (C_nu2t @ J1 - X12 @ motion_cross_matrix(g.nu2) @ J2
                                      + X12 @ Vq2)
    da_dq = Aq1 - dg2_dq + dg3_dq
    da_dv = Av1 - X12 @ Av2 - C_nu2t @ J1 + C_nu1 @ (X12 @ J2)
    return da_dq, da_dv


def constraint_joint_forces(model, cache, c, f):
    """Per-joint spatial forces realizing J_c^T f, keyed by joint id.

    f is the constraint force expressed in F1.  phi1 acts on joint1 and is
    configuration independent; phi2 acts on joint2 through a q-dependent
    transform.
    """
    g = _Geometry(model, cache, c)
    out = {}
    if c.joint1 != WORLD:
        out[c.joint1] = dual_action_matrix(c.placement1) @ f
    if c.joint2 != WORLD:
        M_j2_c1 = cache.world_placement(c.joint2).inverse() * g.M1
        phi2 = -(dual_action_matrix(M_j2_c1) @ f)
        out[c.joint2] = out.get(c.joint2, 0.0) + phi2
    return out


def id_force_derivative(model, cache, kd, c, f):
    """nv x nv contribution sum_k J_k^T dphi_k/dq for a fixed F1 force f.

    Covers only the force-variation term of the inverse-dynamics derivative;
    the J^T-variation terms at fixed forces belong to rnea_derivatives.
    phi1 never varies; phi2 follows the F1-to-joint2 transform.
    """
    nv = model.nv
    if c.joint2 == WORLD:
        return np.zeros((nv, nv))
    g = _Geometry(model, cache, c)
    M_j2_c1 = cache.world_placement(c.joint2).inverse() * g.M1
    phi2 = -(dual_action_matrix(M_j2_c1) @ f)
    J_j2 = kd.J[c.joint2]
    if c.joint1 == WORLD:
        J_c1 = np.zeros((6, nv))
    else:
        J_c1 = action_matrix(c.placement1.inverse()) @ kd.J[c.joint1]
    dphi2_dq = force_cross_dual(phi2) @ (J_j2 - action_matrix(M_j2_c1) @ J_c1)
    return J_j2.T @ dphi2_dq
