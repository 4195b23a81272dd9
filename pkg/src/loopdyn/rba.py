"""Tree rigid-body algorithms: kinematics, RNEA, CRBA, and their derivatives.

All per-joint spatial quantities are expressed in the joint's own (local)
frame with the linear-first 6-vector layout.  Accelerations stored in a
KinematicsCache are true kinematic accelerations; gravity enters only the
dynamics routines, as the usual fictitious base acceleration.

Configuration derivatives are taken with respect to tangent-space
perturbations (integrate_config), never raw coordinates.

The heavy loops share a JointTransforms bundle so that one state evaluation
(kinematics + inertia + inverse dynamics) touches the joint placements once.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .model import WORLD, joint_motion, runtime
from .spatial import (
    Se3Placement,
    action_matrix,
    dual_action_matrix,
    exp3,
    force_cross_dual,
    motion_cross,
    motion_cross_dual_matrix,
    motion_cross_matrix,
    quat_to_rot,
    skew,
)


@dataclass
class JointTransforms:
    """Per-state joint placements and their 6x6 transforms."""
    q: np.ndarray
    R_pj: np.ndarray   # (n, 3, 3) joint frame rotation in parent frame
    p_pj: np.ndarray   # (n, 3) joint frame origin in parent frame
    X_jp: np.ndarray   # (n, 6, 6) motion transform parent -> joint coords
    Xs_pj: np.ndarray  # (n, 6, 6) force transform joint -> parent coords


def joint_transforms(model, q):
    rt = runtime(model)
    n = rt.n
    R_pj = np.empty((n, 3, 3))
    p_pj = np.empty((n, 3))
    X_jp = np.zeros((n, 6, 6))
    Xs_pj = np.zeros((n, 6, 6))
    for i in range(n):
        if rt.is_ff[i]:
            iq = rt.idx_q[i]
            Rj = quat_to_rot(q[iq + 3:iq + 7])
            R = rt.R0[i] @ Rj
            p = rt.R0[i] @ q[iq:iq + 3] + rt.p0[i]
        else:
            Rj = exp3(rt.axis[i] * q[rt.idx_q[i]])
            R = rt.R0[i] @ Rj
            p = rt.p0[i]
        R_pj[i] = R
        p_pj[i] = p
        Rt = R.T
        P = skew(p)
        X_jp[i, :3, :3] = Rt
        X_jp[i, 3:, 3:] = Rt
        X_jp[i, :3, 3:] = -Rt @ P
        Xs_pj[i, :3, :3] = R
        Xs_pj[i, 3:, 3:] = R
        Xs_pj[i, 3:, :3] = P @ R
    return JointTransforms(q=np.asarray(q, dtype=float), R_pj=R_pj, p_pj=p_pj,
                           X_jp=X_jp, Xs_pj=Xs_pj)


@dataclass
class KinematicsCache:
    """Per-joint world placements, local velocities and accelerations."""
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    oR: np.ndarray      # (n, 3, 3) world rotations
    op: np.ndarray      # (n, 3) world translations
    X_jp: np.ndarray    # (n, 6, 6) motion transform parent -> joint coords
    vel: np.ndarray     # (n, 6) local spatial velocities
    acc: np.ndarray     # (n, 6) local spatial accelerations
    a_world: np.ndarray
    transforms: JointTransforms

    @property
    def oM(self):
        return [Se3Placement(self.oR[i], self.op[i]) for i in range(len(self.oR))]

    def world_placement(self, i):
        return Se3Placement(self.oR[i], self.op[i])


@dataclass
class KinDerivatives:
    """Tangent-space sensitivities of the local joint kinematics.

    J[i] is the local joint Jacobian; Vq, Aq, Av hold the partial derivatives
    of the local velocity and acceleration with respect to configuration and
    velocity, as 6 x nv blocks per joint.
    """
    J: np.ndarray
    Vq: np.ndarray
    Aq: np.ndarray
    Av: np.ndarray


def forward_kinematics(model, q, v=None, a=None, world_acceleration=None,
                       transforms=None):
    """Propagate placements, velocities, and accelerations down the tree.

    ``world_acceleration`` installs a virtual acceleration of the world frame,
    used by the dynamics routines for the classical gravity offset; kinematic
    callers leave it at zero and get true accelerations.
    """
    model.check_config(q)
    rt = runtime(model)
    n = rt.n
    v = np.zeros(model.nv) if v is None else np.asarray(v, dtype=float)
    a = np.zeros(model.nv) if a is None else np.asarray(a, dtype=float)
    if len(v) != model.nv or len(a) != model.nv:
        raise ModelError("velocity/acceleration dimension mismatch")
    a_world = np.zeros(6) if world_acceleration is None else np.asarray(world_acceleration, dtype=float)
    tf = joint_transforms(model, q) if transforms is None else transforms
    oR = np.empty((n, 3, 3))
    op = np.empty((n, 3))
    vel = np.zeros((n, 6))
    acc = np.zeros((n, 6))
    for i in range(n):
        p = rt.parent[i]
        S = rt.S[i]
        iv = rt.idx_v[i]
        vj = S @ v[iv:iv + rt.nvj[i]]
        aj = S @ a[iv:iv + rt.nvj[i]]
        if p == WORLD:
            oR[i] = tf.R_pj[i]
            op[i] = tf.p_pj[i]
            vel[i] = vj
            acc[i] = tf.X_jp[i] @ a_world + aj + motion_cross(vel[i], vj)
        else:
            oR[i] = oR[p] @ tf.R_pj[i]
            op[i] = oR[p] @ tf.p_pj[i] + op[p]
            vel[i] = tf.X_jp[i] @ vel[p] + vj
            acc[i] = tf.X_jp[i] @ acc[p] + aj + motion_cross(vel[i], vj)
    return KinematicsCache(q=np.array(q, dtype=float), v=v.copy(), a=a.copy(),
                           oR=oR, op=op, X_jp=tf.X_jp, vel=vel, acc=acc,
                           a_world=a_world, transforms=tf)


def kinematics_derivatives(model, cache):
    """Tangent-space derivatives of every joint's local velocity/acceleration.

    Operates on whatever accelerations the cache holds, so the same recursion
    serves both the true kinematics and gravity-augmented dynamics passes.
    """
    rt = runtime(model)
    n, nv = rt.n, model.nv
    J = np.zeros((n, 6, nv))
    Vq = np.zeros((n, 6, nv))
    Aq = np.zeros((n, 6, nv))
    Av = np.zeros((n, 6, nv))
    for i in range(n):
        p = rt.parent[i]
        S = rt.S[i]
        own = slice(rt.idx_v[i], rt.idx_v[i] + rt.nvj[i])
        vj = S @ cache.v[own]
        X = cache.X_jp[i]
        if p == WORLD:
            v_in = np.zeros(6)
            a_in = X @ cache.a_world
        else:
            J[i] = X @ J[p]
            Vq[i] = X @ Vq[p]
            Aq[i] = X @ Aq[p]
            Av[i] = X @ Av[p]
            v_in = X @ cache.vel[p]
            a_in = X @ cache.acc[p]
        J[i][:, own] += S
        Vq[i][:, own] += motion_cross_matrix(v_in) @ S
        Aq[i][:, own] += motion_cross_matrix(a_in) @ S
        cvj = motion_cross_matrix(vj)
        Aq[i] -= cvj @ Vq[i]
        Av[i] -= cvj @ J[i]
        Av[i][:, own] += motion_cross_matrix(cache.vel[i]) @ S
    return KinDerivatives(J=J, Vq=Vq, Aq=Aq, Av=Av)


# ---------------------------------------------------------------------------
# frame quantities

def _frame(model, frame):
    if isinstance(frame, str):
        frame = model.frame_id(frame)
    return frame, model.frames[frame]


def frame_placement(model, cache, frame):
    _, f = _frame(model, frame)
    if f.joint == WORLD:
        return f.placement.copy()
    return cache.world_placement(f.joint) * f.placement


def frame_velocity(model, cache, frame):
    """Spatial velocity of the frame in its own coordinates."""
    _, f = _frame(model, frame)
    if f.joint == WORLD:
        return np.zeros(6)
    return action_matrix(f.placement.inverse()) @ cache.vel[f.joint]


def frame_acceleration(model, cache, frame):
    _, f = _frame(model, frame)
    if f.joint == WORLD:
        return np.zeros(6)
    return action_matrix(f.placement.inverse()) @ cache.acc[f.joint]


def joint_local_jacobian(model, cache, jid):
    """Local Jacobian of a joint frame, built by walking its ancestry."""
    rt = runtime(model)
    Jl = np.zeros((6, model.nv))
    Ri = cache.oR[jid]
    pi = cache.op[jid]
    k = jid
    while k != WORLD:
        # X transforming joint-k local motions into joint-jid coordinates
        R = Ri.T @ cache.oR[k]
        d = Ri.T @ (cache.op[k] - pi)
        X = np.zeros((6, 6))
        X[:3, :3] = R
        X[3:, 3:] = R
        X[:3, 3:] = skew(d) @ R
        iv = rt.idx_v[k]
        Jl[:, iv:iv + rt.nvj[k]] = X @ rt.S[k]
        k = rt.parent[k]
    return Jl


def frame_jacobian(model, cache, frame):
    """6 x nv Jacobian mapping tangent velocities to the frame-local twist."""
    _, f = _frame(model, frame)
    if f.joint == WORLD:
        return np.zeros((6, model.nv))
    return action_matrix(f.placement.inverse()) @ joint_local_jacobian(model, cache, f.joint)


def frame_kin_blocks(model, cache, kd, frame):
    """Frame-local (J, Vq, Aq, Av) blocks derived from the parent joint's."""
    _, f = _frame(model, frame)
    if f.joint == WORLD:
        z = np.zeros((6, model.nv))
        return z, z.copy(), z.copy(), z.copy()
    X = action_matrix(f.placement.inverse())
    i = f.joint
    return X @ kd.J[i], X @ kd.Vq[i], X @ kd.Aq[i], X @ kd.Av[i]


# ---------------------------------------------------------------------------
# dynamics

def _gravity_spatial(model):
    out = np.zeros(6)
    out[:3] = -model.gravity
    return out


def rnea(model, q, v, a, fext=None, transforms=None):
    """Inverse dynamics with external joint forces entering positively.

    ``fext`` holds one spatial force per joint, expressed in that joint's
    frame; the returned torque is M a + b + sum_k J_k^T phi_k.
    """
    model.check_config(q)
    rt = runtime(model)
    n = rt.n
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    tf = joint_transforms(model, q) if transforms is None else transforms
    vel = np.zeros((n, 6))
    acc = np.zeros((n, 6))
    f = np.zeros((n, 6))
    a_grav = _gravity_spatial(model)
    for i in range(n):
        p = rt.parent[i]
        S = rt.S[i]
        iv = rt.idx_v[i]
        vj = S @ v[iv:iv + rt.nvj[i]]
        aj = S @ a[iv:iv + rt.nvj[i]]
        if p == WORLD:
            vel[i] = vj
            acc[i] = tf.X_jp[i] @ a_grav + aj + motion_cross(vel[i], vj)
        else:
            vel[i] = tf.X_jp[i] @ vel[p] + vj
            acc[i] = tf.X_jp[i] @ acc[p] + aj + motion_cross(vel[i], vj)
        I6 = rt.I6[i]
        f[i] = I6 @ acc[i] + motion_cross_dual_matrix(vel[i]) @ (I6 @ vel[i])
        if fext is not None:
            f[i] += fext[i]
    tau = np.zeros(model.nv)
    for i in range(n - 1, -1, -1):
        iv = rt.idx_v[i]
        tau[iv:iv + rt.nvj[i]] = rt.S[i].T @ f[i]
        p = rt.parent[i]
        if p != WORLD:
            f[p] += tf.Xs_pj[i] @ f[i]
    return tau


def nonlinear_effects(model, q, v, transforms=None):
    """Coriolis, centrifugal and gravity torques b(q, v)."""
    return rnea(model, q, v, np.zeros(model.nv), transforms=transforms)


def joint_space_inertia(model, q, transforms=None):
    """Symmetric joint-space inertia matrix via the composite-rigid-body pass."""
    model.check_config(q)
    rt = runtime(model)
    n = rt.n
    tf = joint_transforms(model, q) if transforms is None else transforms
    Ic = rt.I6.copy()
    H = np.zeros((model.nv, model.nv))
    for i in range(n - 1, -1, -1):
        p = rt.parent[i]
        if p != WORLD:
            Ic[p] += tf.Xs_pj[i] @ Ic[i] @ tf.X_jp[i]
        S = rt.S[i]
        F = Ic[i] @ S
        rows = slice(rt.idx_v[i], rt.idx_v[i] + rt.nvj[i])
        H[rows, rows] = S.T @ F
        k = i
        while rt.parent[k] != WORLD:
            F = tf.Xs_pj[k] @ F
            k = rt.parent[k]
            cols = slice(rt.idx_v[k], rt.idx_v[k] + rt.nvj[k])
            blk = rt.S[k].T @ F
            H[cols, rows] = blk
            H[rows, cols] = blk.T
    return 0.5 * (H + H.T)


def _augmented_cache(model, q, v, a, transforms=None):
    """FK pass whose root acceleration carries the gravity offset."""
    return forward_kinematics(model, q, v, a,
                              world_acceleration=_gravity_spatial(model),
                              transforms=transforms)


def rnea_derivatives(model, q, v, a, fext=None, transforms=None):
    """Partial derivatives (dtau/dq, dtau/dv, dtau/da) of rnea.

    External forces are held fixed in their joint frames.  dtau/da is the
    joint-space inertia.  Derivatives are with respect to tangent
    perturbations of q.
    """
    rt = runtime(model)
    n, nv = rt.n, model.nv
    cache = _augmented_cache(model, q, v, a, transforms=transforms)
    tf = cache.transforms
    kd = kinematics_derivatives(model, cache)

    f = np.zeros((n, 6))
    dFq = np.zeros((n, 6, nv))
    dFv = np.zeros((n, 6, nv))
    for i in range(n):
        I6 = rt.I6[i]
        vi = cache.vel[i]
        f[i] = I6 @ cache.acc[i] + motion_cross_dual_matrix(vi) @ (I6 @ vi)
        if fext is not None:
            f[i] += fext[i]
        # d(I a + v x* I v): the bias splits into a dual-cross term in da and
        # a force-cross term from the varying velocity
        W = motion_cross_dual_matrix(vi) @ I6 - force_cross_dual(I6 @ vi)
        dFq[i] = I6 @ kd.Aq[i] + W @ kd.Vq[i]
        dFv[i] = I6 @ kd.Av[i] + W @ kd.J[i]

    dtau_q = np.zeros((nv, nv))
    dtau_v = np.zeros((nv, nv))
    for i in range(n - 1, -1, -1):
        S = rt.S[i]
        rows = slice(rt.idx_v[i], rt.idx_v[i] + rt.nvj[i])
        dtau_q[rows] = S.T @ dFq[i]
        dtau_v[rows] = S.T @ dFv[i]
        p = rt.parent[i]
        if p != WORLD:
            Xs = tf.Xs_pj[i]
            dFq[p] += Xs @ dFq[i]
            dFv[p] += Xs @ dFv[i]
            # the transform to the parent moves with the joint's own coordinate
            dFq[p][:, rows] -= Xs @ (force_cross_dual(f[i]) @ S)
            f[p] += Xs @ f[i]
    return dtau_q, dtau_v, joint_space_inertia(model, q, transforms=tf)


# ---------------------------------------------------------------------------
# center of mass helpers

def com_position(model, cache):
    rt = runtime(model)
    pts = np.einsum("nij,nj->ni", cache.oR, rt.com) + cache.op
    return (rt.mass @ pts) / rt.total_mass


def com_velocity(model, cache):
    rt = runtime(model)
    w = cache.vel[:, :3] + np.cross(cache.vel[:, 3:], rt.com)
    return (rt.mass @ np.einsum("nij,nj->ni", cache.oR, w)) / rt.total_mass


def com_jacobian(model, cache, kd):
    """3 x nv Jacobian of the world CoM position."""
    rt = runtime(model)
    Jc = np.zeros((3, model.nv))
    for i in range(rt.n):
        Jpt = kd.J[i][:3] - skew(rt.com[i]) @ kd.J[i][3:]
        Jc += (rt.mass[i] / rt.total_mass) * (cache.oR[i] @ Jpt)
    return Jc


def com_velocity_derivatives(model, cache, kd):
    """(d com_vel / dq, d com_vel / dv), each 3 x nv."""
    rt = runtime(model)
    dq = np.zeros((3, model.nv))
    dv = np.zeros((3, model.nv))
    for i in range(rt.n):
        R = cache.oR[i]
        C = skew(rt.com[i])
        w = cache.vel[i][:3] - C @ cache.vel[i][3:]
        dw_q = kd.Vq[i][:3] - C @ kd.Vq[i][3:]
        dq += (rt.mass[i] / rt.total_mass) * (R @ (dw_q - skew(w) @ kd.J[i][3:]))
        dv += (rt.mass[i] / rt.total_mass) * (R @ (kd.J[i][:3] - C @ kd.J[i][3:]))
    return dq, dv


def composite_inertia_about_origin(model, cache):
    """Total 6x6 spatial inertia of the mechanism in world coordinates."""
    I = np.zeros((6, 6))
    for i, j in enumerate(model.joints):
        M = cache.world_placement(i)
        Xs = dual_action_matrix(M)
        Xm = action_matrix(M.inverse())
        I += Xs @ j.body.spatial_inertia() @ Xm
    return I


def kinetic_energy(model, cache):
    rt = runtime(model)
    return 0.5 * float(np.einsum("ni,nij,nj->", cache.vel, rt.I6, cache.vel))


def potential_energy(model, cache):
    rt = runtime(model)
    pts = np.einsum("nij,nj->ni", cache.oR, rt.com) + cache.op
    return -float((rt.mass * (pts @ model.gravity)).sum())
