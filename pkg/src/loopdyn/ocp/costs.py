"""Weighted-residual cost terms for mechanism stages.

Each term contributes 0.5 * weight * sum_i act_i * r_i(x, u)^2 to the stage
cost; Gauss-Newton curvature is assembled from the residual Jacobians.  Terms
read everything they need from a StageContext, so adding a residual kind
never touches the stage plumbing.
"""

import numpy as np

from .. import closure as clo
from .. import model as mod
from .. import rba
from ..spatial import exp6, jlog6, log6


class StageContext:
    """Lazily computed per-(x, u) quantities shared by the cost terms."""

    def __init__(self, space, q, v, u=None, cache=None, kd=None, sol=None,
                 dyn=None, constraints=None):
        self.model = space.model
        self.space = space
        self.q = q
        self.v = v
        self.u = u
        self.sol = sol
        self.dyn = dyn
        self.constraints = constraints
        self._cache = cache
        self._kd = kd

    @property
    def cache(self):
        if self._cache is None:
            self._cache = rba.forward_kinematics(self.model, self.q, self.v)
        return self._cache

    @property
    def kd(self):
        if self._kd is None:
            self._kd = rba.kinematics_derivatives(self.model, self.cache)
        return self._kd

    def lam_block(self, name):
        for i, c in enumerate(self.constraints):
            if c.name == name:
                return slice(6 * i, 6 * (i + 1))
        raise KeyError(f"no active constraint named {name!r}")


class CostTerm:
    """Base: weight, per-coordinate activation, and a named residual."""

    def __init__(self, weight, activation=None, name=""):
        self.weight = weight
        self.activation = None if activation is None else np.asarray(activation, dtype=float)
        self.name = name or type(self).__name__

    def residual(self, ctx):
        raise NotImplementedError

    def jacobians(self, ctx):
        raise NotImplementedError

    def _act(self, k):
        return np.ones(k) if self.activation is None else self.activation

    def value(self, ctx):
        r = self.residual(ctx)
        return 0.5 * self.weight * float(self._act(len(r)) @ (r * r))

    def quadratic_model(self, ctx, ndx, nu):
        """(cost, lx, lu, lxx, lxu, luu) Gauss-Newton contributions."""
        r = self.residual(ctx)
        Jx, Ju = self.jacobians(ctx)
        a = self.weight * self._act(len(r))
        ar = a * r
        cost = 0.5 * float(r @ ar)
        lx = Jx.T @ ar
        lxx = Jx.T @ (a[:, None] * Jx)
        if Ju is None:
            lu = np.zeros(nu)
            lxu = np.zeros((ndx, nu))
            luu = np.zeros((nu, nu))
        else:
            lu = Ju.T @ ar
            lxu = Jx.T @ (a[:, None] * Ju)
            luu = Ju.T @ (a[:, None] * Ju)
        return cost, lx, lu, lxx, lxu, luu


class StateRegCost(CostTerm):
    """Tangent-space distance to a reference state."""

    def __init__(self, space, x_ref, weight, activation=None, name="state_reg"):
        super().__init__(weight, activation, name)
        self.space = space
        self.x_ref = np.asarray(x_ref, dtype=float)

    def residual(self, ctx):
        x = ctx.space.join(ctx.q, ctx.v)
        return self.space.difference(self.x_ref, x)

    def jacobians(self, ctx):
        x = ctx.space.join(ctx.q, ctx.v)
        _, J2 = self.space.Jdifference(self.x_ref, x)
        return J2, None


class ControlRegCost(CostTerm):
    def __init__(self, nu, weight, u_ref=None, activation=None, name="control_reg"):
        super().__init__(weight, activation, name)
        self.u_ref = np.zeros(nu) if u_ref is None else np.asarray(u_ref, dtype=float)

    def residual(self, ctx):
        return ctx.u - self.u_ref

    def jacobians(self, ctx):
        nu = len(self.u_ref)
        return np.zeros((nu, ctx.space.ndx)), np.eye(nu)


class ForceRegCost(CostTerm):
    """Contact-force regularization toward a reference wrench."""

    def __init__(self, constraint_name, f_ref, weight, activation=None, name=None):
        super().__init__(weight, activation, name or f"force_reg_{constraint_name}")
        self.constraint_name = constraint_name
        self.f_ref = np.asarray(f_ref, dtype=float)

    def residual(self, ctx):
        s = ctx.lam_block(self.constraint_name)
        return ctx.sol.lam[s] - self.f_ref

    def jacobians(self, ctx):
        s = ctx.lam_block(self.constraint_name)
        Jx = np.hstack([ctx.dyn.lam_dq[s], ctx.dyn.lam_dv[s]])
        return Jx, ctx.dyn.lam_du[s]


class ComVelocityCost(CostTerm):
    def __init__(self, v_ref, weight, activation=None, name="com_velocity"):
        super().__init__(weight, activation, name)
        self.v_ref = np.asarray(v_ref, dtype=float)

    def residual(self, ctx):
        return rba.com_velocity(ctx.model, ctx.cache) - self.v_ref

    def jacobians(self, ctx):
        dq, dv = rba.com_velocity_derivatives(ctx.model, ctx.cache, ctx.kd)
        return np.hstack([dq, dv]), None


class ComElevationCost(CostTerm):
    """Track a reference CoM height; planar CoM motion is not penalized."""

    def __init__(self, z_ref, weight, name="com_elevation"):
        super().__init__(weight, None, name)
        self.z_ref = float(z_ref)

    def residual(self, ctx):
        return np.array([rba.com_position(ctx.model, ctx.cache)[2] - self.z_ref])

    def jacobians(self, ctx):
        Jc = rba.com_jacobian(ctx.model, ctx.cache, ctx.kd)
        Jx = np.zeros((1, ctx.space.ndx))
        Jx[0, :ctx.model.nv] = Jc[2]
        return Jx, None


class ComForwardCost(CostTerm):
    """Forward CoM position toward a target (terminal displacement cost)."""

    def __init__(self, x_target, weight, name="com_forward"):
        super().__init__(weight, None, name)
        self.x_target = float(x_target)

    def residual(self, ctx):
        return np.array([rba.com_position(ctx.model, ctx.cache)[0] - self.x_target])

    def jacobians(self, ctx):
        Jc = rba.com_jacobian(ctx.model, ctx.cache, ctx.kd)
        Jx = np.zeros((1, ctx.space.ndx))
        Jx[0, :ctx.model.nv] = Jc[0]
        return Jx, None


class FramePlacementCost(CostTerm):
    """6D placement residual log(M_ref^-1 M_frame), activation-selectable."""

    def __init__(self, frame, M_ref, weight, activation=None, name=None):
        super().__init__(weight, activation, name or f"placement_{frame}")
        self.frame = frame
        self.M_ref = M_ref

    def residual(self, ctx):
        M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
        return log6(self.M_ref.inverse() * M)

    def jacobians(self, ctx):
        M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
        dM = self.M_ref.inverse() * M
        Jf, _, _, _ = rba.frame_kin_blocks(ctx.model, ctx.cache, ctx.kd, self.frame)
        Jx = np.zeros((6, ctx.space.ndx))
        Jx[:, :ctx.model.nv] = jlog6(dM) @ Jf
        return Jx, None


class FrameVelocityCost(CostTerm):
    """Spatial velocity of a frame (local coordinates), usually toward zero."""

    def __init__(self, frame, weight, v_ref=None, activation=None, name=None):
        super().__init__(weight, activation, name or f"velocity_{frame}")
        self.frame = frame
        self.v_ref = np.zeros(6) if v_ref is None else np.asarray(v_ref, dtype=float)

    def residual(self, ctx):
        return rba.frame_velocity(ctx.model, ctx.cache, self.frame) - self.v_ref

    def jacobians(self, ctx):
        Jf, Vqf, _, _ = rba.frame_kin_blocks(ctx.model, ctx.cache, ctx.kd, self.frame)
        return np.hstack([Vqf, Jf]), None


class FrameHeightCost(CostTerm):
    """World height of a frame origin against a target."""

    def __init__(self, frame, z_target, weight, name=None):
        super().__init__(weight, None, name or f"height_{frame}")
        self.frame = frame
        self.z_target = float(z_target)

    def residual(self, ctx):
        M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
        return np.array([M.translation[2] - self.z_target])

    def jacobians(self, ctx):
        M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
        Jf, _, _, _ = rba.frame_kin_blocks(ctx.model, ctx.cache, ctx.kd, self.frame)
        Jx = np.zeros((1, ctx.space.ndx))
        Jx[0, :ctx.model.nv] = (M.rotation @ Jf[:3])[2]
        return Jx, None


class FlyHighCost(CostTerm):
    """One-sided penalty when a frame drops below a clearance height."""

    def __init__(self, frame, clearance, weight, name=None):
        super().__init__(weight, None, name or f"fly_high_{frame}")
        self.frame = frame
        self.clearance = float(clearance)

    def _height(self, ctx):
        M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
        return M.translation[2] - self.clearance

    def residual(self, ctx):
        h = self._height(ctx)
        return np.array([min(0.0, h)])

    def jacobians(self, ctx):
        Jx = np.zeros((1, ctx.space.ndx))
        if self._height(ctx) < 0.0:
            M = rba.frame_placement(ctx.model, ctx.cache, self.frame)
            Jf, _, _, _ = rba.frame_kin_blocks(ctx.model, ctx.cache, ctx.kd, self.frame)
            Jx[0, :ctx.model.nv] = (M.rotation @ Jf[:3])[2]
        return Jx, None


class SerialTrackingCost(CostTerm):
    """Tangent tracking of the serial-coordinate block of a closed state.

    The residual stacks the serial-model configuration difference to the
    target and the serial velocity error, both extracted through the
    coordinate embedding of the serial model inside the closed one.
    """

    def __init__(self, closed_model, serial_model, q_target, v_target,
                 weight=1.0, name="serial_tracking"):
        super().__init__(weight, None, name)
        self.serial = serial_model
        self.q_map, self.v_map = mod.serial_coordinate_maps(closed_model, serial_model)
        self.q_target = np.asarray(q_target, dtype=float)
        self.v_target = np.asarray(v_target, dtype=float)

    def residual(self, ctx):
        q_s = ctx.q[self.q_map]
        v_s = ctx.v[self.v_map]
        return np.concatenate([
            mod.difference_config(self.serial, self.q_target, q_s),
            v_s - self.v_target])

    def jacobians(self, ctx):
        ns = self.serial.nv
        q_s = ctx.q[self.q_map]
        _, J2 = mod.difference_jacobians(self.serial, self.q_target, q_s)
        nv = ctx.model.nv
        Jx = np.zeros((2 * ns, ctx.space.ndx))
        # serial tangent coordinates are a subset of the closed tangent
        Jx[:ns, self.v_map] = J2
        Jx[ns:, nv + self.v_map] = np.eye(ns)
        return Jx, None

    def tracking_error(self, ctx):
        return float(np.linalg.norm(self.residual(ctx)))
