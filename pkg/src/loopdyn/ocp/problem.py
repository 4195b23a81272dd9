"""Shooting problems over constrained mechanism stages."""

from dataclasses import dataclass, field

import numpy as np

from .. import condyn
from .costs import StageContext


@dataclass
class StageModel:
    """Quadratic model of one stage around (x, u)."""
    xnext: np.ndarray
    cost: float
    Fx: np.ndarray
    Fu: np.ndarray
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    lxu: np.ndarray
    luu: np.ndarray


class MechStage:
    """One shooting node: constrained dynamics over dt plus running costs.

    Inside the optimal control problem the dynamics run without Baumgarte
    stabilization, matching the pure acceleration-level constraint.
    """

    def __init__(self, space, constraints, dt, costs=(), name=""):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.space = space
        self.model = space.model
        self.constraints = constraints
        self.dt = dt
        self.costs = list(costs)
        self.nu = self.model.nu
        self.name = name

    def _solve(self, x, u):
        q, v = self.space.split(x)
        return q, v, condyn.constrained_forward_dynamics(
            self.model, self.constraints, q, v, u, baumgarte=None)

    def _integrate(self, q, v, ddq):
        v_next = v + self.dt * ddq
        from ..model import integrate_config
        q_next = integrate_config(self.model, q, self.dt * v_next)
        return np.concatenate([q_next, v_next]), v_next

    def dynamics(self, x, u):
        q, v, sol = self._solve(x, u)
        xnext, _ = self._integrate(q, v, sol.ddq)
        return xnext, sol

    def calc(self, x, u):
        q, v, sol = self._solve(x, u)
        xnext, _ = self._integrate(q, v, sol.ddq)
        ctx = StageContext(self.space, q, v, u, sol=sol,
                           constraints=self.constraints)
        cost = sum(term.value(ctx) for term in self.costs)
        return xnext, cost

    def calc_diff(self, x, u):
        q, v, sol = self._solve(x, u)
        dyn, cache, kd = condyn.constrained_dynamics_derivatives(
            self.model, self.constraints, sol, return_workspace=True)
        xnext, v_next = self._integrate(q, v, sol.ddq)
        nv, nu, ndx = self.model.nv, self.nu, self.space.ndx

        from ..model import integrate_jacobians
        Jq, Jw = integrate_jacobians(self.model, q, self.dt * v_next)
        dt = self.dt
        A, B, C = dyn.ddq_dq, dyn.ddq_dv, dyn.ddq_du
        Fx = np.zeros((ndx, ndx))
        Fu = np.zeros((ndx, nu))
        # v+ = v + dt qdd;  q+ = q (+) dt v+
        dv_dq = dt * A
        dv_dv = np.eye(nv) + dt * B
        dv_du = dt * C
        Fx[:nv, :nv] = Jq + dt * (Jw @ dv_dq)
        Fx[:nv, nv:] = dt * (Jw @ dv_dv)
        Fx[nv:, :nv] = dv_dq
        Fx[nv:, nv:] = dv_dv
        Fu[:nv] = dt * (Jw @ dv_du)
        Fu[nv:] = dv_du

        ctx = StageContext(self.space, q, v, u, cache=cache, kd=kd, sol=sol,
                           dyn=dyn, constraints=self.constraints)
        cost = 0.0
        lx = np.zeros(ndx)
        lu = np.zeros(nu)
        lxx = np.zeros((ndx, ndx))
        lxu = np.zeros((ndx, nu))
        luu = np.zeros((nu, nu))
        for term in self.costs:
            c, tx, tu, txx, txu, tuu = term.quadratic_model(ctx, ndx, nu)
            cost += c
            lx += tx
            lu += tu
            lxx += txx
            lxu += txu
            luu += tuu
        return StageModel(xnext=xnext, cost=cost, Fx=Fx, Fu=Fu, lx=lx, lu=lu,
                          lxx=lxx, lxu=lxu, luu=luu)


class TerminalCost:
    """Terminal node: costs only, no dynamics."""

    def __init__(self, space, costs=()):
        self.space = space
        self.costs = list(costs)

    def calc(self, x):
        q, v = self.space.split(x)
        ctx = StageContext(self.space, q, v)
        return sum(term.value(ctx) for term in self.costs)

    def calc_diff(self, x):
        q, v = self.space.split(x)
        ctx = StageContext(self.space, q, v)
        ndx = self.space.ndx
        cost = 0.0
        lx = np.zeros(ndx)
        lxx = np.zeros((ndx, ndx))
        for term in self.costs:
            c, tx, _, txx, _, _ = term.quadratic_model(ctx, ndx, 0)
            cost += c
            lx += tx
            lxx += txx
        return cost, lx, lxx


@dataclass
class ShootingProblem:
    """Initial state, N running stages, and a terminal cost."""
    x0: np.ndarray
    stages: list
    terminal: TerminalCost
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.stages)

    def rollout(self, us):
        """Forward integration under the given controls, recording forces."""
        if len(us) != self.N:
            raise ValueError(f"expected {self.N} controls, got {len(us)}")
        xs = [np.asarray(self.x0, dtype=float)]
        lams = []
        for stage, u in zip(self.stages, us):
            xnext, sol = stage.dynamics(xs[-1], u)
            xs.append(xnext)
            lams.append(sol.lam)
        return xs, lams

    def cost_along(self, xs, us):
        total = 0.0
        for stage, x, u in zip(self.stages, xs, us):
            _, c = stage.calc(x, u)
            total += c
        return total + self.terminal.calc(xs[-1])


@dataclass
class Trajectory:
    """Solved (or rolled-out) state/control/force sequences."""
    xs: list
    us: list
    lams: list
    cost: float = np.nan

    def states(self):
        return [np.array(x) for x in self.xs]
