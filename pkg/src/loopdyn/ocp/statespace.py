"""State manifolds for trajectory optimization.

A state space provides integrate/difference plus their tangent Jacobians, so
the solver never manipulates raw coordinates.  Mechanism states are (q, v)
with q on the configuration manifold; the Euclidean space backs analytic
test problems.
"""

import numpy as np

from .. import model as mod


class EuclideanStateSpace:
    def __init__(self, n):
        self.nx = n
        self.ndx = n

    def integrate(self, x, dx):
        return x + dx

    def difference(self, x1, x2):
        return x2 - x1

    def Jintegrate(self, x, dx):
        return np.eye(self.nx), np.eye(self.nx)

    def Jdifference(self, x1, x2):
        return -np.eye(self.nx), np.eye(self.nx)


class MechStateSpace:
    """States x = (q, v) of a mechanism; tangent dx = (dq, dv)."""

    def __init__(self, model):
        self.model = model
        self.nx = model.nq + model.nv
        self.ndx = 2 * model.nv

    def split(self, x):
        return x[:self.model.nq], x[self.model.nq:]

    def join(self, q, v):
        return np.concatenate([q, v])

    def neutral(self):
        return self.join(self.model.reference_config(), np.zeros(self.model.nv))

    def integrate(self, x, dx):
        q, v = self.split(x)
        nv = self.model.nv
        return self.join(mod.integrate_config(self.model, q, dx[:nv]), v + dx[nv:])

    def difference(self, x1, x2):
        q1, v1 = self.split(x1)
        q2, v2 = self.split(x2)
        return np.concatenate([mod.difference_config(self.model, q1, q2), v2 - v1])

    def Jintegrate(self, x, dx):
        q, _ = self.split(x)
        nv = self.model.nv
        Jq, Jd = mod.integrate_jacobians(self.model, q, dx[:nv])
        Jx = np.eye(self.ndx)
        Jdx = np.eye(self.ndx)
        Jx[:nv, :nv] = Jq
        Jdx[:nv, :nv] = Jd
        return Jx, Jdx

    def Jdifference(self, x1, x2):
        q1, _ = self.split(x1)
        q2, _ = self.split(x2)
        nv = self.model.nv
        J1, J2 = mod.difference_jacobians(self.model, q1, q2)
        Ja = -np.eye(self.ndx)
        Jb = np.eye(self.ndx)
        Ja[:nv, :nv] = J1
        Jb[:nv, :nv] = J2
        return Ja, Jb
