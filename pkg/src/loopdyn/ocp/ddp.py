"""Gauss-Newton DDP with multiple-shooting gap handling.

The backward pass folds nonzero dynamics gaps into the value gradients and
the forward pass contracts them through the line-search step length, so the
solver accepts infeasible warm starts.  Regularization on the local control
Hessian escalates on backward-pass failure.  Accepted iterates never increase
the trajectory cost; the report splits wall time into rollout, derivatives,
and backward-pass phases.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


@dataclass
class SolverSettings:
    max_iters: int = 100
    tol_grad: float = 1e-9          # expected-improvement threshold
    tol_gap: float = 1e-7           # infinity norm of shooting gaps
    reg_init: float = 1e-9
    reg_max: float = 1e8
    reg_factor: float = 10.0
    alphas: tuple = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.01)
    armijo: float = 0.05
    workers: int = 1
    verbose: bool = False


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    cost: float
    cost_history: list
    grad_norm: float
    gap_norm: float
    timings: dict = field(default_factory=dict)
    status: str = ""

    def __str__(self):
        return (f"{'converged' if self.converged else 'NOT converged'} in "
                f"{self.iterations} iters, cost {self.cost:.6g}, "
                f"grad {self.grad_norm:.2e}, gap {self.gap_norm:.2e} ({self.status})")


class DdpSolver:
    def __init__(self, problem, settings=None):
        self.problem = problem
        self.settings = settings or SolverSettings()

    # -- helpers ---------------------------------------------------------
    def _gaps(self, xs, us, datas=None):
        """fs[0] = x0 (-) xs[0]; fs[k+1] = f(xs[k], us[k]) (-) xs[k+1]."""
        p = self.problem
        fs = [p.stages[0].space.difference(xs[0], p.x0)] if p.N else []
        for k, stage in enumerate(p.stages):
            xnext = datas[k].xnext if datas is not None else stage.dynamics(xs[k], us[k])[0]
            fs.append(stage.space.difference(xs[k + 1], xnext))
        return fs

    def _compute_datas(self, xs, us):
        p = self.problem
        if self.settings.workers > 1:
            with ThreadPoolExecutor(max_workers=self.settings.workers) as ex:
                datas = list(ex.map(lambda k: p.stages[k].calc_diff(xs[k], us[k]),
                                    range(p.N)))
        else:
            datas = [p.stages[k].calc_diff(xs[k], us[k]) for k in range(p.N)]
        return datas

    def _backward(self, datas, fs, reg, x_last):
        p = self.problem
        _, Vx, Vxx = p.terminal.calc_diff(x_last)
        ks, Ks = [None] * p.N, [None] * p.N
        d1 = d2 = 0.0
        for k in range(p.N - 1, -1, -1):
            d = datas[k]
            # gap-corrected value gradient at the next node
            Vx_hat = Vx + Vxx @ fs[k + 1]
            Qx = d.lx + d.Fx.T @ Vx_hat
            Qu = d.lu + d.Fu.T @ Vx_hat
            FVxx = d.Fx.T @ Vxx
            Qxx = d.lxx + FVxx @ d.Fx
            Qxu = d.lxu + FVxx @ d.Fu
            Quu = d.luu + d.Fu.T @ Vxx @ d.Fu
            Quu_reg = Quu + reg * np.eye(len(Qu))
            try:
                L = scipy.linalg.cho_factor(Quu_reg, lower=True)
            except scipy.linalg.LinAlgError:
                return None
            kff = -scipy.linalg.cho_solve(L, Qu)
            K = -scipy.linalg.cho_solve(L, Qxu.T)
            d1 += float(Qu @ kff)
            d2 += float(kff @ Quu @ kff)
            Vx = Qx + Qxu @ kff
            Vxx = Qxx + Qxu @ K
            Vxx = 0.5 * (Vxx + Vxx.T)
            ks[k], Ks[k] = kff, K
        return ks, Ks, d1, d2

    def _forward(self, xs, us, fs, ks, Ks, alpha):
        p = self.problem
        xs_try = [p.stages[0].space.integrate(xs[0], alpha * fs[0])] if p.N else [np.array(p.x0)]
        us_try = []
        cost = 0.0
        for k, stage in enumerate(p.stages):
            dx = stage.space.difference(xs[k], xs_try[k])
            u = us[k] + alpha * ks[k] + Ks[k] @ dx
            xnext, c = stage.calc(xs_try[k], u)
            # retain a (1 - alpha) fraction of the shooting gap
            xnext = stage.space.integrate(xnext, (alpha - 1.0) * fs[k + 1])
            xs_try.append(xnext)
            us_try.append(u)
            cost += c
        cost += p.terminal.calc(xs_try[-1])
        return xs_try, us_try, cost

    # -- main loop -------------------------------------------------------
    def solve(self, xs0=None, us0=None):
        p = self.problem
        tim = {"rollout": 0.0, "derivatives": 0.0, "backward": 0.0}
        if p.N == 0:
            return ([np.array(p.x0)], [],
                    SolveReport(converged=True, iterations=0,
                                cost=p.terminal.calc(p.x0), cost_history=[],
                                grad_norm=0.0, gap_norm=0.0, timings=tim,
                                status="empty horizon"))
        xs = [np.array(x, dtype=float) for x in xs0] if xs0 is not None \
            else [np.array(p.x0, dtype=float)] * (p.N + 1)
        us = [np.array(u, dtype=float) for u in us0] if us0 is not None \
            else [np.zeros(p.stages[k].nu) for k in range(p.N)]

        s = self.settings
        reg = s.reg_init
        t0 = time.perf_counter()
        datas = self._compute_datas(xs, us)
        tim["derivatives"] += time.perf_counter() - t0
        fs = self._gaps(xs, us, datas)
        cost = sum(d.cost for d in datas) + p.terminal.calc(xs[-1])
        history = [cost]
        grad_norm = np.inf
        status = "iteration limit"
        converged = False
        it = 0
        for it in range(1, s.max_iters + 1):
            t0 = time.perf_counter()
            back = self._backward(datas, fs, reg, xs[-1])
            tim["backward"] += time.perf_counter() - t0
            if back is None:
                reg = max(reg * s.reg_factor, 1e-9)
                if reg > s.reg_max:
                    status = "backward pass failed at maximum regularization"
                    break
                continue
            ks, Ks, d1, d2 = back
            grad_norm = abs(d1)

            accepted = False
            t0 = time.perf_counter()
            for alpha in s.alphas:
                xs_try, us_try, cost_try = self._forward(xs, us, fs, ks, Ks, alpha)
                expected = -(alpha * d1 + 0.5 * alpha**2 * d2)
                if cost_try <= cost - s.armijo * max(expected, 0.0) + 1e-12:
                    accepted = True
                    break
            tim["rollout"] += time.perf_counter() - t0
            if not accepted:
                reg *= s.reg_factor
                if reg > s.reg_max:
                    status = "line search failed at maximum regularization"
                    break
                continue

            xs, us = xs_try, us_try
            reg = max(reg / s.reg_factor, s.reg_init)
            t0 = time.perf_counter()
            datas = self._compute_datas(xs, us)
            tim["derivatives"] += time.perf_counter() - t0
            fs = self._gaps(xs, us, datas)
            cost = sum(d.cost for d in datas) + p.terminal.calc(xs[-1])
            history.append(cost)
            gap_norm = max((np.abs(f).max() for f in fs), default=0.0)
            if s.verbose:
                print(f"  iter {it:3d}  cost {cost:12.6f}  alpha {alpha:.4f}  "
                      f"|d1| {abs(d1):.2e}  gap {gap_norm:.2e}  reg {reg:.1e}")
            if grad_norm < s.tol_grad and gap_norm < s.tol_gap:
                converged = True
                status = "expected improvement below tolerance"
                break
        gap_norm = max((np.abs(f).max() for f in fs), default=0.0)
        report = SolveReport(converged=converged, iterations=it, cost=cost,
                             cost_history=history, grad_norm=grad_norm,
                             gap_norm=gap_norm, timings=tim, status=status)
        return xs, us, report


def solve(problem, xs0=None, us0=None, settings=None):
    """Convenience wrapper returning (Trajectory, SolveReport)."""
    from .problem import Trajectory
    solver = DdpSolver(problem, settings)
    xs, us, report = solver.solve(xs0, us0)
    lams = []
    for k, stage in enumerate(problem.stages):
        _, sol = stage.dynamics(xs[k], us[k])
        lams.append(sol.lam)
    return Trajectory(xs=xs, us=us, lams=lams, cost=report.cost), report
