"""Task builders: squat, walk, jump, and stairs shooting problems.

A task configuration (YAML or dict) fixes the horizon, contact schedule,
targets, and weights; the builder realizes it on any mechanism exposing the
named foot frames, so the same document drives the closed model and its
serial approximation.
"""

from pathlib import Path

import numpy as np
import yaml

from .. import closure as clo
from .. import condyn, rba
from ..condyn import ConstraintSet
from ..errors import ModelError
from ..spatial import Se3Placement
from .costs import (
    ComElevationCost,
    ComForwardCost,
    ComVelocityCost,
    ControlRegCost,
    FlyHighCost,
    ForceRegCost,
    FramePlacementCost,
    FrameVelocityCost,
    FrameHeightCost,
    StateRegCost,
)
from .problem import MechStage, ShootingProblem, TerminalCost
from .statespace import MechStateSpace

TASK_DIR = Path(__file__).resolve().parents[1] / "tasks"

TASK_KINDS = ("squat", "walk", "jump", "stairs")


def load_task_config(source):
    """Load a task configuration from YAML path, YAML text, or dict."""
    if isinstance(source, dict):
        cfg = dict(source)
    else:
        if isinstance(source, Path) or ("\n" not in str(source)):
            text = Path(source).read_text()
        else:
            text = source
        cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict) or "task" not in cfg:
        raise ModelError("task config must be a mapping with a 'task' field")
    if cfg["task"] not in TASK_KINDS:
        raise ModelError(f"unknown task {cfg['task']!r}; expected one of {TASK_KINDS}")
    defaults_file = TASK_DIR / f"{cfg['task']}.yaml"
    if defaults_file.exists():
        defaults = yaml.safe_load(defaults_file.read_text())
        merged = dict(defaults)
        merged_weights = dict(defaults.get("weights", {}))
        merged.update(cfg)
        merged_weights.update(cfg.get("weights", {}) or {})
        merged["weights"] = merged_weights
        cfg = merged
    return cfg


def state_activation(model, base_pos=1.0, base_ori=1.0, joints=1.0,
                     base_vel=1.0, joint_vel=1.0, base_pos_xy=None):
    """Per-coordinate activation weights for the state-regularization cost."""
    nv = model.nv
    act = np.empty(2 * nv)
    for j in model.joints:
        s = j.idx_v
        if j.kind == "free_flyer":
            xy = base_pos if base_pos_xy is None else base_pos_xy
            act[s:s + 3] = [xy, xy, base_pos]
            act[s + 3:s + 6] = base_ori
            act[nv + s:nv + s + 6] = base_vel
        else:
            act[s] = joints
            act[nv + s] = joint_vel
    return act


class _TaskBuilder:
    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.space = MechStateSpace(model)
        self.dt = float(cfg.get("dt", 0.02))
        self.feet = list(cfg.get("feet", ["sole_l", "sole_r"]))
        self.w = cfg.get("weights", {})
        q_ref = model.reference_config()
        self.q_ref = q_ref
        self.x_ref = np.concatenate([q_ref, np.zeros(model.nv)])
        cache = rba.forward_kinematics(model, q_ref)
        self.anchors = {f: rba.frame_placement(model, cache, f) for f in self.feet}
        self.com0 = rba.com_position(model, cache)
        self.weight_force = model.total_mass() * 9.81
        self.closures = clo.model_closures(model)
        self.schedule = []          # per-stage tuple of feet in contact
        self.stages = []
        self.impacts = []           # (node, foot, target placement)
        self._anchor_now = dict(self.anchors)

    def contact_set(self, feet_in_contact):
        contacts = [clo.ClosureConstraint.foot_ground(
            self.model, f, self._anchor_now[f]) for f in feet_in_contact]
        return ConstraintSet(self.closures + contacts)

    def reg_costs(self, feet_in_contact, act=None):
        terms = [
            StateRegCost(self.space, self.x_ref, self.w.get("state_reg", 0.1),
                         activation=act),
            ControlRegCost(self.model.nu, self.w.get("control_reg", 1e-4)),
        ]
        n_c = len(feet_in_contact)
        for f in self.feet:
            if f in feet_in_contact:
                fz = self.weight_force / n_c
                f_ref = np.array([0.0, 0.0, fz, 0.0, 0.0, 0.0])
                terms.append(ForceRegCost(f"contact_{f}", f_ref,
                                          self.w.get("force_reg", 1e-6)))
        return terms

    def add_stage(self, feet_in_contact, extra_costs=(), act=None):
        cs = self.contact_set(feet_in_contact)
        costs = self.reg_costs(feet_in_contact, act=act) + list(extra_costs)
        stage = MechStage(self.space, cs, self.dt, costs,
                          name="+".join(feet_in_contact) or "flight")
        self.stages.append(stage)
        self.schedule.append(tuple(feet_in_contact))
        return stage

    def impact_costs(self, foot, target):
        """Land flat, still, and at the correct height at a swing's end."""
        return [
            FramePlacementCost(foot, target, self.w.get("impact_placement", 1e4)),
            FrameVelocityCost(foot, self.w.get("impact_velocity", 1e2)),
            FrameHeightCost(foot, target.translation[2],
                            self.w.get("step_height", 1e4)),
        ]

    def x0(self):
        return self.x_ref.copy()

    def problem(self, terminal_costs):
        prob = ShootingProblem(
            x0=self.x0(), stages=self.stages,
            terminal=TerminalCost(self.space, terminal_costs))
        prob.meta = {
            "dt": self.dt,
            "schedule": self.schedule,
            "feet": self.feet,
            "impacts": self.impacts,
            "anchors": {f: (m.rotation.copy(), m.translation.copy())
                        for f, m in self.anchors.items()},
            "com0": self.com0.copy(),
            "task": self.cfg["task"],
            "config": self.cfg,
        }
        return prob


def _build_squat(model, cfg):
    b = _TaskBuilder(model, cfg)
    duration = float(cfg.get("duration", 1.2))
    N = max(1, round(duration / b.dt))
    rho = float(cfg.get("target_elevation", 0.85))
    z0 = b.com0[2]
    amp = (1.0 - rho) * z0
    act = state_activation(model,
                           base_pos=cfg.get("base_reg", 0.0),
                           base_ori=1.0, joints=1.0,
                           base_vel=1.0, joint_vel=1.0)
    w_track = cfg.get("weights", {}).get("com_track", 100.0)
    for k in range(N):
        t = (k + 1) * b.dt
        z_ref = z0 - amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / duration))
        b.add_stage(b.feet, [ComElevationCost(z_ref, w_track)], act=act)
    terminal = [
        StateRegCost(b.space, b.x_ref, cfg.get("weights", {}).get("terminal_state", 10.0),
                     activation=act),
        ComElevationCost(z0, w_track),
    ]
    return b.problem(terminal)


def _walk_like(model, cfg, step_heights=None):
    b = _TaskBuilder(model, cfg)
    w = cfg.get("weights", {})
    n_ds = int(cfg.get("n_ds", 8))
    n_ss = int(cfg.get("n_ss", 14))
    steps = int(cfg.get("steps", 4))
    v_target = float(cfg.get("velocity", 0.4))
    clearance = float(cfg.get("step_clearance", 0.04))
    act = state_activation(model, base_pos=0.0, base_ori=1.0, joints=1.0,
                           base_vel=1.0, joint_vel=1.0,
                           base_pos_xy=0.0)
    com_vel = ComVelocityCost(np.array([v_target, 0.0, 0.0]),
                              w.get("com_velocity", 20.0),
                              activation=[1.0, 1.0, 0.0])
    com_height = ComElevationCost(b.com0[2], w.get("com_height", 20.0))
    running = [com_vel, com_height]

    swing_order = [b.feet[i % 2] for i in range(steps)]
    t_halfcycle = (n_ss + n_ds) * b.dt
    stride = 2.0 * v_target * t_halfcycle

    for _ in range(n_ds):
        b.add_stage(b.feet, running, act=act)
    for i, swing in enumerate(swing_order):
        stance = [f for f in b.feet if f != swing]
        target = b._anchor_now[swing]
        advance = stride / 2.0 if i == 0 else stride
        new_t = target.translation.copy()
        new_t[0] += advance
        if step_heights is not None:
            new_t[2] += step_heights[i]
        target = Se3Placement(target.rotation.copy(), new_t)
        for k in range(n_ss):
            extra = list(running)
            mid_swing = 0.25 * n_ss <= k <= 0.75 * n_ss
            if mid_swing:
                z_clear = max(target.translation[2],
                              b._anchor_now[swing].translation[2]) + clearance
                extra.append(FlyHighCost(swing, z_clear, w.get("fly_high", 1e3)))
            if k == n_ss - 1:
                extra += b.impact_costs(swing, target)
                b.impacts.append((len(b.stages), swing, target))
            b.add_stage(stance, extra, act=act)
        b._anchor_now = dict(b._anchor_now)
        b._anchor_now[swing] = target
        for _ in range(n_ds):
            b.add_stage(b.feet, running, act=act)

    T_total = len(b.stages) * b.dt
    terminal = [
        StateRegCost(b.space, b.x_ref, w.get("terminal_state", 1.0), activation=act),
        ComForwardCost(b.com0[0] + v_target * T_total,
                       w.get("forward_terminal", 500.0)),
        ComElevationCost(b.com0[2], w.get("com_height", 20.0)),
    ]
    return b.problem(terminal)


def _build_walk(model, cfg):
    return _walk_like(model, cfg, step_heights=None)


def _build_stairs(model, cfg):
    steps = int(cfg.get("steps", 4))
    rise = float(cfg.get("step_height", 0.04))
    return _walk_like(model, cfg, step_heights=[rise] * steps)


def _build_jump(model, cfg):
    b = _TaskBuilder(model, cfg)
    w = cfg.get("weights", {})
    n_launch = int(cfg.get("n_launch", 20))
    n_flight = int(cfg.get("n_flight", 14))
    n_land = int(cfg.get("n_land", 20))
    act = state_activation(model, base_pos=0.0, base_ori=1.0, joints=1.0,
                           base_vel=0.3, joint_vel=0.3, base_pos_xy=0.1)
    t_f = n_flight * b.dt
    apex_gain = 9.81 * t_f**2 / 8.0
    z_apex = b.com0[2] + apex_gain
    for _ in range(n_launch):
        b.add_stage(b.feet, [], act=act)
    apex_node = n_launch + n_flight // 2
    for k in range(n_flight):
        extra = []
        if n_launch + k == apex_node:
            extra.append(ComElevationCost(z_apex, w.get("apex", 1e4),
                                          name="apex_elevation"))
        if k == n_flight - 1:
            for f in b.feet:
                extra += b.impact_costs(f, b.anchors[f])
                b.impacts.append((len(b.stages), f, b.anchors[f]))
        b.add_stage([], extra, act=act)
    for _ in range(n_land):
        b.add_stage(b.feet, [], act=act)
    terminal = [
        StateRegCost(b.space, b.x_ref, w.get("terminal_state", 50.0), activation=act),
        ComElevationCost(b.com0[2], w.get("com_track", 100.0)),
    ]
    prob = b.problem(terminal)
    prob.meta["apex_node"] = apex_node
    prob.meta["flight"] = (n_launch, n_launch + n_flight)
    prob.meta["apex_target"] = z_apex
    return prob


_BUILDERS = {
    "squat": _build_squat,
    "walk": _build_walk,
    "jump": _build_jump,
    "stairs": _build_stairs,
}


def build_task(model, config):
    """Realize a task configuration as a ShootingProblem on the model.

    Raises ModelError for unknown kinds, missing targets, or schedules that
    put costs on contacts that cannot exist (flight stages keep the loop
    closures only).
    """
    cfg = load_task_config(config)
    for f in cfg.get("feet", ["sole_l", "sole_r"]):
        model.frame_id(f)
    return _BUILDERS[cfg["task"]](model, cfg)


def initial_guess(problem):
    """Hold-the-pose states with quasi-static controls per contact phase."""
    xs = [problem.x0.copy() for _ in range(problem.N + 1)]
    us = []
    cache_u = {}
    for stage in problem.stages:
        key = stage.name
        if key not in cache_u:
            q = stage.space.split(problem.x0)[0]
            if any(c.joint2 == -1 for c in stage.constraints):
                cache_u[key] = condyn.quasi_static_control(
                    stage.model, stage.constraints, q)
            else:
                cache_u[key] = np.zeros(stage.nu)
        us.append(cache_u[key].copy())
    return xs, us


def kinematic_warm_start(problem):
    """Initial guess following the task's posture references kinematically.

    Squat-like tasks get base-height profiles projected onto the constraint
    manifold with quasi-static controls; other tasks fall back to the
    hold-the-pose guess.  Long-horizon tracking problems are badly
    conditioned enough that this matters.
    """
    meta = problem.meta
    if meta.get("task") != "squat":
        return initial_guess(problem)
    space = problem.stages[0].space
    model = space.model
    cfg = meta["config"]
    dt = meta["dt"]
    duration = float(cfg.get("duration", problem.N * dt))
    rho = float(cfg.get("target_elevation", 0.85))
    z0 = meta["com0"][2]
    amp = (1.0 - rho) * z0
    q_prev = space.split(problem.x0)[0]
    qs = [q_prev]
    for k in range(problem.N):
        t = (k + 1) * dt
        dz = amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / duration))
        qg = q_prev.copy()
        qg[2] = problem.x0[2] - dz
        try:
            qk = condyn.project_to_manifold(model, problem.stages[k].constraints,
                                            qg, locked=[0, 1, 2])
        except Exception:
            qk = q_prev
        qs.append(qk)
        q_prev = qk
    from ..model import difference_config
    xs = []
    for k, qk in enumerate(qs):
        if k < problem.N:
            vk = difference_config(model, qk, qs[k + 1]) / dt
        else:
            vk = np.zeros(model.nv)
        xs.append(np.concatenate([qk, vk]))
    us = []
    for k, stage in enumerate(problem.stages):
        try:
            us.append(condyn.quasi_static_control(model, stage.constraints, qs[k]))
        except Exception:
            us.append(np.zeros(stage.nu))
    return xs, us
