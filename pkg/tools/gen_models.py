#!/usr/bin/env python3
"""Authoring script for the bundled toybiped and parallel-leg models.

Computes linkage reference angles and weld-frame placements numerically so
that every closure is exactly satisfied at the reference configuration, and
sets the base height so both soles touch z = 0.  The emitted YAML files are
the frozen record; re-run after editing geometry constants below.
"""

import sys
from pathlib import Path

import numpy as np
import yaml

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from loopdyn import closure as clo
from loopdyn import condyn, rba
from loopdyn import model as mod
from loopdyn.condyn import ConstraintSet
from loopdyn.spatial import Se3Placement, exp3, rot_to_quat

OUT = Path(__file__).resolve().parents[1] / "src" / "loopdyn" / "models"


def rod_inertia(mass, length, axis="z"):
    """Thin-rod inertia about its com, long axis given."""
    i_perp = mass * length**2 / 12.0
    i_axis = max(1e-7, mass * 1e-4)
    vals = {"x": [i_axis, i_perp, i_perp],
            "y": [i_perp, i_axis, i_perp],
            "z": [i_perp, i_perp, i_axis]}[axis]
    return [float(v) for v in vals]


def ry(theta):
    return exp3([0.0, theta, 0.0])


def angle_of(dir3):
    """Rotation about +y sending (0,0,-1) to the given unit x-z direction."""
    return float(np.arctan2(-dir3[0], -dir3[2]))


def two_bar_ik(base, target, l1, l2, elbow_sign):
    """Planar (x-z) two-bar chain from base to target; returns joint dirs.

    Gives the elbow point such that |base-elbow| = l1, |elbow-target| = l2.
    """
    d = np.asarray(target, dtype=float) - np.asarray(base, dtype=float)
    r = np.hypot(d[0], d[2])
    if r > l1 + l2 - 1e-9 or r < abs(l1 - l2) + 1e-9:
        raise ValueError(f"two-bar chain cannot reach: r={r:.4f}, l1+l2={l1+l2:.4f}")
    # circle intersection in the x-z plane
    a = (l1**2 - l2**2 + r**2) / (2 * r)
    h = np.sqrt(max(l1**2 - a**2, 0.0))
    ux = d[[0, 2]] / r
    perp = np.array([-ux[1], ux[0]]) * elbow_sign
    exz = np.array([base[0], base[2]]) + a * ux + h * perp
    elbow = np.array([exz[0], base[1], exz[1]])
    return elbow


# ---------------------------------------------------------------------------
# toybiped: free-flyer + 6-dof legs + four-bar knee transmission

THIGH_LEN = 0.30
SHANK_LEN = 0.30
HIP_DROP = [0.04, 0.04]          # yaw->roll, roll->pitch vertical offsets
HIP_Y = 0.08
ANKLE_DROP = 0.03                # ankle_pitch -> ankle_roll
SOLE_DROP = 0.05                 # ankle_roll -> sole
REF_HIP_PITCH = -0.30
REF_KNEE = 0.60
REF_ANKLE_PITCH = -0.30

# knee four-bar, in the thigh frame (origin at hip_pitch):
MOTOR_PIN = np.array([-0.055, 0.0, -0.10])   # on the thigh
CRANK_LEN = 0.065
SHANK_ATT = np.array([-0.045, 0.0, -0.055])  # in the shank frame (origin at knee)
REF_MOTOR = 1.55                             # crank angle at the reference


def knee_linkage_geometry():
    """Reference geometry of the knee four-bar in the thigh frame."""
    knee = np.array([0.0, 0.0, -THIGH_LEN])
    crank_tip = MOTOR_PIN + CRANK_LEN * (ry(REF_MOTOR) @ np.array([0.0, 0.0, -1.0]))
    s_att_thigh = knee + ry(REF_KNEE) @ SHANK_ATT
    rod_vec = s_att_thigh - crank_tip
    rod_len = float(np.linalg.norm(rod_vec))
    return knee, crank_tip, s_att_thigh, rod_vec / rod_len, rod_len


def knee_motor_angle(theta_knee, guess):
    """Crank angle closing the knee four-bar at the given knee angle."""
    knee = np.array([0.0, 0.0, -THIGH_LEN])
    _, _, _, _, rod_len = knee_linkage_geometry()
    s_att = knee + ry(theta_knee) @ SHANK_ATT

    def clearance(theta_m):
        tip = MOTOR_PIN + CRANK_LEN * (ry(theta_m) @ np.array([0.0, 0.0, -1.0]))
        return np.linalg.norm(s_att - tip) - rod_len

    # bisection around the guess
    lo, hi = guess - 1.4, guess + 1.4
    f_guess = clearance(guess)
    theta = None
    for sign in (1, -1):
        a, b = guess, guess + sign * 1.4
        fa = f_guess
        for _ in range(60):
            mid = 0.5 * (a + b)
            fm = clearance(mid)
            if fa * fm <= 0:
                b = mid
            else:
                a, fa = mid, fm
        if abs(clearance(0.5 * (a + b))) < 1e-9:
            theta = 0.5 * (a + b)
            break
    if theta is None:
        raise ValueError(f"knee linkage cannot close at knee={theta_knee:.3f}")
    return theta


def scan_knee_transmission():
    print("knee transmission scan (knee angle, motor angle, ratio dm/dk):")
    guess = REF_MOTOR
    h = 1e-5
    for tk in np.arange(-0.20, 1.61, 0.1):
        try:
            tm = knee_motor_angle(tk, guess)
            ratio = (knee_motor_angle(tk + h, tm) - knee_motor_angle(tk - h, tm)) / (2 * h)
            guess = tm
            print(f"  {tk:+.2f}  {tm:+.3f}  {ratio:+.3f}")
        except ValueError as e:
            print(f"  {tk:+.2f}  UNREACHABLE ({e})")


def build_toybiped():
    knee, crank_tip, s_att_thigh, rod_dir, rod_len = knee_linkage_geometry()
    half = rod_len / 2.0
    # rodA hangs from the crank tip; its -z axis points along the rod at its
    # reference angle, computed in the crank frame
    u_crank = ry(REF_MOTOR).T @ rod_dir
    ref_rod_a = angle_of(u_crank)
    # rodB hangs from the shank attachment toward the crank tip
    u_shank = ry(REF_KNEE).T @ (-rod_dir)
    ref_rod_b = angle_of(u_shank)

    bodies = [
        {"name": "pelvis", "mass": 10.0, "com": [0.0, 0.0, 0.05],
         "inertia": [0.15, 0.10, 0.12]},
    ]
    joints = [
        {"name": "root", "kind": "free_flyer", "parent": "world", "child": "pelvis"},
    ]
    frames = []
    closures = []
    reference = {}
    serial = []

    for side, sgn in (("l", 1.0), ("r", -1.0)):
        def n(base):
            return f"{base}_{side}"
        bodies += [
            {"name": n("hip1"), "mass": 0.5, "com": [0.0, 0.0, -0.02],
             "inertia": [5.0e-4, 5.0e-4, 5.0e-4]},
            {"name": n("hip2"), "mass": 0.5, "com": [0.0, 0.0, -0.02],
             "inertia": [5.0e-4, 5.0e-4, 5.0e-4]},
            {"name": n("thigh"), "mass": 2.0, "com": [0.0, 0.0, -0.15],
             "inertia": rod_inertia(2.0, THIGH_LEN)},
            {"name": n("shank"), "mass": 1.2, "com": [0.0, 0.0, -0.15],
             "inertia": rod_inertia(1.2, SHANK_LEN)},
            {"name": n("crank"), "mass": 0.10, "com": [0.0, 0.0, -CRANK_LEN / 2],
             "inertia": rod_inertia(0.10, CRANK_LEN)},
            {"name": n("rod_a"), "mass": 0.08, "com": [0.0, 0.0, -half / 2],
             "inertia": rod_inertia(0.08, half)},
            {"name": n("rod_b"), "mass": 0.08, "com": [0.0, 0.0, -half / 2],
             "inertia": rod_inertia(0.08, half)},
            {"name": n("ankle1"), "mass": 0.3, "com": [0.0, 0.0, -0.015],
             "inertia": [3.0e-4, 3.0e-4, 3.0e-4]},
            {"name": n("foot"), "mass": 0.8, "com": [0.02, 0.0, -0.02],
             "inertia": [5.3e-4, 1.8e-3, 2.1e-3]},
        ]
        joints += [
            {"name": n("hip_yaw"), "kind": "revolute", "parent": "pelvis",
             "child": n("hip1"), "axis": [0, 0, 1],
             "xyz": [0.0, sgn * HIP_Y, 0.0], "actuated": True},
            {"name": n("hip_roll"), "kind": "revolute", "parent": n("hip1"),
             "child": n("hip2"), "axis": [1, 0, 0],
             "xyz": [0.0, 0.0, -HIP_DROP[0]], "actuated": True},
            {"name": n("hip_pitch"), "kind": "revolute", "parent": n("hip2"),
             "child": n("thigh"), "axis": [0, 1, 0],
             "xyz": [0.0, 0.0, -HIP_DROP[1]], "actuated": True},
            {"name": n("knee"), "kind": "revolute", "parent": n("thigh"),
             "child": n("shank"), "axis": [0, 1, 0],
             "xyz": [0.0, 0.0, -THIGH_LEN]},
            {"name": n("knee_motor"), "kind": "revolute", "parent": n("thigh"),
             "child": n("crank"), "axis": [0, 1, 0],
             "xyz": [float(MOTOR_PIN[0]), 0.0, float(MOTOR_PIN[2])],
             "actuated": True},
            {"name": n("rod_pin_a"), "kind": "revolute", "parent": n("crank"),
             "child": n("rod_a"), "axis": [0, 1, 0],
             "xyz": [0.0, 0.0, -CRANK_LEN]},
            {"name": n("rod_pin_b"), "kind": "revolute", "parent": n("shank"),
             "child": n("rod_b"), "axis": [0, 1, 0],
             "xyz": [float(SHANK_ATT[0]), 0.0, float(SHANK_ATT[2])]},
            {"name": n("ankle_pitch"), "kind": "revolute", "parent": n("shank"),
             "child": n("ankle1"), "axis": [0, 1, 0],
             "xyz": [0.0, 0.0, -SHANK_LEN], "actuated": True},
            {"name": n("ankle_roll"), "kind": "revolute", "parent": n("ankle1"),
             "child": n("foot"), "axis": [1, 0, 0],
             "xyz": [0.0, 0.0, -ANKLE_DROP], "actuated": True},
        ]
        frames += [
            {"name": n("rod_cut_a"), "body": n("rod_a"), "xyz": [0.0, 0.0, -half]},
            # placeholder: replaced below by the numerically closed placement
            {"name": n("rod_cut_b"), "body": n("rod_b"), "xyz": [0.0, 0.0, -half]},
            {"name": n("sole"), "body": n("foot"), "xyz": [0.02, 0.0, -SOLE_DROP]},
        ]
        closures.append({"name": n("knee_loop"),
                         "frame1": n("rod_cut_a"), "frame2": n("rod_cut_b")})
        reference.update({
            n("hip_pitch"): REF_HIP_PITCH,
            n("knee"): REF_KNEE,
            n("knee_motor"): REF_MOTOR,
            n("rod_pin_a"): round(ref_rod_a, 9),
            n("rod_pin_b"): round(ref_rod_b, 9),
            n("ankle_pitch"): REF_ANKLE_PITCH,
        })
        serial += [n("hip_yaw"), n("hip_roll"), n("hip_pitch"), n("knee"),
                   n("ankle_pitch"), n("ankle_roll")]

    doc = {
        "name": "toybiped",
        "gravity": [0.0, 0.0, -9.81],
        "bodies": bodies,
        "joints": joints,
        "frames": frames,
        "closures": closures,
        "serial_chain": serial,
        "reference": {"root": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], **reference},
    }

    # close the welds exactly: recompute frame2 placements from FK
    m = mod.load_model({**doc, "closures": []})
    cache = rba.forward_kinematics(m, m.reference_config())
    for side in ("l", "r"):
        fa = rba.frame_placement(m, cache, f"rod_cut_a_{side}")
        jb = m.joint(f"rod_pin_b_{side}")
        Mb = cache.world_placement(m.joint_id(f"rod_pin_b_{side}"))
        F2 = Mb.inverse() * fa
        for fr in doc["frames"]:
            if fr["name"] == f"rod_cut_b_{side}":
                fr["xyz"] = [float(x) for x in F2.translation]
                fr["quat"] = [float(x) for x in rot_to_quat(F2.rotation)]

    # set the base height so the soles touch z = 0 at the reference
    m = mod.load_model({**doc, "closures": []})
    cache = rba.forward_kinematics(m, m.reference_config())
    sole = rba.frame_placement(m, cache, "sole_l")
    doc["reference"]["root"][2] = round(-float(sole.translation[2]), 9)

    return doc


# ---------------------------------------------------------------------------
# parallel-leg: lower leg as three parallel two-bar chains (3-RRR platform)

PL_THIGH_LEN = 0.22
PL_PLAT_DROP = 0.34              # thigh origin to foot anchor plane
PL_UPPER = [0.14, 0.16, 0.15]
PL_LOWER = [0.15, 0.12, 0.14]
PL_THIGH_PTS = [[0.06, 0.0, -0.05], [0.00, 0.0, -0.09], [-0.06, 0.0, -0.05]]
PL_FOOT_PTS = [[0.10, 0.0, 0.04], [0.00, 0.0, 0.07], [-0.10, 0.0, 0.04]]
PL_ELBOW_SIGN = [1, -1, 1]


def build_parallel_leg():
    bodies = [
        {"name": "pelvis", "mass": 8.0, "com": [0.0, 0.0, 0.04],
         "inertia": [0.10, 0.08, 0.09]},
    ]
    joints = [
        {"name": "root", "kind": "free_flyer", "parent": "world", "child": "pelvis"},
    ]
    frames = []
    closures = []
    reference = {}

    for side, sgn in (("l", 1.0), ("r", -1.0)):
        def n(base):
            return f"{base}_{side}"
        bodies += [
            {"name": n("hip1"), "mass": 0.4, "com": [0.0, 0.0, -0.02],
             "inertia": [4.0e-4, 4.0e-4, 4.0e-4]},
            {"name": n("hip2"), "mass": 0.4, "com": [0.0, 0.0, -0.02],
             "inertia": [4.0e-4, 4.0e-4, 4.0e-4]},
            {"name": n("thigh"), "mass": 1.6, "com": [0.0, 0.0, -0.12],
             "inertia": rod_inertia(1.6, PL_THIGH_LEN)},
            {"name": n("foot"), "mass": 0.7, "com": [0.01, 0.0, -0.02],
             "inertia": [5.0e-4, 1.5e-3, 1.8e-3]},
        ]
        joints += [
            {"name": n("hip_yaw"), "kind": "revolute", "parent": "pelvis",
             "child": n("hip1"), "axis": [0, 0, 1],
             "xyz": [0.0, sgn * HIP_Y, 0.0], "actuated": True},
            {"name": n("hip_roll"), "kind": "revolute", "parent": n("hip1"),
             "child": n("hip2"), "axis": [1, 0, 0],
             "xyz": [0.0, 0.0, -0.04], "actuated": True},
            {"name": n("hip_pitch"), "kind": "revolute", "parent": n("hip2"),
             "child": n("thigh"), "axis": [0, 1, 0],
             "xyz": [0.0, 0.0, -0.04], "actuated": True},
        ]
        reference[n("hip_pitch")] = -0.06
        # toe-out so the two legs' chain planes are not parallel at reference
        reference[n("hip_yaw")] = -sgn * 0.12

        # chain 1 carries the foot; chains 2 and 3 close through welds
        foot_origin = np.array([0.0, 0.0, -PL_PLAT_DROP])
        for k in range(3):
            A = np.array(PL_THIGH_PTS[k])
            B_foot = np.array(PL_FOOT_PTS[k])
            B = foot_origin + B_foot
            elbow = two_bar_ik(A, B, PL_UPPER[k], PL_LOWER[k], PL_ELBOW_SIGN[k])
            u_up = (elbow - A) / PL_UPPER[k]
            u_dn = (B - elbow) / PL_LOWER[k]
            ref_up = angle_of(u_up)
            cn = f"c{k + 1}"
            m_up = 0.12
            bodies.append({"name": n(f"{cn}_upper"), "mass": m_up,
                           "com": [0.0, 0.0, -PL_UPPER[k] / 2],
                           "inertia": rod_inertia(m_up, PL_UPPER[k])})
            joints.append({"name": n(f"{cn}_hip"), "kind": "revolute",
                           "parent": n("thigh"), "child": n(f"{cn}_upper"),
                           "axis": [0, 1, 0],
                           "xyz": [float(A[0]), 0.0, float(A[2])],
                           "actuated": True})
            reference[n(f"{cn}_hip")] = round(ref_up, 9)
            if k == 0:
                # full chain: lower rod then the foot
                ref_dn = angle_of(ry(ref_up).T @ u_dn)
                bodies.append({"name": n(f"{cn}_lower"), "mass": 0.12,
                               "com": [0.0, 0.0, -PL_LOWER[k] / 2],
                               "inertia": rod_inertia(0.12, PL_LOWER[k])})
                joints.append({"name": n(f"{cn}_elbow"), "kind": "revolute",
                               "parent": n(f"{cn}_upper"), "child": n(f"{cn}_lower"),
                               "axis": [0, 1, 0],
                               "xyz": [0.0, 0.0, -PL_UPPER[k]]})
                reference[n(f"{cn}_elbow")] = round(ref_dn, 9)
                # foot pin at the chain-1 anchor; foot frame orientation = world
                ref_foot = -(ref_up + ref_dn)
                joints.append({"name": n("foot_pin"), "kind": "revolute",
                               "parent": n(f"{cn}_lower"), "child": n("foot"),
                               "axis": [0, 1, 0],
                               "xyz": [0.0, 0.0, -PL_LOWER[k]]})
                reference[n("foot_pin")] = round(ref_foot, 9)
                # the foot body frame sits at its chain-1 anchor B1
                foot_anchor0 = B_foot
            else:
                half_len = PL_LOWER[k] / 2.0
                ref_dn = angle_of(ry(ref_up).T @ u_dn)
                bodies.append({"name": n(f"{cn}_low_up"), "mass": 0.06,
                               "com": [0.0, 0.0, -half_len / 2],
                               "inertia": rod_inertia(0.06, half_len)})
                bodies.append({"name": n(f"{cn}_low_dn"), "mass": 0.06,
                               "com": [0.0, 0.0, half_len / 2],
                               "inertia": rod_inertia(0.06, half_len)})
                joints.append({"name": n(f"{cn}_elbow"), "kind": "revolute",
                               "parent": n(f"{cn}_upper"), "child": n(f"{cn}_low_up"),
                               "axis": [0, 1, 0],
                               "xyz": [0.0, 0.0, -PL_UPPER[k]]})
                reference[n(f"{cn}_elbow")] = round(ref_dn, 9)
                # lower half hangs from the foot at anchor Bk
                joints.append({"name": n(f"{cn}_foot_pin"), "kind": "revolute",
                               "parent": n("foot"), "child": n(f"{cn}_low_dn"),
                               "axis": [0, 1, 0],
                               "xyz": [float(B_foot[0] - PL_FOOT_PTS[0][0]), 0.0,
                                       float(B_foot[2] - PL_FOOT_PTS[0][2])]})
                frames += [
                    {"name": n(f"{cn}_cut_up"), "body": n(f"{cn}_low_up"),
                     "xyz": [0.0, 0.0, -half_len]},
                    {"name": n(f"{cn}_cut_dn"), "body": n(f"{cn}_low_dn"),
                     "xyz": [0.0, 0.0, half_len]},
                ]
                closures.append({"name": n(f"{cn}_loop"),
                                 "frame1": n(f"{cn}_cut_up"),
                                 "frame2": n(f"{cn}_cut_dn")})
        frames.append({"name": n("sole"), "body": n("foot"),
                       "xyz": [0.01 - PL_FOOT_PTS[0][0], 0.0,
                               -PL_FOOT_PTS[0][2] - 0.04]})

    doc = {
        "name": "parallel-leg",
        "gravity": [0.0, 0.0, -9.81],
        "bodies": bodies,
        "joints": joints,
        "frames": frames,
        "closures": closures,
        "reference": {"root": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], **reference},
    }

    # fix the foot-pin reference so the foot frame is world-aligned, then pin
    # the weld frames by FK, then set the base height
    m = mod.load_model({**doc, "closures": []})
    cache = rba.forward_kinematics(m, m.reference_config())
    for side in ("l", "r"):
        Rf = cache.oR[m.joint_id(f"foot_pin_{side}")]
        ang = float(np.arctan2(Rf[0, 2], Rf[2, 2]))
        doc["reference"][f"foot_pin_{side}"] = round(
            doc["reference"][f"foot_pin_{side}"] - ang, 9)
    m = mod.load_model({**doc, "closures": []})
    cache = rba.forward_kinematics(m, m.reference_config())
    for side in ("l", "r"):
        for k in (2, 3):
            fa = rba.frame_placement(m, cache, f"c{k}_cut_up_{side}")
            Mb = cache.world_placement(m.joint_id(f"c{k}_foot_pin_{side}"))
            F2 = Mb.inverse() * fa
            for fr in doc["frames"]:
                if fr["name"] == f"c{k}_cut_dn_{side}":
                    fr["xyz"] = [float(x) for x in F2.translation]
                    fr["quat"] = [float(x) for x in rot_to_quat(F2.rotation)]
    m = mod.load_model({**doc, "closures": []})
    cache = rba.forward_kinematics(m, m.reference_config())
    sole = rba.frame_placement(m, cache, "sole_l")
    doc["reference"]["root"][2] = round(-float(sole.translation[2]), 9)
    return doc


def check(doc, expect_closures):
    m = mod.load_model(doc)
    cs = ConstraintSet(clo.model_closures(m))
    q = m.reference_config()
    cache = rba.forward_kinematics(m, q)
    worst = 0.0
    for c in cs:
        worst = max(worst, np.abs(clo.constraint_residual(m, cache, c)).max())
    print(f"{m.name}: nq={m.nq} nv={m.nv} nu={m.nu} closures={len(m.closures)} "
          f"max residual at reference = {worst:.2e}")
    assert len(m.closures) == expect_closures
    assert worst < 1e-8
    soles = [rba.frame_placement(m, cache, f) for f in ("sole_l", "sole_r")]
    for s in soles:
        print("  sole:", np.round(s.translation, 6), "Rdiag:", np.round(np.diag(s.rotation), 6))
    # stacked constraint rank with both feet welded at the reference
    feet = [clo.ClosureConstraint.foot_ground(m, f, rba.frame_placement(m, cache, f))
            for f in ("sole_l", "sole_r")]
    full = ConstraintSet(list(cs) + feet)
    J = np.vstack([clo.constraint_jacobian(m, cache, c) for c in full])
    s = np.linalg.svd(J, compute_uv=False)
    rank = int((s > 1e-8).sum())
    print(f"  stacked J: {J.shape}, rank {rank}, dof {m.nv - rank}")
    return m


def main():
    scan_knee_transmission()
    doc = build_toybiped()
    with open(OUT / "toybiped.yaml", "w") as f:
        f.write("# Generated by tools/gen_models.py; edit constants there and re-run.\n")
        yaml.safe_dump(doc, f, sort_keys=False, default_flow_style=None, width=100)
    check(OUT / "toybiped.yaml", 2)

    doc = build_parallel_leg()
    with open(OUT / "parallel_leg.yaml", "w") as f:
        f.write("# Generated by tools/gen_models.py; edit constants there and re-run.\n")
        yaml.safe_dump(doc, f, sort_keys=False, default_flow_style=None, width=100)
    check(OUT / "parallel_leg.yaml", 4)


if __name__ == "__main__":
    main()
