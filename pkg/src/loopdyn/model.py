"""Mechanism definition: kinematic tree, closure pairs, and configuration space.

A mechanism is a tree of revolute and free-flyer joints rooted at the world,
plus named operational frames and loop-closure pairs that weld two frames
together.  Models are immutable after loading; every algorithm takes them as
read-only input.

The model document is YAML with sections ``bodies``, ``joints``, ``frames``,
``closures`` and optional ``serial_chain``, ``gravity``, ``reference``.
Joint order in the document fixes the coordinate layout.  Free-flyer
configurations store translation then quaternion in xyzw order; quaternions
are normalized on entry with tolerance QUAT_NORM_TOL.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelError
from . import spatial
from .spatial import Se3Placement, exp3, exp6, log6, quat_to_rot, rot_to_quat, skew

QUAT_NORM_TOL = 1e-9

WORLD = -1


@dataclass(frozen=True)
class BodySpec:
    """Rigid body: mass, center of mass and rotational inertia at the CoM."""
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def spatial_inertia(self):
        """6x6 spatial inertia in the body frame (linear-first layout)."""
        m, c = self.mass, self.com
        C = skew(c)
        I6 = np.zeros((6, 6))
        I6[:3, :3] = m * np.eye(3)
        I6[:3, 3:] = -m * C
        I6[3:, :3] = m * C
        I6[3:, 3:] = self.inertia - m * (C @ C)
        return I6


@dataclass(frozen=True)
class JointSpec:
    """Joint moving one body relative to its parent joint's body."""
    name: str
    kind: str                    # "revolute" | "free_flyer"
    parent: int                  # parent joint index, WORLD for the root
    placement: Se3Placement      # joint frame in the parent joint frame
    axis: np.ndarray             # revolute axis (unit, local), zeros for free-flyer
    actuated: bool
    body: BodySpec
    idx_q: int
    idx_v: int

    @property
    def nq(self):
        return 7 if self.kind == "free_flyer" else 1

    @property
    def nv(self):
        return 6 if self.kind == "free_flyer" else 1


@dataclass(frozen=True)
class FrameSpec:
    """Named operational frame rigidly attached to a joint (or the world)."""
    name: str
    joint: int                   # parent joint index, WORLD for anchors
    placement: Se3Placement      # fixed placement in the joint frame


@dataclass(frozen=True)
class ClosurePairSpec:
    """Loop closure welding frame1 onto frame2 (6D)."""
    name: str
    frame1: int
    frame2: int
    dimension: int = 6


@dataclass(frozen=True)
class MechState:
    """Configuration and tangent velocity of a mechanism."""
    q: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class MechanismModel:
    name: str
    joints: tuple
    frames: tuple
    closures: tuple
    gravity: np.ndarray
    serial_chain: tuple          # joint names, empty when not designated
    nq: int
    nv: int
    reference: np.ndarray        # reference configuration
    source_hash: str = ""
    _frame_index: dict = field(default_factory=dict, repr=False)
    _joint_index: dict = field(default_factory=dict, repr=False)

    @property
    def nu(self):
        return sum(j.nv for j in self.joints if j.actuated)

    def joint_id(self, name):
        try:
            return self._joint_index[name]
        except KeyError:
            raise ModelError(f"unknown joint {name!r}") from None

    def frame_id(self, name):
        try:
            return self._frame_index[name]
        except KeyError:
            raise ModelError(f"unknown frame {name!r}") from None

    def joint(self, name):
        return self.joints[self.joint_id(name)]

    def actuation_matrix(self):
        """nv x nu selection matrix mapping controls to joint torques."""
        P = np.zeros((self.nv, self.nu))
        col = 0
        for j in self.joints:
            if j.actuated:
                for k in range(j.nv):
                    P[j.idx_v + k, col] = 1.0
                    col += 1
        return P

    def actuated_joint_names(self):
        return [j.name for j in self.joints if j.actuated]

    def neutral_config(self):
        q = np.zeros(self.nq)
        for j in self.joints:
            if j.kind == "free_flyer":
                q[j.idx_q + 6] = 1.0  # unit quaternion w
        return q

    def reference_config(self):
        return self.reference.copy()

    def total_mass(self):
        return sum(j.body.mass for j in self.joints)

    def check_config(self, q):
        if len(q) != self.nq:
            raise ModelError(f"configuration has dim {len(q)}, expected {self.nq}")
        for j in self.joints:
            if j.kind == "free_flyer":
                n = np.linalg.norm(q[j.idx_q + 3:j.idx_q + 7])
                if abs(n - 1.0) > QUAT_NORM_TOL:
                    raise ModelError(
                        f"quaternion of {j.name!r} has norm {n:.12f}")


def joint_motion(joint, q):
    """Placement produced by the joint's own coordinates."""
    if joint.kind == "free_flyer":
        trans = q[joint.idx_q:joint.idx_q + 3]
        quat = q[joint.idx_q + 3:joint.idx_q + 7]
        return Se3Placement(quat_to_rot(quat), trans)
    angle = q[joint.idx_q]
    return Se3Placement(exp3(joint.axis * angle), np.zeros(3))


class ModelRuntime:
    """Precomputed static arrays for the tree algorithms (internal)."""

    def __init__(self, model):
        joints = model.joints
        n = len(joints)
        self.n = n
        self.parent = np.array([j.parent for j in joints], dtype=int)
        self.idx_q = np.array([j.idx_q for j in joints], dtype=int)
        self.idx_v = np.array([j.idx_v for j in joints], dtype=int)
        self.nvj = np.array([j.nv for j in joints], dtype=int)
        self.is_ff = np.array([j.kind == "free_flyer" for j in joints], dtype=bool)
        self.axis = np.stack([j.axis for j in joints])
        self.R0 = np.stack([j.placement.rotation for j in joints])
        self.p0 = np.stack([j.placement.translation for j in joints])
        self.S = [joint_subspace(j) for j in joints]
        self.I6 = np.stack([j.body.spatial_inertia() for j in joints])
        self.mass = np.array([j.body.mass for j in joints])
        self.com = np.stack([j.body.com for j in joints])
        self.total_mass = float(self.mass.sum())


_runtime_cache = {}


def runtime(model):
    key = id(model)
    rt = _runtime_cache.get(key)
    if rt is None or rt[0] is not model:
        rt = (model, ModelRuntime(model))
        _runtime_cache[key] = rt
    return rt[1]


def joint_subspace(joint):
    """Motion subspace S (6 x nv_joint) in the joint's local frame."""
    if joint.kind == "free_flyer":
        return np.eye(6)
    S = np.zeros((6, 1))
    S[3:, 0] = joint.axis
    return S


def integrate_config(model, q, dv):
    """Retract a tangent displacement onto the configuration manifold.

    Revolute coordinates add; a free-flyer composes the exponential of its
    6-vector block on the right of the current placement.
    """
    q = np.asarray(q, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if len(dv) != model.nv:
        raise ModelError(f"tangent has dim {len(dv)}, expected {model.nv}")
    out = q.copy()
    for j in model.joints:
        if j.kind == "free_flyer":
            M = joint_motion(j, q) * exp6(dv[j.idx_v:j.idx_v + 6])
            out[j.idx_q:j.idx_q + 3] = M.translation
            out[j.idx_q + 3:j.idx_q + 7] = rot_to_quat(M.rotation)
        else:
            out[j.idx_q] = q[j.idx_q] + dv[j.idx_v]
    return out


def difference_config(model, q1, q2):
    """Tangent displacement with integrate_config(q1, d) = q2."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d = np.zeros(model.nv)
    for j in model.joints:
        if j.kind == "free_flyer":
            M1 = joint_motion(j, q1)
            M2 = joint_motion(j, q2)
            d[j.idx_v:j.idx_v + 6] = log6(M1.inverse() * M2)
        else:
            d[j.idx_v] = q2[j.idx_q] - q1[j.idx_q]
    return d


def integrate_jacobians(model, q, dv):
    """Tangent-space Jacobians (dq, ddv) of integrate_config, each nv x nv."""
    Jq = np.eye(model.nv)
    Jd = np.eye(model.nv)
    for j in model.joints:
        if j.kind == "free_flyer":
            s = slice(j.idx_v, j.idx_v + 6)
            xi = dv[s]
            Jq[s, s] = np.linalg.inv(spatial.action_matrix(exp6(xi)))
            Jd[s, s] = spatial.se3_right_jacobian(xi)
    return Jq, Jd


def difference_jacobians(model, q1, q2):
    """Tangent-space Jacobians (dq1, dq2) of difference_config."""
    J1 = -np.eye(model.nv)
    J2 = np.eye(model.nv)
    for j in model.joints:
        if j.kind == "free_flyer":
            s = slice(j.idx_v, j.idx_v + 6)
            d = log6(joint_motion(j, q1).inverse() * joint_motion(j, q2))
            J2[s, s] = spatial.se3_right_jacobian_inv(d)
            J1[s, s] = -spatial.se3_left_jacobian_inv(d)
    return J1, J2


# ---------------------------------------------------------------------------
# document loading

def _err(path, msg):
    raise ModelError(f"{path}: {msg}")


def _get(entry, key, path, default=None, required=False):
    if key in entry:
        return entry[key]
    if required:
        _err(path, f"missing field {key!r}")
    return default


def _parse_placement(entry, path):
    xyz = np.asarray(_get(entry, "xyz", path, default=[0.0, 0.0, 0.0]), dtype=float)
    if xyz.shape != (3,):
        _err(path, "xyz must have 3 entries")
    if "quat" in entry:
        quat = np.asarray(entry["quat"], dtype=float)
        if quat.shape != (4,):
            _err(path, "quat must have 4 entries (x, y, z, w)")
        n = np.linalg.norm(quat)
        if abs(n - 1.0) > 1e-6:
            _err(path, f"quaternion norm {n:.9f} too far from 1")
        return Se3Placement(quat_to_rot(quat), xyz)
    rpy = np.asarray(_get(entry, "rpy", path, default=[0.0, 0.0, 0.0]), dtype=float)
    if rpy.shape != (3,):
        _err(path, "rpy must have 3 entries")
    R = exp3([0, 0, rpy[2]]) @ exp3([0, rpy[1], 0]) @ exp3([rpy[0], 0, 0])
    return Se3Placement(R, xyz)


def _parse_inertia(entry, path):
    raw = _get(entry, "inertia", path, required=True)
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (3,):
        I = np.diag(arr)
    elif arr.shape == (6,):
        ixx, iyy, izz, ixy, ixz, iyz = arr
        I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    elif arr.shape == (3, 3):
        I = arr
    else:
        _err(path, "inertia must be 3 diagonal terms, 6 terms, or a 3x3 matrix")
    if not np.allclose(I, I.T, atol=1e-12):
        _err(path, "inertia must be symmetric")
    w = np.linalg.eigvalsh(I)
    if w[0] < -1e-12:
        _err(path, f"inertia not positive semi-definite (min eig {w[0]:.3e})")
    # principal moments of a physical rigid body satisfy the triangle inequality
    if w[0] + w[1] < w[2] - 1e-9 * max(1.0, w[2]):
        _err(path, "principal moments violate the triangle inequality")
    return I


def _parse_body(entry, i):
    path = f"bodies[{i}]"
    name = _get(entry, "name", path, required=True)
    mass = float(_get(entry, "mass", path, required=True))
    if mass < 0:
        _err(path, "mass must be non-negative")
    com = np.asarray(_get(entry, "com", path, default=[0.0, 0.0, 0.0]), dtype=float)
    return BodySpec(name=name, mass=mass, com=com, inertia=_parse_inertia(entry, path))


def load_model(source):
    """Load a MechanismModel from a YAML path, YAML text, or a dict.

    The returned model satisfies all structural invariants; violations raise
    ModelError naming the offending field.
    """
    text = None
    if isinstance(source, dict):
        doc = source
        text = yaml.safe_dump(source)
    else:
        if isinstance(source, Path):
            text = source.read_text()
        elif "\n" not in source and Path(source).exists():
            text = Path(source).read_text()
        elif "\n" not in source and source.endswith((".yaml", ".yml")):
            raise ModelError(f"model file not found: {source}")
        else:
            text = source
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ModelError(f"document does not parse: {e}") from None
    if not isinstance(doc, dict):
        raise ModelError("document root must be a mapping")

    name = doc.get("name", "mechanism")
    gravity = np.asarray(doc.get("gravity", [0.0, 0.0, -9.81]), dtype=float)
    if gravity.shape != (3,):
        raise ModelError("gravity: must have 3 entries")

    bodies = {}
    for i, entry in enumerate(doc.get("bodies", [])):
        b = _parse_body(entry, i)
        if b.name in bodies:
            _err(f"bodies[{i}]", f"duplicate body {b.name!r}")
        bodies[b.name] = b

    joints = []
    joint_index = {}
    body_to_joint = {}
    idx_q = idx_v = 0
    for i, entry in enumerate(doc.get("joints", [])):
        path = f"joints[{i}]"
        jname = _get(entry, "name", path, required=True)
        if jname in joint_index:
            _err(path, f"duplicate joint {jname!r}")
        kind = _get(entry, "kind", path, default="revolute")
        if kind not in ("revolute", "free_flyer"):
            _err(path, f"unknown joint kind {kind!r}")
        parent_name = _get(entry, "parent", path, required=True)
        if parent_name == "world":
            parent = WORLD
        elif parent_name in body_to_joint:
            parent = body_to_joint[parent_name]
        else:
            _err(path, f"parent body {parent_name!r} not defined above this joint")
        child = _get(entry, "child", path, required=True)
        if child not in bodies:
            _err(path, f"child body {child!r} not found")
        if child in body_to_joint:
            _err(path, f"body {child!r} already attached to a joint")
        if kind == "free_flyer":
            axis = np.zeros(3)
            if parent != WORLD:
                _err(path, "free-flyer joints must be rooted at the world")
        else:
            axis = np.asarray(_get(entry, "axis", path, required=True), dtype=float)
            n = np.linalg.norm(axis)
            if n < 1e-12:
                _err(path, "axis must be nonzero")
            axis = axis / n
        joint = JointSpec(
            name=jname, kind=kind, parent=parent,
            placement=_parse_placement(entry, path), axis=axis,
            actuated=bool(_get(entry, "actuated", path, default=False)),
            body=bodies[child], idx_q=idx_q, idx_v=idx_v)
        joints.append(joint)
        joint_index[jname] = i
        body_to_joint[child] = i
        idx_q += joint.nq
        idx_v += joint.nv
    if not joints:
        raise ModelError("model has no joints")
    unattached = set(bodies) - set(body_to_joint)
    if unattached:
        raise ModelError(f"bodies never attached to a joint: {sorted(unattached)}")

    frames = []
    frame_index = {}
    for i, entry in enumerate(doc.get("frames", [])):
        path = f"frames[{i}]"
        fname = _get(entry, "name", path, required=True)
        if fname in frame_index:
            _err(path, f"duplicate frame {fname!r}")
        host = _get(entry, "body", path, required=True)
        if host == "world":
            joint = WORLD
        elif host in body_to_joint:
            joint = body_to_joint[host]
        else:
            _err(path, f"frame body {host!r} not found")
        frame_index[fname] = len(frames)
        frames.append(FrameSpec(name=fname, joint=joint,
                                placement=_parse_placement(entry, path)))

    closures = []
    for i, entry in enumerate(doc.get("closures", [])):
        path = f"closures[{i}]"
        cname = _get(entry, "name", path, default=f"closure{i}")
        f1 = _get(entry, "frame1", path, required=True)
        f2 = _get(entry, "frame2", path, required=True)
        for f in (f1, f2):
            if f not in frame_index:
                _err(path, f"frame {f!r} not found")
        i1, i2 = frame_index[f1], frame_index[f2]
        if frames[i1].joint == frames[i2].joint and frames[i1].joint != WORLD:
            _err(path, "closure frames must attach to distinct bodies")
        closures.append(ClosurePairSpec(name=cname, frame1=i1, frame2=i2))

    serial_chain = tuple(doc.get("serial_chain", []) or [])
    for jn in serial_chain:
        if jn not in joint_index:
            raise ModelError(f"serial_chain: unknown joint {jn!r}")
        if joints[joint_index[jn]].kind != "revolute":
            raise ModelError(f"serial_chain: joint {jn!r} is not revolute")

    model = MechanismModel(
        name=name, joints=tuple(joints), frames=tuple(frames),
        closures=tuple(closures), gravity=gravity, serial_chain=serial_chain,
        nq=idx_q, nv=idx_v, reference=np.zeros(idx_q),
        source_hash=hashlib.sha256(text.encode()).hexdigest(),
        _frame_index=frame_index, _joint_index=joint_index)

    reference = model.neutral_config()
    for jname, value in (doc.get("reference", {}) or {}).items():
        if jname not in joint_index:
            raise ModelError(f"reference: unknown joint {jname!r}")
        j = joints[joint_index[jname]]
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if len(value) != j.nq:
            raise ModelError(f"reference: joint {jname!r} expects {j.nq} values")
        if j.kind == "free_flyer":
            n = np.linalg.norm(value[3:7])
            if abs(n - 1.0) > 1e-6:
                raise ModelError(f"reference: quaternion norm of {jname!r} is {n:.9f}")
            value[3:7] /= n
        reference[j.idx_q:j.idx_q + j.nq] = value
    reference.setflags(write=False)
    object.__setattr__(model, "reference", reference)
    return model


# ---------------------------------------------------------------------------
# serial approximation

def _merge_bodies(a, b, placement_b_in_a):
    """Rigidly merge body b (placed in a's frame) into body a."""
    R, p = placement_b_in_a.rotation, placement_b_in_a.translation
    m = a.mass + b.mass
    com_b = R @ b.com + p
    I_b = R @ b.inertia @ R.T
    if m <= 0:
        return BodySpec(a.name, 0.0, a.com, a.inertia + I_b)
    com = (a.mass * a.com + b.mass * com_b) / m

    def shift(I, mass, d):
        return I + mass * (np.dot(d, d) * np.eye(3) - np.outer(d, d))

    I = shift(a.inertia, a.mass, a.com - com) + shift(I_b, b.mass, com_b - com)
    return BodySpec(a.name, m, com, I)


def build_serial_approximation(model, frozen):
    """Reduce a closed model to its designated serial chain.

    ``frozen`` maps every non-serial linkage joint name to the angle at which
    it is welded.  Linkage bodies are rigidly lumped into their closest
    retained ancestor, closure pairs are dropped, and every serial joint
    becomes directly actuated.
    """
    if not model.serial_chain:
        raise ModelError(f"model {model.name!r} designates no serial chain")
    serial = set(model.serial_chain)
    linkage = {j.name for j in model.joints
               if j.kind == "revolute" and j.name not in serial}
    if set(frozen) != linkage:
        missing = linkage - set(frozen)
        extra = set(frozen) - linkage
        raise ModelError(
            f"frozen joints must be exactly the linkage joints; "
            f"missing {sorted(missing)}, unexpected {sorted(extra)}")

    keep = [j for j in model.joints if j.name not in frozen]
    kept_ids = {model.joint_id(j.name) for j in keep}
    for j in keep:
        a = j.parent
        while a != WORLD:
            if a not in kept_ids:
                raise ModelError(f"serial joint {j.name!r} sits below a frozen joint")
            a = model.joints[a].parent

    # fixed placement of each frozen joint's frame inside its retained ancestor
    weld = {}          # old joint id -> (retained old joint id, placement)
    for jid, j in enumerate(model.joints):
        if j.name not in frozen:
            continue
        chain = []
        a = jid
        while a != WORLD and a not in kept_ids:
            chain.append(a)
            a = model.joints[a].parent
        if a == WORLD:
            raise ModelError(f"linkage joint {j.name!r} has no retained ancestor")
        M = Se3Placement.identity()
        for k in reversed(chain):
            jk = model.joints[k]
            angle = frozen[jk.name]
            M = M * jk.placement * Se3Placement(exp3(jk.axis * angle), np.zeros(3))
        weld[jid] = (a, M)

    merged = {jid: model.joints[jid].body for jid in kept_ids}
    for jid, (anchor, M) in sorted(weld.items()):
        merged[anchor] = _merge_bodies(merged[anchor], model.joints[jid].body, M)

    doc_joints = []
    old_to_new = {}
    for j in keep:
        old_to_new[model.joint_id(j.name)] = len(doc_joints)
        doc_joints.append(j)

    new_joints = []
    idx_q = idx_v = 0
    for j in doc_joints:
        jid = model.joint_id(j.name)
        parent = WORLD if j.parent == WORLD else old_to_new[j.parent]
        actuated = j.actuated or j.name in serial
        nj = JointSpec(name=j.name, kind=j.kind, parent=parent,
                       placement=j.placement.copy(), axis=j.axis.copy(),
                       actuated=actuated and j.kind == "revolute",
                       body=merged[jid], idx_q=idx_q, idx_v=idx_v)
        new_joints.append(nj)
        idx_q += nj.nq
        idx_v += nj.nv

    new_frames = []
    frame_index = {}
    for f in model.frames:
        if f.joint == WORLD:
            joint, placement = WORLD, f.placement
        elif f.joint in kept_ids:
            joint, placement = old_to_new[f.joint], f.placement
        else:
            anchor, M = weld[f.joint]
            joint, placement = old_to_new[anchor], M * f.placement
        frame_index[f.name] = len(new_frames)
        new_frames.append(FrameSpec(name=f.name, joint=joint, placement=placement))

    joint_index = {j.name: i for i, j in enumerate(new_joints)}
    out = MechanismModel(
        name=model.name + "-serial", joints=tuple(new_joints),
        frames=tuple(new_frames), closures=(), gravity=model.gravity.copy(),
        serial_chain=model.serial_chain, nq=idx_q, nv=idx_v,
        reference=np.zeros(idx_q), source_hash=model.source_hash,
        _frame_index=frame_index, _joint_index=joint_index)
    reference = out.neutral_config()
    for j in new_joints:
        old = model.joint(j.name)
        reference[j.idx_q:j.idx_q + j.nq] = model.reference[old.idx_q:old.idx_q + old.nq]
    reference.setflags(write=False)
    object.__setattr__(out, "reference", reference)
    return out


def serial_coordinate_maps(closed_model, serial_model):
    """Index arrays embedding serial (q, v) into the closed model's layout."""
    qi, vi = [], []
    for j in serial_model.joints:
        cj = closed_model.joint(j.name)
        qi.extend(range(cj.idx_q, cj.idx_q + cj.nq))
        vi.extend(range(cj.idx_v, cj.idx_v + cj.nv))
    return np.array(qi, dtype=int), np.array(vi, dtype=int)


def frozen_reference_angles(model):
    """Reference angles of the linkage joints, keyed by name."""
    serial = set(model.serial_chain)
    return {
        j.name: float(model.reference[j.idx_q])
        for j in model.joints
        if j.kind == "revolute" and j.name not in serial
    }
