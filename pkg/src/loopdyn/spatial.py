"""SE(3) placements and spatial (Plucker) vector algebra.

Six-vectors pack the linear part first: a motion is (v, w) with v in m/s and
w in rad/s, a force is (f, tau) with f in N and tau in N.m.  All maps below
follow that layout, including the 6x6 action matrices and cross products.

Rotations are stored as 3x3 matrices; quaternions appear only at the
configuration level (xyzw order) and are converted on entry.
"""

import numpy as np

from .errors import SingularRetractionError

# Angles above pi - LOG_ANGLE_MARGIN are rejected by the log maps.
LOG_ANGLE_MARGIN = 1e-6

_SMALL_ANGLE = 1e-8


def skew(v):
    """3x3 matrix S with S @ x = v x x."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def quat_to_rot(q):
    """Rotation matrix of a quaternion (x, y, z, w), normalized on entry."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    x, y, z, w = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """Quaternion (x, y, z, w) of a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if w < 0:
        q = -q
    return q / np.linalg.norm(q)


def exp3(w):
    """SO(3) exponential (Rodrigues formula)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + s * W + c * (W @ W)


def log3(R):
    """SO(3) logarithm as a 3-vector; rejects angles within pi margin."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    if theta >= np.pi - LOG_ANGLE_MARGIN:
        raise SingularRetractionError(
            f"rotation angle {theta:.9f} too close to pi for the log map")
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * v * (1.0 + theta**2 / 6.0)
    return v * theta / (2.0 * np.sin(theta))


def _so3_jacobian_coeffs(theta):
    """Coefficients a, b of J_l = I + a W + b W^2 for SO(3)."""
    if theta < 1e-4:
        a = 0.5 - theta**2 / 24.0
        b = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return a, b


def so3_left_jacobian(w):
    """Left Jacobian of SO(3); also the V matrix coupling exp6 translation."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    a, b = _so3_jacobian_coeffs(theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_left_jacobian_inv(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-4:
        b = 1.0 / 12.0 + theta**2 / 720.0
    else:
        b = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + b * (W @ W)


class Se3Placement:
    """Rigid placement: rotation matrix plus translation.

    Composition is ``a * b`` (apply b, then a); ``inverse()`` undoes it.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        self.rotation = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        self.translation = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)

    @staticmethod
    def identity():
        return Se3Placement()

    @staticmethod
    def from_quat(q_xyzw, translation):
        return Se3Placement(quat_to_rot(q_xyzw), translation)

    @staticmethod
    def random(rng):
        w = rng.uniform(-1.0, 1.0, 3)
        w *= rng.uniform(0.0, np.pi - 0.1) / max(np.linalg.norm(w), 1e-12)
        return Se3Placement(exp3(w), rng.uniform(-1.0, 1.0, 3))

    def __mul__(self, other):
        return Se3Placement(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        Rt = self.rotation.T
        return Se3Placement(Rt, -Rt @ self.translation)

    def act_point(self, p):
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def homogeneous(self):
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def is_identity(self, tol=1e-12):
        return (np.allclose(self.rotation, np.eye(3), atol=tol)
                and np.allclose(self.translation, 0.0, atol=tol))

    def copy(self):
        return Se3Placement(self.rotation.copy(), self.translation.copy())

    def __repr__(self):
        return f"Se3Placement(t={self.translation}, R=\n{self.rotation})"


def exp6(xi):
    """SE(3) exponential of a twist (v, w) -> placement."""
    xi = np.asarray(xi, dtype=float)
    v, w = xi[:3], xi[3:]
    R = exp3(w)
    p = so3_left_jacobian(w) @ v
    return Se3Placement(R, p)


def log6(M):
    """SE(3) logarithm of a placement -> twist (v, w).

    Matches the matrix logarithm of the 4x4 homogeneous form.  Raises
    SingularRetractionError when the rotation angle is within LOG_ANGLE_MARGIN
    of pi.
    """
    w = log3(M.rotation)
    v = so3_left_jacobian_inv(w) @ M.translation
    return np.concatenate([v, w])


def action_matrix(M):
    """6x6 Plucker transform X of a placement, acting on motions.

    For M mapping B coordinates to A coordinates, X @ nu_B = nu_A.
    """
    R, p = M.rotation, M.translation
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, 3:] = R
    X[:3, 3:] = skew(p) @ R
    return X


def dual_action_matrix(M):
    """6x6 dual transform X* acting on forces; X* = X^{-T}."""
    R, p = M.rotation, M.translation
    Xs = np.zeros((6, 6))
    Xs[:3, :3] = R
    Xs[3:, 3:] = R
    Xs[3:, :3] = skew(p) @ R
    return Xs


def motion_cross_matrix(nu):
    """Spatial cross-product matrix of a motion (small adjoint).

    Block layout [[<w>, <v>], [0, <w>]] acting on (v, w) motions.
    """
    v, w = nu[:3], nu[3:]
    C = np.zeros((6, 6))
    W = skew(w)
    C[:3, :3] = W
    C[3:, 3:] = W
    C[:3, 3:] = skew(v)
    return C


def motion_cross(nu, m):
    """Cross product of two spatial motions (Lie bracket)."""
    v1, w1 = nu[:3], nu[3:]
    v2, w2 = m[:3], m[3:]
    return np.concatenate([np.cross(w1, v2) + np.cross(v1, w2), np.cross(w1, w2)])


def motion_cross_dual_matrix(nu):
    """Dual cross-product matrix: (this @ f) = nu x* f, acting on forces."""
    v, w = nu[:3], nu[3:]
    C = np.zeros((6, 6))
    W = skew(w)
    C[:3, :3] = W
    C[3:, 3:] = W
    C[3:, :3] = skew(v)
    return C


def force_cross_dual(f):
    """6x6 matrix <f>* with nu x* f = -<f>* nu.

    Zero top-left block, skew of the linear part on the anti-diagonal blocks
    and skew of the angular part bottom-right.
    """
    lin, ang = f[:3], f[3:]
    C = np.zeros((6, 6))
    L = skew(lin)
    C[:3, 3:] = L
    C[3:, :3] = L
    C[3:, 3:] = skew(ang)
    return C


def _se3_jacobian_q(rho, phi):
    """Barfoot's Q block of the SE(3) left Jacobian (linear-first twist)."""
    theta = np.linalg.norm(phi)
    rx = skew(rho)
    px = skew(phi)
    if theta < 1e-4:
        c1 = 1.0 / 6.0 - theta**2 / 120.0
        c2 = 1.0 / 24.0 - theta**2 / 720.0
        c3 = 1.0 / 120.0 - theta**2 / 2520.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (1.0 - theta**2 / 2.0 - c) / theta**4
        c3 = -(theta - s - theta**3 / 6.0) / theta**5
    m1 = px @ rx + rx @ px + px @ rx @ px
    m2 = px @ px @ rx + rx @ px @ px - 3.0 * px @ rx @ px
    m3 = px @ rx @ px @ px + px @ px @ rx @ px
    return 0.5 * rx + c1 * m1 - c2 * m2 - 0.5 * (c2 + 3.0 * c3) * m3


def se3_left_jacobian(xi):
    """Left Jacobian of SE(3): exp((xi + d)^) ~ exp((J_l d)^) exp(xi^)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    J = so3_left_jacobian(phi)
    Q = _se3_jacobian_q(rho, phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = Q
    return out


def se3_right_jacobian(xi):
    """Right Jacobian: exp(xi + d) ~ exp(xi) exp(J_r d)."""
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


def _invert_block_triangular(J6):
    Jinv = np.linalg.inv(J6[:3, :3])
    out = np.zeros((6, 6))
    out[:3, :3] = Jinv
    out[3:, 3:] = Jinv
    out[:3, 3:] = -Jinv @ J6[:3, 3:] @ Jinv
    return out


def se3_left_jacobian_inv(xi):
    return _invert_block_triangular(se3_left_jacobian(xi))


def se3_right_jacobian_inv(xi):
    return _invert_block_triangular(se3_right_jacobian(xi))


def jlog6(M):
    """Jacobian of the log map: d log6(M exp(d^))/dd = jlog6(M)."""
    return se3_right_jacobian_inv(log6(M))
