"""Exact SE(3)/SO(3) algebra for body-frame impedance control.

Conventions used throughout the library:

* twists and wrenches stack the linear part first: ``xi = [v; w]``,
  ``wrench = [f; tau]``;
* poses are (rotation, position) pairs over float64 numpy arrays;
* the distance metric is the expanded trace/quadratic form
  ``tr(I - Rd^T R) + 0.5 * |p - pd|^2``;
* body/spatial frame membership is tracked by an explicit tag on
  :class:`Twist` and :class:`Wrench`, and frame-sensitive operations refuse
  mis-tagged inputs instead of silently reinterpreting them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import (
    FrameMismatchError,
    MalformedSe3Error,
    NearPiRotationError,
    NotSkewError,
)

FrameTag = Literal["body", "spatial"]
BODY: FrameTag = "body"
SPATIAL: FrameTag = "spatial"

ORTHONORMALITY_TOL = 1e-9
SKEW_TOL = 1e-8
LOG_ANGLE_CUTOFF = math.pi - 1e-6


def _as_array(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True)
class Rotation:
    """An element of SO(3), validated on construction."""

    m: np.ndarray

    def __post_init__(self):
        m = _as_array(self.m, (3, 3), "rotation matrix")
        if np.max(np.abs(m @ m.T - np.eye(3))) > ORTHONORMALITY_TOL:
            raise ValueError("matrix is not orthonormal within tolerance")
        if abs(np.linalg.det(m) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("matrix determinant is not +1 within tolerance")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def from_quat(q) -> "Rotation":
        return Rotation(matrix_from_quat(q))

    def as_quat(self) -> np.ndarray:
        return quat_from_matrix(self.m)

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T.copy())

    def apply(self, x) -> np.ndarray:
        return self.m @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Pose:
    """An element of SE(3): rotation plus translation in meters."""

    rot: Rotation
    pos: np.ndarray

    def __post_init__(self):
        p = _as_array(self.pos, (3,), "position")
        p.setflags(write=False)
        object.__setattr__(self, "pos", p)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = _as_array(m, (4, 4), "homogeneous matrix")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > SKEW_TOL:
            raise MalformedSe3Error("bottom row of homogeneous matrix must be [0 0 0 1]")
        return Pose(Rotation(m[:3, :3].copy()), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rot.m
        m[:3, 3] = self.pos
        return m

    def apply(self, x) -> np.ndarray:
        return self.rot.m @ np.asarray(x, dtype=float) + self.pos


@dataclass(frozen=True)
class Twist:
    """Body or spatial velocity: linear part v (m/s), angular part w (rad/s)."""

    v: np.ndarray
    w: np.ndarray
    frame: FrameTag = BODY

    def __post_init__(self):
        v = _as_array(self.v, (3,), "twist linear part")
        w = _as_array(self.w, (3,), "twist angular part")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @staticmethod
    def zero(frame: FrameTag = BODY) -> "Twist":
        return Twist(np.zeros(3), np.zeros(3), frame)

    @staticmethod
    def from_array(a, frame: FrameTag = BODY) -> "Twist":
        a = _as_array(a, (6,), "twist")
        return Twist(a[:3].copy(), a[3:].copy(), frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])


@dataclass(frozen=True)
class Wrench:
    """Force f (N) and torque tau (N*m) with an explicit frame tag."""

    f: np.ndarray
    tau: np.ndarray
    frame: FrameTag = BODY

    def __post_init__(self):
        f = _as_array(self.f, (3,), "wrench force part")
        tau = _as_array(self.tau, (3,), "wrench torque part")
        f.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "tau", tau)

    @staticmethod
    def zero(frame: FrameTag = BODY) -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3), frame)

    @staticmethod
    def from_array(a, frame: FrameTag = BODY) -> "Wrench":
        a = _as_array(a, (6,), "wrench")
        return Wrench(a[:3].copy(), a[3:].copy(), frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.f, self.tau])


# ---------------------------------------------------------------------------
# hat / vee maps


def hat3(w) -> np.ndarray:
    """Map a 3-vector to its skew-symmetric matrix, hat3(w) @ x == cross(w, x)."""
    w = _as_array(w, (3,), "vector")
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee3(m) -> np.ndarray:
    """Inverse of :func:`hat3`; rejects matrices that are not skew-symmetric."""
    m = _as_array(m, (3, 3), "matrix")
    if np.max(np.abs(m + m.T)) > SKEW_TOL:
        raise NotSkewError("matrix is not skew-symmetric within tolerance")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def hat6(xi: Twist) -> np.ndarray:
    """se(3) hat-map: [[hat3(w), v], [0, 0]]."""
    m = np.zeros((4, 4))
    m[:3, :3] = hat3(xi.w)
    m[:3, 3] = xi.v
    return m


def vee6(m, frame: FrameTag = BODY) -> Twist:
    """Inverse of :func:`hat6`; rejects matrices with a nonzero bottom row."""
    m = _as_array(m, (4, 4), "matrix")
    if np.max(np.abs(m[3])) > SKEW_TOL:
        raise MalformedSe3Error("bottom row of an se(3) element must be zero")
    return Twist(m[:3, 3].copy(), vee3(m[:3, :3]), frame)


# ---------------------------------------------------------------------------
# exp / log


def _sinc(x: float) -> float:
    """sin(x)/x without the 0/0; no cancellation for any x."""
    if abs(x) < 1e-9:
        return 1.0 - x * x / 6.0
    return math.sin(x) / x


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula: rotation matrix for rotation vector phi.

    (1 - cos t)/t^2 is evaluated as sinc^2(t/2)/2, which stays accurate at
    tiny angles where the direct difference cancels catastrophically.
    """
    phi = _as_array(phi, (3,), "rotation vector")
    angle = float(np.linalg.norm(phi))
    k = hat3(phi)
    k2 = k @ k
    half_sinc = _sinc(0.5 * angle)
    return np.eye(3) + k * _sinc(angle) + k2 * (0.5 * half_sinc * half_sinc)


def so3_log(m) -> np.ndarray:
    """Principal-branch rotation vector of a rotation matrix (angle < pi)."""
    m = _as_array(m, (3, 3), "rotation matrix")
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(m) - 1.0)))
    angle = math.acos(cos_angle)
    if angle >= LOG_ANGLE_CUTOFF:
        raise NearPiRotationError(f"rotation angle {angle:.9f} is at the principal-branch cut")
    axis_times_2sin = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if angle < 1e-8:
        return 0.5 * axis_times_2sin
    return axis_times_2sin * (angle / (2.0 * math.sin(angle)))


def _left_jacobian_translation(phi: np.ndarray) -> np.ndarray:
    """V(phi) with exp_se3 translation p = V(phi) @ (v * theta)."""
    angle = float(np.linalg.norm(phi))
    k = hat3(phi)
    k2 = k @ k
    half_sinc = _sinc(0.5 * angle)
    c1 = 0.5 * half_sinc * half_sinc
    if angle < 1e-4:
        c2 = 1.0 / 6.0 - angle * angle / 120.0
    else:
        c2 = (angle - math.sin(angle)) / angle**3
    return np.eye(3) + c1 * k + c2 * k2


def _left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(phi))
    k = hat3(phi)
    k2 = k @ k
    if angle < 0.1:
        # series: the closed form divides a catastrophic cancellation by t^2
        a2 = angle * angle
        coeff = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        coeff = (1.0 - (angle * math.sin(angle))
                 / (2.0 * (1.0 - math.cos(angle)))) / (angle * angle)
    return np.eye(3) - 0.5 * k + coeff * k2


def exp_se3(xi: Twist, theta: float = 1.0) -> Pose:
    """Closed-form exponential of the twist xi scaled by theta."""
    phi = xi.w * theta
    rho = xi.v * theta
    return Pose(Rotation(so3_exp(phi)), _left_jacobian_translation(phi) @ rho)


def log_se3(g: Pose) -> Twist:
    """Principal-branch logarithm; exp_se3(log_se3(g)) == g for angle < pi."""
    phi = so3_log(g.rot.m)
    rho = _left_jacobian_inverse(phi) @ g.pos
    return Twist(rho, phi, BODY)


# ---------------------------------------------------------------------------
# group operations


def compose(g1: Pose, g2: Pose) -> Pose:
    return Pose(Rotation(g1.rot.m @ g2.rot.m), g1.rot.m @ g2.pos + g1.pos)


def inverse(g: Pose) -> Pose:
    rt = g.rot.m.T
    return Pose(Rotation(rt.copy()), -(rt @ g.pos))


def adjoint(g: Pose) -> np.ndarray:
    """6x6 Adjoint of g: [[R, hat(p) R], [0, R]] acting on (v, w) twists."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = g.rot.m
    ad[:3, 3:] = hat3(g.pos) @ g.rot.m
    ad[3:, 3:] = g.rot.m
    return ad


def project_rotation(m) -> Rotation:
    """Nearest rotation matrix (polar factor via SVD)."""
    m = _as_array(m, (3, 3), "matrix")
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return Rotation(u @ np.diag([1.0, 1.0, d]) @ vt)


def repair_pose(g: Pose, drift_tol: float = 1e-8) -> Pose:
    """Re-orthonormalize the rotation block when integration drift exceeds tol.

    Accepts a pose-like (rot may fail strict validation after long rollouts),
    so callers integrating poses incrementally can pass raw matrices.
    """
    m = g.rot.m
    if np.max(np.abs(m @ m.T - np.eye(3))) > drift_tol:
        return Pose(project_rotation(m), g.pos.copy())
    return g


# ---------------------------------------------------------------------------
# error vectors, metric, elastic wrench


def gcev(g: Pose, g_d: Pose) -> np.ndarray:
    """Geometrically consistent error vector, body frame.

    e_p = R^T (p - p_d);  e_R = vee(Rd^T R - R^T Rd).
    Left-invariant: gcev(gl g, gl g_d) == gcev(g, g_d).
    """
    r, p = g.rot.m, g.pos
    rd, pd = g_d.rot.m, g_d.pos
    e_p = r.T @ (p - pd)
    m = rd.T @ r - r.T @ rd
    e_r = np.array([m[2, 1], m[0, 2], m[1, 0]])
    return np.concatenate([e_p, e_r])


def distance(g: Pose, g_d: Pose) -> float:
    """Left-invariant distance: tr(I - Rd^T R) + 0.5 |p - pd|^2; zero iff g == g_d."""
    dp = g.pos - g_d.pos
    return float(3.0 - np.trace(g_d.rot.m.T @ g.rot.m) + 0.5 * (dp @ dp))


def elastic_wrench(g: Pose, g_d: Pose, kp, kr) -> Wrench:
    """Configuration-dependent spring wrench pulling g toward g_d (body frame).

    kp, kr are the diagonals of the translational/rotational stiffness
    matrices; all entries must be positive.
    """
    kp = _as_array(kp, (3,), "kp")
    kr = _as_array(kr, (3,), "kr")
    if np.any(kp <= 0.0) or np.any(kr <= 0.0):
        raise ValueError("stiffness diagonals must be positive")
    r, p = g.rot.m, g.pos
    rd, pd = g_d.rot.m, g_d.pos
    f_p = r.T @ rd @ (kp * (rd.T @ (p - pd)))
    m = (kr[:, None] * (rd.T @ r)) - (r.T @ rd) * kr[None, :]
    f_r = np.array([m[2, 1], m[0, 2], m[1, 0]])
    return Wrench(f_p, f_r, BODY)


def velocity_error(g: Pose, g_d: Pose, v_b: Twist, v_d_b: Twist) -> Twist:
    """e_V = V^b - Ad_{g_bd} V_d^b with g_bd = g^{-1} g_d; both twists body-framed."""
    if v_b.frame != BODY or v_d_b.frame != BODY:
        raise FrameMismatchError("velocity_error requires body-framed twists")
    r, p = g.rot.m, g.pos
    rd, pd = g_d.rot.m, g_d.pos
    r_bd = r.T @ rd
    p_bd = -(r.T @ (p - pd))
    w_t = r_bd @ v_d_b.w
    v_t = r_bd @ v_d_b.v + np.cross(p_bd, w_t)
    return Twist(v_b.v - v_t, v_b.w - w_t, BODY)


def cartesian_error(g: Pose, g_d: Pose) -> np.ndarray:
    """Spatial-frame benchmark error: [p - pd; sum_i r_di x r_i].

    Not left-invariant; this is the defect the geometric controller avoids.
    """
    r, rd = g.rot.m, g_d.rot.m
    e_r = (np.cross(rd[:, 0], r[:, 0])
           + np.cross(rd[:, 1], r[:, 1])
           + np.cross(rd[:, 2], r[:, 2]))
    return np.concatenate([g.pos - g_d.pos, e_r])


def wrench_body_to_spatial(g: Pose, w: Wrench) -> Wrench:
    """Re-express a body wrench in the spatial frame: w_s = Ad_{g^-1}^T w_b."""
    if w.frame != BODY:
        raise FrameMismatchError("expected a body-framed wrench")
    out = adjoint(inverse(g)).T @ w.as_array()
    return Wrench(out[:3], out[3:], SPATIAL)


def wrench_spatial_to_body(g: Pose, w: Wrench) -> Wrench:
    """Inverse of :func:`wrench_body_to_spatial`: w_b = Ad_g^T w_s."""
    if w.frame != SPATIAL:
        raise FrameMismatchError("expected a spatial-framed wrench")
    out = adjoint(g).T @ w.as_array()
    return Wrench(out[:3], out[3:], BODY)


# ---------------------------------------------------------------------------
# elementary rotations and random sampling


def rot_x(theta: float) -> Rotation:
    c, s = math.cos(theta), math.sin(theta)
    return Rotation(np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]))


def rot_y(theta: float) -> Rotation:
    c, s = math.cos(theta), math.sin(theta)
    return Rotation(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))


def rot_z(theta: float) -> Rotation:
    c, s = math.cos(theta), math.sin(theta)
    return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Uniform over SO(3) via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Rotation(matrix_from_quat(q))


def random_pose(rng: np.random.Generator, translation: float = 2.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-translation, translation, size=3))


# ---------------------------------------------------------------------------
# quaternions and serialization


def quat_from_matrix(m) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with canonical sign w >= 0 (Shepperd's method)."""
    m = _as_array(m, (3, 3), "rotation matrix")
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def matrix_from_quat(q) -> np.ndarray:
    q = _as_array(q, (4,), "quaternion")
    n = float(q @ q)
    if n < 1e-12:
        raise ValueError("quaternion norm too small")
    w, x, y, z = q / math.sqrt(n)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def pose_to_dict(g: Pose) -> dict:
    """JSON-ready representation: {"p": [x,y,z], "q": [w,x,y,z]}, w >= 0."""
    return {"p": [float(v) for v in g.pos], "q": [float(v) for v in g.rot.as_quat()]}


def pose_from_dict(d: dict) -> Pose:
    return Pose(Rotation.from_quat(d["q"]), np.asarray(d["p"], dtype=float))
