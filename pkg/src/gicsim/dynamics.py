"""Rigid-link manipulator model: exponential-product kinematics, joint-space
dynamics, the operational-space transform, and a semi-implicit Euler stepper.

Link frames are base-aligned at the zero configuration: each link's COM is
given in base coordinates at q = 0 and its inertia tensor about that COM in
base-aligned axes. Equivalent to any other link-frame choice, but keeps the
model JSON free of per-link frame definitions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _fast
from .errors import (
    DimensionMismatchError,
    NumericalBlowupError,
    SingularJacobianError,
    UnreachablePoseError,
)
from .liegroup import (
    BODY,
    Pose,
    Rotation,
    Twist,
    adjoint,
    compose,
    inverse,
    log_se3,
    pose_from_dict,
    pose_to_dict,
)

CORIOLIS_FD_STEP = 1e-6
JACOBIAN_DOT_FD_STEP = 1e-6
CONDITION_LIMIT = 1e6
QDOT_BLOWUP = 1e4


@dataclass(frozen=True)
class LinkInertia:
    """Mass (kg), COM position (m, base coords at q=0), inertia about the COM
    (kg*m^2, base-aligned axes at q=0)."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        com = np.asarray(self.com, dtype=float).reshape(3).copy()
        inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3).copy()
        if self.mass <= 0.0:
            raise ValueError("link mass must be positive")
        if np.max(np.abs(inertia - inertia.T)) > 1e-9:
            raise ValueError("inertia tensor must be symmetric")
        eigs = np.sort(np.linalg.eigvalsh(inertia))
        if eigs[0] <= 0.0:
            raise ValueError("inertia tensor must be positive definite")
        if eigs[2] > eigs[0] + eigs[1] + 1e-12:
            raise ValueError("principal moments violate the triangle inequality")
        com.setflags(write=False)
        inertia.setflags(write=False)
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class ManipulatorModel:
    """Joint twists (spatial frame, zero configuration), zero pose, links."""

    joint_twists: tuple
    zero_pose: Pose
    links: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    joint_limits: tuple = ()

    def __post_init__(self):
        twists = tuple(self.joint_twists)
        links = tuple(self.links)
        if len(twists) < 1 or len(twists) != len(links):
            raise ValueError("model needs n >= 1 joints with one link per joint")
        gravity = np.asarray(self.gravity, dtype=float).reshape(3).copy()
        gravity.setflags(write=False)
        limits = tuple(self.joint_limits) if self.joint_limits else tuple(
            (-2.0 * math.pi, 2.0 * math.pi) for _ in twists)
        if len(limits) != len(twists):
            raise ValueError("joint_limits length must match joint count")
        object.__setattr__(self, "joint_twists", twists)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "gravity", gravity)
        object.__setattr__(self, "joint_limits", limits)
        # packed arrays for the numba kernels
        tw = np.array([t.as_array() for t in twists])
        tw.setflags(write=False)
        masses = np.array([l.mass for l in links])
        coms = np.array([l.com for l in links])
        inertias = np.array([l.inertia for l in links])
        for a in (masses, coms, inertias):
            a.setflags(write=False)
        object.__setattr__(self, "_tw", tw)
        object.__setattr__(self, "_masses", masses)
        object.__setattr__(self, "_coms", coms)
        object.__setattr__(self, "_inertias", inertias)

    @property
    def n(self) -> int:
        return len(self.joint_twists)

    def arrays(self):
        """(twists, g0R, g0p, masses, coms, inertias, gravity) for kernels."""
        return (self._tw, self.zero_pose.rot.m, self.zero_pose.pos,
                self._masses, self._coms, self._inertias, self.gravity)


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        qd = np.asarray(self.qdot, dtype=float).copy()
        if q.shape != qd.shape or q.ndim != 1:
            raise ValueError("q and qdot must be 1-D and the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state entries must be finite")
        q.setflags(write=False)
        qd.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


def _check_q(model: ManipulatorModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise DimensionMismatchError(
            f"expected a length-{model.n} joint vector, got shape {q.shape}")
    return q


def forward_kinematics(model: ManipulatorModel, q) -> Pose:
    """g(q) = exp(xi_1 q_1) ... exp(xi_n q_n) g(0)."""
    q = _check_q(model, q)
    tw, g0R, g0p, *_ = model.arrays()
    R, p = _fast.fk_raw(tw, g0R, g0p, q)
    return Pose(Rotation(R), p)


def spatial_jacobian(model: ManipulatorModel, q) -> np.ndarray:
    q = _check_q(model, q)
    tw = model.arrays()[0]
    n = model.n
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    _fast.fk_prefix(tw, q, preR, prep)
    js = np.empty((6, n))
    _fast.spatial_jacobian_into(tw, preR, prep, js)
    return js


def body_jacobian(model: ManipulatorModel, q) -> np.ndarray:
    """J_b with V^b = J_b(q) qdot; equals Ad_{g^-1} J_s."""
    q = _check_q(model, q)
    tw, g0R, g0p, *_ = model.arrays()
    n = model.n
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    _fast.fk_prefix(tw, q, preR, prep)
    js = np.empty((6, n))
    _fast.spatial_jacobian_into(tw, preR, prep, js)
    R = preR[n] @ g0R
    p = preR[n] @ g0p + prep[n]
    jb = np.empty((6, n))
    _fast.body_jacobian_into(js, R, p, jb)
    return jb


def mass_matrix(model: ManipulatorModel, q) -> np.ndarray:
    q = _check_q(model, q)
    tw, _, _, masses, coms, inertias, _ = model.arrays()
    return _fast.mass_raw(tw, masses, coms, inertias, q)


def gravity_vector(model: ManipulatorModel, q) -> np.ndarray:
    q = _check_q(model, q)
    tw, _, _, masses, coms, _, gravity = model.arrays()
    return _fast.gravity_raw(tw, masses, coms, gravity, q)


def coriolis_matrix(model: ManipulatorModel, q, qdot) -> np.ndarray:
    """Christoffel-form Coriolis matrix from central differences of M."""
    q = _check_q(model, q)
    qdot = _check_q(model, qdot)
    tw, _, _, masses, coms, inertias, _ = model.arrays()
    return _fast.coriolis_raw(tw, masses, coms, inertias, q, qdot, CORIOLIS_FD_STEP)


def potential_energy(model: ManipulatorModel, q) -> float:
    """Total gravitational potential; gravity_vector is its exact gradient."""
    q = _check_q(model, q)
    tw, _, _, masses, coms, _, gravity = model.arrays()
    n = model.n
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    _fast.fk_prefix(tw, q, preR, prep)
    total = 0.0
    for i in range(n):
        c = preR[i + 1] @ coms[i] + prep[i + 1]
        total -= masses[i] * float(gravity @ c)
    return total


def kinetic_energy(model: ManipulatorModel, q, qdot) -> float:
    qdot = _check_q(model, qdot)
    return 0.5 * float(qdot @ mass_matrix(model, q) @ qdot)


def operational_space(model: ManipulatorModel, q, qdot):
    """(M~, C~, G~) of the body-frame operational-space dynamics.

    Requires a square, well-conditioned body Jacobian (n = 6). Jdot is taken
    by central differences along qdot.
    """
    q = _check_q(model, q)
    qdot = _check_q(model, qdot)
    if model.n != 6:
        raise DimensionMismatchError("operational_space requires a 6-joint model")
    jb = body_jacobian(model, q)
    sv = np.linalg.svd(jb, compute_uv=False)
    if sv[0] / max(sv[-1], 1e-300) >= CONDITION_LIMIT:
        raise SingularJacobianError(
            f"body Jacobian condition number {sv[0] / max(sv[-1], 1e-300):.3e} over limit")
    eps = JACOBIAN_DOT_FD_STEP / max(1.0, float(np.linalg.norm(qdot)))
    jdot = (body_jacobian(model, q + eps * qdot)
            - body_jacobian(model, q - eps * qdot)) / (2.0 * eps)
    jb_inv = np.linalg.inv(jb)
    m = mass_matrix(model, q)
    c = coriolis_matrix(model, q, qdot)
    g = gravity_vector(model, q)
    m_t = jb_inv.T @ m @ jb_inv
    c_t = jb_inv.T @ (c - m @ jb_inv @ jdot) @ jb_inv
    g_t = jb_inv.T @ g
    return m_t, c_t, g_t


def step(model: ManipulatorModel, state: JointState, torque, external_torque,
         dt: float) -> JointState:
    """Semi-implicit Euler step of M qdd + C qd + G = T + T_e."""
    if not (0.0 < dt <= 0.01):
        raise ValueError("dt must be in (0, 0.01]")
    torque = _check_q(model, torque)
    external_torque = _check_q(model, external_torque)
    m = mass_matrix(model, state.q)
    c = coriolis_matrix(model, state.q, state.qdot)
    g = gravity_vector(model, state.q)
    qdd = np.linalg.solve(m, torque + external_torque - c @ state.qdot - g)
    qdot = state.qdot + dt * qdd
    if np.linalg.norm(qdot) > QDOT_BLOWUP:
        raise NumericalBlowupError(f"joint velocity norm {np.linalg.norm(qdot):.3e}")
    q = state.q + dt * qdot
    return JointState(q, qdot, state.t + dt)


def transform_base(model: ManipulatorModel, g_l: Pose) -> ManipulatorModel:
    """Rigidly relocate the whole mechanism by g_l (joint axes, zero pose,
    link COMs and inertia axes); gravity stays world-fixed."""
    ad = adjoint(g_l)
    rl = g_l.rot.m
    twists = tuple(Twist.from_array(ad @ t.as_array()) for t in model.joint_twists)
    links = tuple(
        LinkInertia(l.mass, g_l.apply(l.com), rl @ l.inertia @ rl.T)
        for l in model.links)
    return ManipulatorModel(twists, compose(g_l, model.zero_pose), links,
                            model.gravity, model.joint_limits)


# ---------------------------------------------------------------------------
# inverse kinematics (initial-pose placement for episodes)


def inverse_kinematics(model: ManipulatorModel, target: Pose, q0,
                       tol: float = 1e-10, max_iters: int = 200,
                       restarts: int = 12, seed: int = 0,
                       min_sigma: float = 0.05) -> np.ndarray:
    """Damped-least-squares IK with deterministic seeded restarts.

    Solutions whose body Jacobian has a smallest singular value below
    ``min_sigma`` (e.g. a folded wrist) are rejected in favor of a better
    branch; the best converged solution is returned if no branch clears the
    bar. Joints are wrapped into (-pi, pi] (revolute FK is 2pi-periodic).
    """
    rng = np.random.default_rng(seed)
    q_seed = _check_q(model, q0).copy()
    fallback = None
    fallback_sigma = -1.0
    for attempt in range(restarts + 1):
        q = q_seed if attempt == 0 else q_seed + rng.uniform(-0.9, 0.9, model.n)
        q = q.copy()
        for _ in range(max_iters):
            g = forward_kinematics(model, q)
            try:
                err = log_se3(compose(inverse(g), target)).as_array()
            except Exception:
                break  # at the log cut locus; restart from a new seed
            if np.max(np.abs(err)) < tol:
                q = np.mod(q + math.pi, 2.0 * math.pi) - math.pi
                sigma = float(np.linalg.svd(body_jacobian(model, q),
                                            compute_uv=False)[-1])
                if sigma >= min_sigma:
                    return q
                if sigma > fallback_sigma:
                    fallback, fallback_sigma = q, sigma
                break
            jb = body_jacobian(model, q)
            jtj = jb.T @ jb + 1e-8 * np.eye(model.n)
            dq = np.linalg.solve(jtj, jb.T @ err)
            ndq = np.linalg.norm(dq)
            if ndq > 0.5:
                dq *= 0.5 / ndq
            q = q + dq
    if fallback is not None:
        return fallback
    raise UnreachablePoseError("IK did not converge to the requested pose")


# ---------------------------------------------------------------------------
# model serialization


def model_to_dict(model: ManipulatorModel) -> dict:
    return {
        "joints": [{"twist": [float(x) for x in t.as_array()]} for t in model.joint_twists],
        "zero_pose": pose_to_dict(model.zero_pose),
        "links": [
            {"mass": float(l.mass),
             "com": [float(x) for x in l.com],
             "inertia": [float(x) for x in l.inertia.ravel()]}
            for l in model.links],
        "gravity": [float(x) for x in model.gravity],
        "limits": [[float(a), float(b)] for a, b in model.joint_limits],
    }


def model_from_dict(d: dict) -> ManipulatorModel:
    twists = tuple(Twist.from_array(j["twist"]) for j in d["joints"])
    links = tuple(
        LinkInertia(l["mass"], l["com"], np.asarray(l["inertia"], dtype=float).reshape(3, 3))
        for l in d["links"])
    limits = tuple((a, b) for a, b in d.get("limits", []))
    gravity = d.get("gravity", [0.0, 0.0, -9.81])
    return ManipulatorModel(twists, pose_from_dict(d["zero_pose"]), links, gravity, limits)


def load_model(path) -> ManipulatorModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: ManipulatorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)


# ---------------------------------------------------------------------------
# reference arm: a desk-scale 6-DOF elbow arm with a spherical-ish wrist.
# Stretched along +x at q = 0; shoulder height H1, upper arm A1, forearm A2,
# wrist-to-flange A3, flange-to-peg-tip D6. The tool frame sits at the peg
# tip with its z-axis pointing from the tip back into the peg.

H1 = 0.33
A1 = 0.35
A2 = 0.30
A3 = 0.10
D6 = 0.15
WRIST = A1 + A2 + A3      # wrist-cluster x at zero configuration
TIP = WRIST + D6


def _revolute(axis, point) -> Twist:
    axis = np.asarray(axis, dtype=float)
    point = np.asarray(point, dtype=float)
    return Twist(-np.cross(axis, point), axis)


def reference_arm() -> ManipulatorModel:
    """The documented test arm used across the experiments."""
    joints = (
        _revolute([0, 0, 1], [0, 0, 0]),
        _revolute([0, 1, 0], [0, 0, H1]),
        _revolute([0, 1, 0], [A1, 0, H1]),
        _revolute([1, 0, 0], [WRIST, 0, H1]),
        _revolute([0, 1, 0], [WRIST, 0, H1]),
        _revolute([1, 0, 0], [WRIST, 0, H1]),
    )
    # peg tip frame: body z points from the tip back along the peg (-x world
    # at zero configuration), body x points world +z
    r0 = Rotation(np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))
    zero_pose = Pose(r0, np.array([TIP, 0.0, H1]))
    # wrist inertias include gearbox-reflected terms; they keep the explicit
    # damping force stable at dt = 1e-3 for the largest damping the action
    # mapping can produce (dt * kd / I must stay well below 2)
    links = (
        LinkInertia(4.0, [0.0, 0.0, 0.22], np.diag([0.060, 0.060, 0.040])),
        LinkInertia(4.0, [A1 / 2, 0.0, H1], np.diag([0.020, 0.060, 0.060])),
        LinkInertia(2.5, [A1 + A2 / 2, 0.0, H1], np.diag([0.015, 0.035, 0.035])),
        LinkInertia(1.2, [A1 + A2 + 0.03, 0.0, H1], np.diag([0.15, 0.15, 0.10])),
        LinkInertia(1.0, [WRIST, 0.0, H1], np.diag([0.12, 0.12, 0.08])),
        LinkInertia(0.8, [WRIST + 0.07, 0.0, H1], np.diag([0.15, 0.15, 0.10])),
    )
    return ManipulatorModel(joints, zero_pose, links)
