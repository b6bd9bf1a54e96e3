"""Control laws: geometric impedance control (tracking and regulation),
the Cartesian-space benchmark, the action-to-gain mapping with its damping
rule, geometric admittance control, and wrench-to-torque mapping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import FrameMismatchError
from .liegroup import (
    BODY,
    SPATIAL,
    Pose,
    Twist,
    Wrench,
    adjoint,
    cartesian_error,
    compose,
    elastic_wrench,
    exp_se3,
    inverse,
    velocity_error,
)

DAMPING_SCALE = 8.0
DLS_LAMBDA = 0.01
DLS_SIGMA_MIN = 0.01


@dataclass(frozen=True)
class ImpedanceGains:
    """Diagonal stiffness pair: kp (N/m) and kr (N*m/rad)."""

    kp: np.ndarray
    kr: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.kp, dtype=float).reshape(3).copy()
        kr = np.asarray(self.kr, dtype=float).reshape(3).copy()
        if np.any(kp <= 0.0) or np.any(kr <= 0.0):
            raise ValueError("stiffness entries must be positive")
        kp.setflags(write=False)
        kr.setflags(write=False)
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kr", kr)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.kp, self.kr])


@dataclass(frozen=True)
class Action:
    """Raw policy output, componentwise clamped to [-1, 1] on ingestion."""

    a: np.ndarray

    def __post_init__(self):
        a = np.clip(np.asarray(self.a, dtype=float).reshape(6), -1.0, 1.0)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)


class Controller(enum.Enum):
    GIC = "gic"
    CIC = "cic"
    GAC = "gac"


class ErrorKind(enum.Enum):
    GCEV = "gcev"
    CEV = "cev"


@dataclass(frozen=True)
class ControllerKind:
    """A (feedback law, policy input) combination from the study matrix."""

    controller: Controller
    error_kind: ErrorKind

    @property
    def label(self) -> str:
        return f"{self.controller.value}+{self.error_kind.value}"


def action_to_gains(action: Action) -> ImpedanceGains:
    """Log-space action mapping.

    kp_1 = 10^(a1 + 2.5), kp_2 = 10^(a2 + 2.5), kp_3 = 10^(1.5 a3 + 2.0),
    kr_j = 10^(0.6 a_j + 2.0). Monotone in every component.
    """
    a = action.a
    kp = np.array([10.0 ** (a[0] + 2.5),
                   10.0 ** (a[1] + 2.5),
                   10.0 ** (1.5 * a[2] + 2.0)])
    kr = 10.0 ** (0.6 * a[3:] + 2.0)
    return ImpedanceGains(kp, kr)


def damping_from_gains(gains: ImpedanceGains) -> np.ndarray:
    """Fixed damping rule: K_d = 8 * diag(kp, kr)^0.5 (as a 6x6 diagonal)."""
    return np.diag(DAMPING_SCALE * np.sqrt(gains.stacked()))


def gic_regulation(g: Pose, g_d: Pose, v_b: Twist, gains: ImpedanceGains,
                   g_tilde) -> Wrench:
    """Regulation law for a static goal: T = -f_G - K_d V^b + G~ (body frame)."""
    if v_b.frame != BODY:
        raise FrameMismatchError("gic_regulation requires a body-framed twist")
    g_tilde = np.asarray(g_tilde, dtype=float).reshape(6)
    f_g = elastic_wrench(g, g_d, gains.kp, gains.kr).as_array()
    kd = DAMPING_SCALE * np.sqrt(gains.stacked())
    out = -f_g - kd * v_b.as_array() + g_tilde
    return Wrench(out[:3], out[3:], BODY)


def gic_full(dyn_terms, g: Pose, g_d: Pose, v_b: Twist, v_d_b: Twist,
             vdot_d_b: Twist, gains: ImpedanceGains, fd_step: float = 1e-6) -> Wrench:
    """Full tracking law: T = M~ Vdot*_d + C~ V*_d + G~ - f_G - K_d e_V.

    dyn_terms is the (M~, C~, G~) triple from the operational-space
    transform. The translated desired velocity V*_d = Ad_{g_bd} V_d and its
    rate are evaluated along the trajectory implied by (v_b, v_d_b,
    vdot_d_b), the rate by central differences.
    """
    if v_b.frame != BODY or v_d_b.frame != BODY or vdot_d_b.frame != BODY:
        raise FrameMismatchError("gic_full requires body-framed twists")
    m_t, c_t, g_t = dyn_terms

    def translated(dt: float) -> np.ndarray:
        gt = compose(g, exp_se3(v_b, dt)) if dt else g
        gdt = compose(g_d, exp_se3(v_d_b, dt)) if dt else g_d
        g_bd = compose(inverse(gt), gdt)
        vd = v_d_b.as_array() + dt * vdot_d_b.as_array()
        return adjoint(g_bd) @ vd

    v_star = translated(0.0)
    vdot_star = (translated(fd_step) - translated(-fd_step)) / (2.0 * fd_step)
    f_g = elastic_wrench(g, g_d, gains.kp, gains.kr).as_array()
    kd = DAMPING_SCALE * np.sqrt(gains.stacked())
    e_v = v_b.as_array() - v_star
    out = m_t @ vdot_star + c_t @ v_star + np.asarray(g_t, dtype=float) - f_g - kd * e_v
    return Wrench(out[:3], out[3:], BODY)


def cic(g: Pose, g_d: Pose, v_s: Twist, gains: ImpedanceGains, g_tilde_c) -> Wrench:
    """Cartesian-space benchmark: T_C = -K_C e_C - K_dC V^s + G~_C (spatial)."""
    if v_s.frame != SPATIAL:
        raise FrameMismatchError("cic requires a spatial-framed twist")
    g_tilde_c = np.asarray(g_tilde_c, dtype=float).reshape(6)
    k_c = gains.stacked()
    kd = DAMPING_SCALE * np.sqrt(k_c)
    out = -k_c * cartesian_error(g, g_d) - kd * v_s.as_array() + g_tilde_c
    return Wrench(out[:3], out[3:], SPATIAL)


def wrench_to_torque(jacobian, w: Wrench, jacobian_frame: str) -> np.ndarray:
    """T = J^T w; the Jacobian's frame must match the wrench's tag."""
    if w.frame != jacobian_frame:
        raise FrameMismatchError(
            f"{w.frame} wrench cannot be mapped through a {jacobian_frame} Jacobian")
    return np.asarray(jacobian, dtype=float).T @ w.as_array()


def gac_step(v_b_k: Twist, g: Pose, g_d: Pose, m_des, gains: ImpedanceGains,
             t_e: Wrench, dt: float) -> Twist:
    """Discrete admittance update of the desired closed loop
    M Vdot + K_d V + f_G = T_e:

        V(k+1) = V(k) + dt * M^-1 (T_e(k) - K_d V(k) - f_G(k)).
    """
    if v_b_k.frame != BODY or t_e.frame != BODY:
        raise FrameMismatchError("gac_step operates on body-framed quantities")
    if not (0.0 < dt <= 0.01):
        raise ValueError("dt must be in (0, 0.01]")
    m_des = np.asarray(m_des, dtype=float).reshape(6, 6)
    f_g = elastic_wrench(g, g_d, gains.kp, gains.kr).as_array()
    kd = DAMPING_SCALE * np.sqrt(gains.stacked())
    v = v_b_k.as_array()
    v_next = v + dt * np.linalg.solve(m_des, t_e.as_array() - kd * v - f_g)
    return Twist(v_next[:3], v_next[3:], BODY)


DEFAULT_ADMITTANCE_INERTIA = np.diag([1.0, 1.0, 1.0, 0.1, 0.1, 0.1])


def desired_joint_velocity(j_b, v_b: Twist) -> np.ndarray:
    """qdot_d = J_b^-1 V^b, switching to damped least squares near singularity."""
    j_b = np.asarray(j_b, dtype=float)
    v = v_b.as_array()
    sv = np.linalg.svd(j_b, compute_uv=False)
    if sv[-1] < DLS_SIGMA_MIN:
        jtj = j_b.T @ j_b + (DLS_LAMBDA ** 2) * np.eye(j_b.shape[1])
        return np.linalg.solve(jtj, j_b.T @ v)
    return np.linalg.solve(j_b, v)
