"""Desk-scale peg-in-hole task: scene construction and transformation,
penalty contact, reward and success tests, initial-pose randomization, and
the episode rollout driver.

Geometry conventions: the hole frame sits at the hole *bottom* with its
z-axis along the insertion axis pointing out of the hole; the mouth plane
(the surrounding surface) is at z = hole_depth in that frame. The peg tip is
the end-effector origin and the peg body extends along body +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _fast
from .control import (
    Action,
    Controller,
    ControllerKind,
    DEFAULT_ADMITTANCE_INERTIA,
    ErrorKind,
    action_to_gains,
    desired_joint_velocity,
    gac_step,
)
from .dynamics import (
    JointState,
    ManipulatorModel,
    body_jacobian,
    forward_kinematics,
    gravity_vector,
    inverse_kinematics,
    step,
)
from .errors import GicsimError, UnreachablePoseError
from .liegroup import (
    BODY,
    Pose,
    Rotation,
    Twist,
    Wrench,
    compose,
    gcev,
    inverse,
    rot_x,
    rot_y,
)

CASES = ("default", "case1", "case2", "case3")

# documented stand-in geometry (the reward breakpoints imply a ~40 mm hole)
PEG_RADIUS = 0.0095
HOLE_RADIUS = 0.010
HOLE_DEPTH = 0.040
SURFACE_EXTENT = 0.25
START_OFFSET = 0.08
# success needs the tip inside the hole: clearance plus a penalty-deflection
# allowance
LATERAL_SUCCESS_BOUND = HOLE_RADIUS - PEG_RADIUS + 0.0005

# nominal hole-bottom position of the default scene (world frame, axis up);
# chosen so every tilted case keeps the insertion path well-conditioned
# (smallest body-Jacobian singular value ~0.2 along all four nominal paths)
DEFAULT_HOLE_POS = np.array([0.50, 0.0, 0.11])

# IK seed: an elbow-down, wrist-bent configuration over the default scene
IK_SEED = np.array([0.0, 0.9, 1.5, 0.0, 0.75, 0.0])

# rim-ring heights above the tip plane; the tip center alone takes a flat
# axial press, the rings catch wall and mouth-edge contacts
PEG_STATIONS = (0.005, 0.03)


@dataclass(frozen=True)
class TaskScene:
    hole_pose: Pose
    hole_radius: float = HOLE_RADIUS
    peg_radius: float = PEG_RADIUS
    hole_depth: float = HOLE_DEPTH
    surface_extent: float = SURFACE_EXTENT

    def __post_init__(self):
        if not self.peg_radius < self.hole_radius:
            raise ValueError("peg must be smaller than the hole")
        if self.hole_depth <= 0.0:
            raise ValueError("hole depth must be positive")

    @property
    def mouth_center(self) -> np.ndarray:
        return self.hole_pose.apply([0.0, 0.0, self.hole_depth])

    @property
    def axis(self) -> np.ndarray:
        return self.hole_pose.rot.m[:, 2].copy()


@dataclass(frozen=True)
class ContactParams:
    # friction is dry enough that a hard side press genuinely jams: the
    # transfer study depends on misdirected pushing being unrecoverable
    k_n: float = 2e4
    d_n: float = 50.0
    mu: float = 0.8
    k_t: float = 5e3

    def __post_init__(self):
        if min(self.k_n, self.d_n, self.mu, self.k_t) < 0.0:
            raise ValueError("contact parameters must be nonnegative")


@dataclass(frozen=True)
class SimState:
    joints: JointState
    ee_pose: Pose
    ee_twist: Twist
    f_ext: Wrench
    t: float


@dataclass(frozen=True)
class RandomizationRanges:
    translation: float = 0.02     # per-axis, hole frame (m)
    max_angle: float = math.radians(10.0)


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 1e-3
    horizon: float = 15.0
    gain_update_period: int = 10
    contact: ContactParams = field(default_factory=ContactParams)
    ranges: RandomizationRanges = field(default_factory=RandomizationRanges)
    record_trace: bool = False
    # a settled state that stopped changing cannot terminate later; cut it
    stall_window: float = 0.5
    stall_qd_tol: float = 1e-5
    stall_err_tol: float = 1e-9
    # GAC inner velocity loop; None scales the gain per joint with the
    # joint-space inertia so every joint tracks at the same bandwidth
    joint_pd_kv: float | None = None


@dataclass(frozen=True)
class EpisodeTrace:
    t: np.ndarray
    raw: np.ndarray       # per-step kernel rows (_fast.TRACE_* layout)
    action: np.ndarray    # (steps, 6) action held at each step
    gains: np.ndarray     # (steps, 6) stiffness diagonal held at each step

    @property
    def e_g(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_EG:_fast.TRACE_EG + 6]

    @property
    def e_c(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_EC:_fast.TRACE_EC + 6]

    @property
    def feedback_wrench(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_FB:_fast.TRACE_FB + 6]

    @property
    def f_ext(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_FEXT:_fast.TRACE_FEXT + 6]

    @property
    def reward(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_REWARD]

    @property
    def pos(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_P:_fast.TRACE_P + 3]

    @property
    def quat(self) -> np.ndarray:
        return self.raw[:, _fast.TRACE_QUAT:_fast.TRACE_QUAT + 4]


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    steps: int
    final_depth: float
    return_sum: float
    trace: EpisodeTrace | None = None
    error: str | None = None     # solver failure collapsed into task failure


# ---------------------------------------------------------------------------
# scenes


def _pivoted(rot: Rotation, pivot) -> Pose:
    pivot = np.asarray(pivot, dtype=float)
    return Pose(rot, pivot - rot.m @ pivot)


def case_transform(case: str) -> Pose:
    """Left action g_l producing the named case from the default scene."""
    mouth = DEFAULT_HOLE_POS + np.array([0.0, 0.0, HOLE_DEPTH])
    if case == "default":
        return Pose.identity()
    if case == "case1":
        return _pivoted(rot_x(math.radians(30.0)), mouth)
    if case == "case2":
        return _pivoted(rot_y(math.radians(-30.0)), mouth)
    if case == "case3":
        return _pivoted(rot_y(math.radians(-90.0)), mouth)
    raise ValueError(f"unknown case {case!r}")


def make_scene(case: str = "default") -> TaskScene:
    """Default scene: hole axis up (antiparallel to gravity); tilted cases
    rotate the whole scene about the hole mouth."""
    base = TaskScene(Pose(Rotation.identity(), DEFAULT_HOLE_POS.copy()))
    if case == "default":
        return base
    return transform_scene(base, case_transform(case))


def transform_scene(scene: TaskScene, g_l: Pose) -> TaskScene:
    return replace(scene, hole_pose=compose(g_l, scene.hole_pose))


def scene_to_dict(scene: TaskScene) -> dict:
    from .liegroup import pose_to_dict

    return {"hole_pose": pose_to_dict(scene.hole_pose),
            "hole_radius": scene.hole_radius, "peg_radius": scene.peg_radius,
            "hole_depth": scene.hole_depth,
            "surface_extent": scene.surface_extent}


def scene_from_dict(d: dict) -> TaskScene:
    """Build a scene from JSON: either {"case": name} with optional geometry
    overrides, or an explicit {"hole_pose": {...}} placement."""
    from .liegroup import pose_from_dict

    base = make_scene(d.get("case", "default"))
    pose = pose_from_dict(d["hole_pose"]) if "hole_pose" in d else base.hole_pose
    return TaskScene(
        pose,
        hole_radius=d.get("hole_radius", base.hole_radius),
        peg_radius=d.get("peg_radius", base.peg_radius),
        hole_depth=d.get("hole_depth", base.hole_depth),
        surface_extent=d.get("surface_extent", base.surface_extent))


def peg_sample_points(scene: TaskScene) -> np.ndarray:
    """Tip center plus two 8-point rims on the peg surface (body frame)."""
    pts = [np.zeros(3)]
    for z in PEG_STATIONS:
        for k in range(8):
            a = 2.0 * math.pi * k / 8.0
            pts.append(np.array([scene.peg_radius * math.cos(a),
                                 scene.peg_radius * math.sin(a), z]))
    return np.asarray(pts)


# ---------------------------------------------------------------------------
# contact, reward, success


def new_friction_anchors(scene: TaskScene) -> np.ndarray:
    """Fresh (unattached) tangential-spring state for every sample point."""
    return np.zeros((peg_sample_points(scene).shape[0], 4))


def contact_wrench(scene: TaskScene, g: Pose, v_b: Twist,
                   params: ContactParams,
                   anchors: np.ndarray | None = None) -> Wrench:
    """Body-frame wrench the scene exerts on the peg.

    Friction is a Coulomb-capped tangential spring against per-point anchor
    state; pass the ``anchors`` array from :func:`new_friction_anchors`
    across successive calls to get stick-slip (it is updated in place). With
    no anchors the call is the first-touch evaluation: normal and damping
    forces only.
    """
    if anchors is None:
        anchors = new_friction_anchors(scene)
    out = np.zeros(7)
    _fast.contact_into(g.rot.m, g.pos, v_b.as_array(), scene.hole_pose.rot.m,
                       scene.hole_pose.pos, scene.hole_radius, scene.peg_radius,
                       scene.hole_depth, scene.surface_extent, params.k_n,
                       params.d_n, params.k_t, params.mu,
                       peg_sample_points(scene), anchors, out)
    return Wrench(out[:3], out[3:6], BODY)


def tip_offsets(scene: TaskScene, g: Pose):
    """(axial, radial) offset of the peg tip in the hole frame."""
    rel = scene.hole_pose.rot.m.T @ (g.pos - scene.hole_pose.pos)
    return float(rel[2]), float(math.hypot(rel[0], rel[1]))


def reward(state: SimState, scene: TaskScene) -> float:
    """Insertion reward: distance shaping, depth bonus, contact-force cost."""
    z_off, d_p = tip_offsets(scene, state.ee_pose)
    psi = _fast.psi_raw(state.ee_pose.rot.m, state.ee_pose.pos,
                        scene.hole_pose.rot.m, scene.hole_pose.pos)
    return float(_fast.reward_terms(psi, z_off, d_p, state.f_ext.f[2]))


def success(state: SimState, scene: TaskScene) -> bool:
    """Tip below the depth threshold and radially inside the hole."""
    z_off, d_p = tip_offsets(scene, state.ee_pose)
    return bool(z_off < 0.026 and d_p < LATERAL_SUCCESS_BOUND)


# ---------------------------------------------------------------------------
# initial poses


def sample_initial_pose(rng: np.random.Generator, scene: TaskScene,
                        ranges: RandomizationRanges | None = None) -> Pose:
    """Start pose sampled relative to the scene so that the distribution of
    gcev(g0, hole) is identical across transformed scenes."""
    ranges = ranges or RandomizationRanges()
    dp = rng.uniform(-ranges.translation, ranges.translation, size=3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, ranges.max_angle)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    rot = Rotation(np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k))
    rel = Pose(rot, np.array([0.0, 0.0, START_OFFSET]) + dp)
    return compose(scene.hole_pose, rel)


def measure(model: ManipulatorModel, scene: TaskScene, state: JointState,
            params: ContactParams, t: float,
            anchors: np.ndarray | None = None) -> SimState:
    g = forward_kinematics(model, state.q)
    v_b = Twist.from_array(body_jacobian(model, state.q) @ state.qdot)
    f_ext = contact_wrench(scene, g, v_b, params, anchors)
    return SimState(state, g, v_b, f_ext, t)


# ---------------------------------------------------------------------------
# episode rollout


def run_episode(model: ManipulatorModel, scene: TaskScene, kind: ControllerKind,
                policy, config: EpisodeConfig, rng: np.random.Generator,
                start_pose: Pose | None = None) -> EpisodeResult:
    """Roll one episode: sample a start, place the arm by IK, then loop
    policy queries, gain updates, control, contact, and integration.

    ``policy`` maps the policy-input error vector (selected by
    ``kind.error_kind``) to a 6-vector action; a ``reset()`` method, if
    present, is invoked at episode start. Solver failures surface as task
    failures with the ``error`` field set.
    """
    g0 = start_pose if start_pose is not None else sample_initial_pose(
        rng, scene, config.ranges)
    try:
        q0 = inverse_kinematics(model, g0, IK_SEED, seed=1234)
    except UnreachablePoseError as err:
        return EpisodeResult(False, 0, 0.0, 0.0, None, f"ik: {err}")
    if hasattr(policy, "reset"):
        policy.reset()
    if kind.controller is Controller.GAC:
        return _run_gac_episode(model, scene, kind, policy, config, q0)

    tw, g0R, g0p, masses, coms, inertias, gravity = model.arrays()
    hole_r, hole_p = scene.hole_pose.rot.m, scene.hole_pose.pos
    pts = peg_sample_points(scene)
    anchors = new_friction_anchors(scene)
    c = config.contact
    ctrl_kind = _fast.KIND_GIC if kind.controller is Controller.GIC else _fast.KIND_CIC

    period = config.gain_update_period
    total = int(round(config.horizon / config.dt))
    chunk_buf = np.empty((period, _fast.TRACE_WIDTH))
    q, qd = q0.copy(), np.zeros(model.n)
    e_g, e_c = _fast.measure_errors(tw, g0R, g0p, hole_r, hole_p, q)

    traces = [] if config.record_trace else None
    actions_log = [] if config.record_trace else None
    gains_log = [] if config.record_trace else None

    steps_done = 0
    return_sum = 0.0
    stall_chunks = 0
    stall_needed = max(1, int(round(config.stall_window / (config.dt * period))))
    prev_query = None
    success_flag = False
    error = None
    last_row = None

    while steps_done < total:
        n_steps = min(period, total - steps_done)
        query = e_g if kind.error_kind is ErrorKind.GCEV else e_c
        act = Action(np.asarray(policy(query.copy()), dtype=float))
        gains = action_to_gains(act)
        kgain = gains.stacked()
        kdamp = 8.0 * np.sqrt(kgain)
        status = _fast.sim_chunk(
            tw, g0R, g0p, masses, coms, inertias, gravity,
            hole_r, hole_p, scene.hole_radius, scene.peg_radius,
            scene.hole_depth, scene.surface_extent, LATERAL_SUCCESS_BOUND,
            c.k_n, c.d_n, c.k_t, c.mu, pts, anchors,
            ctrl_kind, kgain, kdamp, 1e-6,
            q, qd, config.dt, n_steps, chunk_buf)
        rows = chunk_buf[:n_steps]
        hit = np.nonzero(rows[:, _fast.TRACE_SUCCESS] > 0.5)[0]
        used = int(hit[0]) + 1 if hit.size else n_steps
        return_sum += float(np.sum(rows[:used, _fast.TRACE_REWARD]))
        if config.record_trace:
            traces.append(rows[:used].copy())
            actions_log.append(np.tile(act.a, (used, 1)))
            gains_log.append(np.tile(kgain, (used, 1)))
        steps_done += used
        last_row = rows[used - 1].copy()
        if hit.size:
            success_flag = True
            break
        if status == _fast.BLOWUP:
            error = "numerical blowup"
            break
        e_g, e_c = _fast.measure_errors(tw, g0R, g0p, hole_r, hole_p, q)
        # stall cut: immovable state with an unchanged policy input is a
        # fixed point of the loop and can never succeed later
        if prev_query is not None:
            moved = float(np.max(rows[:, _fast.TRACE_QDMAX]))
            dq = float(np.max(np.abs(query - prev_query)))
            if moved < config.stall_qd_tol and dq < config.stall_err_tol:
                stall_chunks += 1
                if stall_chunks >= stall_needed:
                    break
            else:
                stall_chunks = 0
        prev_query = query

    final_depth = scene.hole_depth - float(last_row[_fast.TRACE_ZOFF]) if last_row is not None else 0.0
    trace = None
    if config.record_trace and traces:
        raw = np.concatenate(traces, axis=0)
        trace = EpisodeTrace(
            t=np.arange(raw.shape[0]) * config.dt,
            raw=raw,
            action=np.concatenate(actions_log, axis=0),
            gains=np.concatenate(gains_log, axis=0))
    return EpisodeResult(success_flag, steps_done, final_depth, return_sum,
                         trace, error)


def _run_gac_episode(model, scene, kind, policy, config, q0) -> EpisodeResult:
    """Admittance-mode rollout: gain-scheduled admittance produces a desired
    twist tracked by a joint-velocity PD loop (gravity compensated)."""
    from .liegroup import cartesian_error, elastic_wrench, quat_from_matrix
    from .teleop import joint_velocity_pd, velocity_loop_gains

    kv = (velocity_loop_gains(model, q0) if config.joint_pd_kv is None
          else config.joint_pd_kv)
    state = JointState(q0, np.zeros(model.n))
    v_des = Twist.zero()
    total = int(round(config.horizon / config.dt))
    return_sum = 0.0
    act = Action(np.zeros(6))
    gains = action_to_gains(act)
    success_flag = False
    steps_done = 0
    anchors = new_friction_anchors(scene)
    sim = measure(model, scene, state, config.contact, 0.0, anchors)
    rows = [] if config.record_trace else None
    actions_log = [] if config.record_trace else None
    gains_log = [] if config.record_trace else None
    for k in range(total):
        if k % config.gain_update_period == 0:
            e = (gcev(sim.ee_pose, scene.hole_pose)
                 if kind.error_kind is ErrorKind.GCEV
                 else cartesian_error(sim.ee_pose, scene.hole_pose))
            act = Action(np.asarray(policy(e), dtype=float))
            gains = action_to_gains(act)
        if config.record_trace:
            row = np.zeros(_fast.TRACE_WIDTH)
            g, gd = sim.ee_pose, scene.hole_pose
            row[_fast.TRACE_EG:_fast.TRACE_EG + 6] = gcev(g, gd)
            row[_fast.TRACE_EC:_fast.TRACE_EC + 6] = cartesian_error(g, gd)
            f_g = elastic_wrench(g, gd, gains.kp, gains.kr).as_array()
            kd = 8.0 * np.sqrt(gains.stacked())
            row[_fast.TRACE_FB:_fast.TRACE_FB + 6] = -f_g - kd * sim.ee_twist.as_array()
            row[_fast.TRACE_FEXT:_fast.TRACE_FEXT + 6] = sim.f_ext.as_array()
            row[_fast.TRACE_REWARD] = reward(sim, scene)
            z_off, d_p = tip_offsets(scene, g)
            row[_fast.TRACE_ZOFF] = z_off
            row[_fast.TRACE_DP] = d_p
            row[_fast.TRACE_PSI] = _fast.psi_raw(g.rot.m, g.pos, gd.rot.m, gd.pos)
            row[_fast.TRACE_SUCCESS] = float(success(sim, scene))
            row[_fast.TRACE_QDMAX] = float(np.max(np.abs(state.qdot)))
            row[_fast.TRACE_P:_fast.TRACE_P + 3] = g.pos
            row[_fast.TRACE_QUAT:_fast.TRACE_QUAT + 4] = quat_from_matrix(g.rot.m)
            rows.append(row)
            actions_log.append(act.a.copy())
            gains_log.append(gains.stacked())
        return_sum += reward(sim, scene)  # state before this step, as in the
        # kernel path, so trace rewards sum to the return
        v_des = gac_step(v_des, sim.ee_pose, scene.hole_pose,
                         DEFAULT_ADMITTANCE_INERTIA, gains, sim.f_ext, config.dt)
        jb = body_jacobian(model, state.q)
        qd_des = desired_joint_velocity(jb, v_des)
        torque = joint_velocity_pd(model, state, qd_des, kv)
        t_ext = jb.T @ sim.f_ext.as_array()
        try:
            state = step(model, state, torque, t_ext, config.dt)
        except GicsimError as err:
            return EpisodeResult(False, steps_done, 0.0, return_sum, None, str(err))
        sim = measure(model, scene, state, config.contact, state.t, anchors)
        steps_done = k + 1
        if success(sim, scene):
            success_flag = True
            break
    z_off, _ = tip_offsets(scene, sim.ee_pose)
    trace = None
    if config.record_trace and rows:
        trace = EpisodeTrace(t=np.arange(len(rows)) * config.dt,
                             raw=np.stack(rows),
                             action=np.stack(actions_log),
                             gains=np.stack(gains_log))
    return EpisodeResult(success_flag, steps_done, scene.hole_depth - z_off,
                         return_sum, trace, None)
