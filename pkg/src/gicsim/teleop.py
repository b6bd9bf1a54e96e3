"""Human-in-the-loop demonstration service.

Runs the admittance-controlled simulated arm in a 1 kHz inner loop, streams
telemetry frames over a WebSocket at a decimated rate, applies live gain
commands atomically at control-tick boundaries, and records (GCEV, action)
pairs while a recording is active.

Wire protocol (JSON text frames on ``/session``):

server -> client
    {"type": "telemetry", "tick", "t", "pose": {"p", "q"}, "e_g", "f_ext",
     "gains", "action", "reward", "recording", "success", "in_contact"}
    {"type": "ack", "command", "tick", ...}
    {"type": "error", "message"}

client -> server
    {"type": "set_gains", "actions": [6 values in [-1, 1]]}
    {"type": "start_recording"} | {"type": "stop_recording"}
    {"type": "reset", "case": "default|case1|case2|case3"}
    {"type": "save", "path": "..."}
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field

import numpy as np

from .control import (
    Action,
    DEFAULT_ADMITTANCE_INERTIA,
    action_to_gains,
    desired_joint_velocity,
    gac_step,
)
from .dynamics import (
    JointState,
    ManipulatorModel,
    body_jacobian,
    gravity_vector,
    inverse_kinematics,
    step,
)
from .environment import (
    ContactParams,
    EpisodeConfig,
    IK_SEED,
    TaskScene,
    contact_wrench,
    make_scene,
    new_friction_anchors,
    reward,
    sample_initial_pose,
    success,
    measure,
)
from .errors import BindFailureError, GicsimError
from .liegroup import Twist, pose_to_dict
from .policy import DemoDataset, DemoRecord, save_dataset
from .control import ErrorKind
from .liegroup import gcev


def joint_velocity_pd(model: ManipulatorModel, state: JointState, qd_des,
                      kv=50.0) -> np.ndarray:
    """Inner velocity loop: T = K_v (qd_des - qd) + G(q).

    kv may be a scalar or a per-joint vector (the diagonal of K_v).
    """
    qd_des = np.asarray(qd_des, dtype=float)
    return np.asarray(kv, dtype=float) * (qd_des - state.qdot) \
        + gravity_vector(model, state.q)


VELOCITY_LOOP_BANDWIDTH = 300.0  # rad/s, per joint


def velocity_loop_gains(model: ManipulatorModel, q) -> np.ndarray:
    """Per-joint velocity gains scaled with the joint-space inertia so every
    joint tracks at the same bandwidth (and the explicit integrator keeps the
    same stability margin on every axis)."""
    from .dynamics import mass_matrix

    return VELOCITY_LOOP_BANDWIDTH * np.diag(mass_matrix(model, q))


@dataclass
class TeleopConfig:
    dt: float = 1e-3
    telemetry_every: int = 20       # 50 Hz telemetry on a 1 kHz loop
    joint_pd_kv: float | None = None  # None: inertia-scaled per-joint gains
    contact: ContactParams = field(default_factory=ContactParams)
    case: str = "default"
    seed: int = 0
    realtime: bool = False          # pace the loop to wall-clock dt


class TeleopSession:
    """Single-writer simulation session driven one control tick at a time.

    Commands are applied between ticks via :meth:`apply`; the returned ack
    carries the tick at which the command takes effect (the next tick to be
    simulated).
    """

    def __init__(self, model: ManipulatorModel, scene: TaskScene | None = None,
                 config: TeleopConfig | None = None):
        self.model = model
        self.config = config or TeleopConfig()
        self.scene = scene or make_scene(self.config.case)
        self.rng = np.random.default_rng(self.config.seed)
        self.tick = 0
        self.action = np.zeros(6)
        self.recording = False
        self.buffer: list[DemoRecord] = []
        self.episode_seeds: list[int] = []
        self._episode_index = 0
        self.reset(self.config.case)

    # -- state management ---------------------------------------------------

    def reset(self, case: str | None = None) -> None:
        if case is not None:
            self.scene = make_scene(case)
            self.case = case
        g0 = sample_initial_pose(self.rng, self.scene)
        q0 = inverse_kinematics(self.model, g0, IK_SEED, seed=1234)
        self.state = JointState(q0, np.zeros(self.model.n))
        self.kv = (velocity_loop_gains(self.model, q0)
                   if self.config.joint_pd_kv is None else self.config.joint_pd_kv)
        self.v_des = Twist.zero()
        self.anchors = new_friction_anchors(self.scene)
        self.sim = measure(self.model, self.scene, self.state,
                           self.config.contact, self.state.t, self.anchors)
        self.success = False
        self._episode_index += 1

    # -- commands -----------------------------------------------------------

    def apply(self, command: dict) -> dict:
        """Apply a client command at the upcoming tick; returns the ack."""
        kind = command.get("type")
        effect_tick = self.tick + 1
        if kind == "set_gains":
            self.action = Action(np.asarray(command["actions"], dtype=float)).a
        elif kind == "start_recording":
            self.recording = True
        elif kind == "stop_recording":
            self.recording = False
        elif kind == "reset":
            self.reset(command.get("case", self.case))
        elif kind == "save":
            path = command["path"]
            if not self.buffer:
                raise ValueError("nothing recorded yet")
            data = DemoDataset(tuple(self.buffer), ErrorKind.GCEV,
                               source="teleop", scene_case=self.case,
                               seeds=(self.config.seed,))
            save_dataset(data, path)
            return {"type": "ack", "command": kind, "tick": effect_tick,
                    "path": str(path), "count": len(self.buffer)}
        else:
            raise ValueError(f"unknown command {kind!r}")
        return {"type": "ack", "command": kind, "tick": effect_tick}

    # -- simulation ---------------------------------------------------------

    def advance(self) -> dict | None:
        """Simulate one control tick; returns a telemetry frame on telemetry
        ticks, else None. The loop never raises: solver errors become error
        frames and freeze motion until a reset."""
        self.tick += 1
        gains = action_to_gains(Action(self.action))
        try:
            self.v_des = gac_step(self.v_des, self.sim.ee_pose,
                                  self.scene.hole_pose,
                                  DEFAULT_ADMITTANCE_INERTIA, gains,
                                  self.sim.f_ext, self.config.dt)
            jb = body_jacobian(self.model, self.state.q)
            qd_des = desired_joint_velocity(jb, self.v_des)
            torque = joint_velocity_pd(self.model, self.state, qd_des, self.kv)
            t_ext = jb.T @ self.sim.f_ext.as_array()
            self.state = step(self.model, self.state, torque, t_ext,
                              self.config.dt)
            self.sim = measure(self.model, self.scene, self.state,
                               self.config.contact, self.state.t, self.anchors)
        except GicsimError as err:
            return {"type": "error", "message": str(err), "tick": self.tick}
        if success(self.sim, self.scene):
            self.success = True
        if self.tick % self.config.telemetry_every != 0:
            return None
        frame = self.telemetry()
        if self.recording:
            self.buffer.append(DemoRecord(np.asarray(frame["e_g"]),
                                          self.action.copy(),
                                          self.state.t, self._episode_index))
        return frame

    def telemetry(self) -> dict:
        e_g = gcev(self.sim.ee_pose, self.scene.hole_pose)
        gains = action_to_gains(Action(self.action))
        return {
            "type": "telemetry",
            "tick": self.tick,
            "t": self.state.t,
            "pose": pose_to_dict(self.sim.ee_pose),
            "e_g": [float(x) for x in e_g],
            "f_ext": [float(x) for x in self.sim.f_ext.as_array()],
            "gains": [float(x) for x in gains.stacked()],
            "action": [float(x) for x in self.action],
            "reward": reward(self.sim, self.scene),
            "recording": self.recording,
            "success": self.success,
            "in_contact": bool(np.any(self.sim.f_ext.as_array() != 0.0)),
        }


async def serve(model: ManipulatorModel, scene: TaskScene | None = None,
                host: str = "127.0.0.1", port: int = 8765,
                config: TeleopConfig | None = None,
                started: asyncio.Queue | None = None) -> None:
    """Run the teleop WebSocket service until cancelled.

    One client at a time owns the session; extra connections receive an
    error frame and are closed. When ``started`` is given, the bound port is
    put on it once the service is listening (useful with port = 0).
    """
    import websockets

    config = config or TeleopConfig()
    session = TeleopSession(model, scene, config)
    clients: set = set()
    command_queue: asyncio.Queue = asyncio.Queue()

    async def handler(ws):
        path = getattr(getattr(ws, "request", None), "path", "/session")
        if path not in ("/session", "/"):
            await ws.close(code=4004, reason="unknown endpoint")
            return
        if clients:
            await ws.send(json.dumps({"type": "error",
                                      "message": "session already in use"}))
            await ws.close(code=4000, reason="busy")
            return
        clients.add(ws)
        try:
            async for text in ws:
                try:
                    command = json.loads(text)
                except json.JSONDecodeError as err:
                    await ws.send(json.dumps({"type": "error",
                                              "message": f"bad frame: {err}"}))
                    continue
                await command_queue.put((ws, command))
        finally:
            clients.discard(ws)

    async def control_loop():
        import time

        next_deadline = time.monotonic()
        while True:
            while not command_queue.empty():
                ws, command = command_queue.get_nowait()
                try:
                    ack = session.apply(command)
                except Exception as err:
                    ack = {"type": "error", "message": str(err),
                           "tick": session.tick}
                try:
                    await ws.send(json.dumps(ack))
                except Exception:
                    pass
            frame = session.advance()
            if frame is not None:
                text = json.dumps(frame)
                for ws in list(clients):
                    try:
                        await ws.send(text)
                    except Exception:
                        clients.discard(ws)
            if config.realtime:
                next_deadline += config.dt
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
            elif session.tick % 50 == 0:
                await asyncio.sleep(0)

    try:
        # keepalive pings are off: the control loop may lag wall time on a
        # loaded machine and liveness is visible through telemetry anyway
        server = await websockets.serve(handler, host, port,
                                        ping_interval=None, ping_timeout=None)
    except OSError as err:
        raise BindFailureError(f"cannot bind {host}:{port}: {err}") from err
    loop_task = asyncio.create_task(control_loop())
    if started is not None:
        started.put_nowait(server.sockets[0].getsockname()[1])
    try:
        await asyncio.Future()
    finally:
        loop_task.cancel()
        server.close()
        await server.wait_closed()
