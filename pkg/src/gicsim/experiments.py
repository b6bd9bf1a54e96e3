"""Experiment harness: demonstration collection, behavior-cloning training,
the 4-case x 4-combination transfer matrix, the invariance/equivariance
property audit, and per-step trace emission.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _fast
from . import dynamics as dyn
from . import environment as env
from . import liegroup as lg
from .control import Action, Controller, ControllerKind, ErrorKind, action_to_gains
from .errors import ExpertFailureRateError, MissingPolicyError
from .policy import (
    DemoDataset,
    DemoRecord,
    MlpPolicy,
    ScriptedExpert,
    TrainConfig,
    add_noise,
    bc_train,
    load_dataset,
    load_policy,
    save_dataset,
    save_policy,
)

COMBOS = (
    ControllerKind(Controller.GIC, ErrorKind.GCEV),
    ControllerKind(Controller.CIC, ErrorKind.CEV),
    ControllerKind(Controller.GIC, ErrorKind.CEV),
    ControllerKind(Controller.CIC, ErrorKind.GCEV),
)


@dataclass(frozen=True)
class ExperimentConfig:
    cases: tuple = env.CASES
    combos: tuple = COMBOS
    episodes_per_cell: int = 100
    master_seed: int = 0
    workers: int = 0                     # 0: use all available cores
    episode: env.EpisodeConfig = field(default_factory=env.EpisodeConfig)

    def __post_init__(self):
        if not self.cases or not self.combos:
            raise ValueError("cases and combos must be nonempty")
        if self.episodes_per_cell < 1:
            raise ValueError("episodes_per_cell must be >= 1")


@dataclass(frozen=True)
class CellResult:
    successes: int
    episodes: int
    mean_steps: float

    @property
    def percentage(self) -> float:
        return 100.0 * self.successes / self.episodes


@dataclass(frozen=True)
class ResultTable:
    cells: dict           # (combo label, case) -> CellResult
    rows: tuple           # per-episode tuples, already sorted

    def format_text(self, cases=env.CASES) -> str:
        labels = sorted({combo for combo, _ in self.cells},
                        key=lambda l: [c.label for c in COMBOS].index(l)
                        if l in [c.label for c in COMBOS] else 99)
        width = max(len(l) for l in labels) + 2
        out = ["success rates (%), " + " / ".join(cases)]
        out.append("method".ljust(width) + "".join(f"{c:>9s}" for c in cases))
        for label in labels:
            line = label.ljust(width)
            for case in cases:
                cell = self.cells.get((label, case))
                line += f"{cell.percentage:9.0f}" if cell else f"{'-':>9s}"
            out.append(line)
        return "\n".join(out)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("case,controller,error_kind,seed,success,steps,"
                     "final_depth,return\n")
            for row in self.rows:
                fh.write(",".join(str(x) for x in row) + "\n")


# ---------------------------------------------------------------------------
# collection


class NoisyExpert(ScriptedExpert):
    """Scripted expert with exploration noise on the emitted action."""

    def __init__(self, rng: np.random.Generator, sigma: float):
        super().__init__()
        self.rng = rng
        self.sigma = sigma

    def __call__(self, e):
        return add_noise(Action(super().__call__(e)), self.sigma, self.rng).a


def cmd_collect(n_traj: int, scene_case: str = "default",
                noise_sigma: float = 0.05, out_path=None, seed: int = 0,
                episode: env.EpisodeConfig | None = None,
                model: dyn.ManipulatorModel | None = None,
                min_success: float = 0.9):
    """Run the scripted expert with the geometric controller and record both
    error-vector streams, so one collection feeds all four study combos.

    Returns (gcev dataset, cev dataset); writes ``<out>_gcev.jsonl`` and
    ``<out>_cev.jsonl`` when out_path is given.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    model = model or dyn.reference_arm()
    scene = env.make_scene(scene_case)
    kind = ControllerKind(Controller.GIC, ErrorKind.GCEV)
    base = episode or env.EpisodeConfig()
    config = replace(base, record_trace=True)
    recs_g, recs_c = [], []
    successes = 0
    seeds = []
    for ep in range(n_traj):
        ep_seed = seed * 1_000_003 + ep
        seeds.append(ep_seed)
        rng = np.random.default_rng(ep_seed)
        expert = NoisyExpert(rng, noise_sigma)
        res = env.run_episode(model, scene, kind, expert, config, rng)
        successes += bool(res.success)
        if not res.success:
            continue
        tr = res.trace
        for k in range(0, res.steps, config.gain_update_period):
            recs_g.append(DemoRecord(tr.e_g[k], tr.action[k], tr.t[k], ep))
            recs_c.append(DemoRecord(tr.e_c[k], tr.action[k], tr.t[k], ep))
    rate = successes / n_traj
    if rate < min_success:
        raise ExpertFailureRateError(
            f"expert succeeded on {successes}/{n_traj} episodes "
            f"({100 * rate:.0f}% < {100 * min_success:.0f}%)")
    data_g = DemoDataset(tuple(recs_g), ErrorKind.GCEV, "scripted", scene_case,
                         tuple(seeds))
    data_c = DemoDataset(tuple(recs_c), ErrorKind.CEV, "scripted", scene_case,
                         tuple(seeds))
    if out_path is not None:
        base_path = str(out_path)
        save_dataset(data_g, base_path + "_gcev.jsonl")
        save_dataset(data_c, base_path + "_cev.jsonl")
    return data_g, data_c


# ---------------------------------------------------------------------------
# training


def cmd_train(dataset_path, error_kind: ErrorKind, cfg: TrainConfig,
              out_path) -> MlpPolicy:
    """Train a gain-scheduling policy from a stored dataset and persist it."""
    if not os.path.exists(str(dataset_path)):
        raise MissingPolicyError(f"dataset not found: {dataset_path}")
    data = load_dataset(dataset_path)
    if data.error_kind is not error_kind:
        raise ValueError(
            f"dataset is tagged {data.error_kind.value}, not {error_kind.value}")
    policy = bc_train(data, cfg)
    save_policy(policy, out_path)
    return policy


# ---------------------------------------------------------------------------
# evaluation


_EVAL_CTX: dict = {}


def _episode_seed(master: int, combo_idx: int, case: str, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        (master, combo_idx, env.CASES.index(case), episode))


def _run_cell_episode(task):
    combo_idx, case, ep_idx = task
    ctx = _EVAL_CTX
    combo: ControllerKind = ctx["combos"][combo_idx]
    policy = ctx["policies"][combo.error_kind]
    rng = np.random.default_rng(_episode_seed(ctx["master_seed"], combo_idx,
                                              case, ep_idx))
    res = env.run_episode(ctx["model"], ctx["scenes"][case], combo, policy,
                          ctx["episode"], rng)
    return (combo_idx, case, ep_idx, bool(res.success), res.steps,
            res.final_depth, res.return_sum)


def cmd_eval(policy_paths: dict, config: ExperimentConfig,
             model: dyn.ManipulatorModel | None = None,
             csv_path=None) -> ResultTable:
    """The transfer matrix: run episodes_per_cell fresh-seeded episodes for
    every (combo, case) cell and tabulate success rates.

    policy_paths maps ErrorKind to a saved policy file; the error vector
    names the policy input while the controller runs its own feedback law.
    """
    policies = {}
    for kind in {c.error_kind for c in config.combos}:
        path = policy_paths.get(kind)
        if path is None or not os.path.exists(str(path)):
            raise MissingPolicyError(f"no policy file for {kind.value}")
        policies[kind] = load_policy(path)
        if policies[kind].error_kind is not kind:
            raise ValueError(f"policy at {path} is tagged "
                             f"{policies[kind].error_kind.value}, wanted {kind.value}")
    model = model or dyn.reference_arm()
    _EVAL_CTX.clear()
    _EVAL_CTX.update({
        "model": model,
        "scenes": {case: env.make_scene(case) for case in config.cases},
        "policies": policies,
        "combos": config.combos,
        "master_seed": config.master_seed,
        "episode": config.episode,
    })
    tasks = [(ci, case, ep)
             for ci in range(len(config.combos))
             for case in config.cases
             for ep in range(config.episodes_per_cell)]
    workers = config.workers or os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers) as pool:
            results = list(pool.imap_unordered(_run_cell_episode, tasks,
                                               chunksize=4))
    else:
        results = [_run_cell_episode(t) for t in tasks]
    results.sort(key=lambda r: (r[0], env.CASES.index(r[1]), r[2]))
    cells = {}
    rows = []
    for ci, combo in enumerate(config.combos):
        for case in config.cases:
            sub = [r for r in results if r[0] == ci and r[1] == case]
            assert len(sub) == config.episodes_per_cell, "episode accounting is off"
            wins = sum(r[3] for r in sub)
            cells[(combo.label, case)] = CellResult(
                wins, len(sub), float(np.mean([r[4] for r in sub])))
            for r in sub:
                rows.append((case, combo.controller.value,
                             combo.error_kind.value, r[2], int(r[3]), r[4],
                             f"{r[5]:.6f}", f"{r[6]:.6f}"))
    table = ResultTable(cells, tuple(rows))
    if csv_path is not None:
        table.write_csv(csv_path)
    return table


# ---------------------------------------------------------------------------
# property audit


def _sample_scene(rng):
    g = lg.random_pose(rng)
    gd = lg.random_pose(rng)
    gl = lg.random_pose(rng)
    kp = 10.0 ** rng.uniform(0.5, 3.5, size=3)
    kr = 10.0 ** rng.uniform(1.4, 2.6, size=3)
    return g, gd, gl, kp, kr


def cmd_propcheck(samples: int = 10_000, tolerance: float = 1e-9,
                  dynamics_samples: int = 200, seed: int = 0,
                  out_path=None) -> dict:
    """Machine-checkable audit of the invariance/equivariance properties and
    the dynamics identities; returns {name: {passed, max_residual, ...}}."""
    rng = np.random.default_rng(seed)
    report = {}

    def add(name, residual, tol=tolerance, count=samples):
        report[name] = {"passed": bool(residual <= tol),
                        "max_residual": float(residual),
                        "tolerance": float(tol), "samples": int(count)}

    r_inv = r_rand = r_equi = r_roundtrip = r_adcomp = 0.0
    for _ in range(samples):
        g, gd, gl, kp, kr = _sample_scene(rng)
        tg, tgd = lg.compose(gl, g), lg.compose(gl, gd)
        vb = lg.Twist.from_array(rng.normal(size=6))
        vd = lg.Twist.from_array(rng.normal(size=6))
        r_inv = max(r_inv, np.max(np.abs(lg.gcev(g, gd) - lg.gcev(tg, tgd))))
        r_inv = max(r_inv, np.max(np.abs(
            lg.elastic_wrench(g, gd, kp, kr).as_array()
            - lg.elastic_wrench(tg, tgd, kp, kr).as_array())))
        r_inv = max(r_inv, abs(lg.distance(g, gd) - lg.distance(tg, tgd)))
        r_inv = max(r_inv, np.max(np.abs(
            lg.velocity_error(g, gd, vb, vd).as_array()
            - lg.velocity_error(tg, tgd, vb, vd).as_array())))
        r_rand = max(r_rand, np.max(np.abs(
            lg.elastic_wrench(g, lg.compose(gl, gd), kp, kr).as_array()
            - lg.elastic_wrench(lg.compose(lg.inverse(gl), g), gd, kp, kr).as_array())))
        lhs = lg.wrench_body_to_spatial(
            tg, lg.elastic_wrench(tg, tgd, kp, kr)).as_array()
        rhs = lg.adjoint(lg.inverse(gl)).T @ lg.wrench_body_to_spatial(
            g, lg.elastic_wrench(g, gd, kp, kr)).as_array()
        r_equi = max(r_equi, np.max(np.abs(lhs - rhs)))
        angle = math.acos(min(1.0, max(-1.0, 0.5 * (np.trace(g.rot.m) - 1.0))))
        if angle < math.pi - 1e-3:
            back = lg.exp_se3(lg.log_se3(g))
            r_roundtrip = max(r_roundtrip, np.max(np.abs(back.matrix() - g.matrix())))
        r_adcomp = max(r_adcomp, np.max(np.abs(
            lg.adjoint(lg.compose(g, gd)) - lg.adjoint(g) @ lg.adjoint(gd))))
    add("left_invariance", r_inv)
    add("goal_randomization_identity", r_rand)
    add("spatial_equivariance", r_equi)
    add("exp_log_roundtrip", r_roundtrip)
    add("adjoint_composition", r_adcomp)

    # dynamics identities on the reference arm
    model = dyn.reference_arm()
    r_spd = r_skew = r_jac = r_power = 0.0
    h = 1e-5
    for _ in range(dynamics_samples):
        q = rng.uniform(-1.5, 1.5, size=6)
        qd = rng.normal(size=6)
        m = dyn.mass_matrix(model, q)
        r_spd = max(r_spd, np.max(np.abs(m - m.T)),
                    max(0.0, -float(np.min(np.linalg.eigvalsh(m)))))
        c = dyn.coriolis_matrix(model, q, qd)
        mdot = (dyn.mass_matrix(model, q + h * qd)
                - dyn.mass_matrix(model, q - h * qd)) / (2 * h)
        v = rng.normal(size=6)
        r_skew = max(r_skew, abs(v @ (mdot - 2 * c) @ v)
                     / ((v @ v) * max(np.linalg.norm(qd), 1e-9)))
        g_pose = dyn.forward_kinematics(model, q)
        r_jac = max(r_jac, np.max(np.abs(
            dyn.spatial_jacobian(model, q)
            - lg.adjoint(g_pose) @ dyn.body_jacobian(model, q))))
        jb = dyn.body_jacobian(model, q)
        sv = np.linalg.svd(jb, compute_uv=False)
        if sv[0] / sv[-1] < 1e4:
            qdd = rng.normal(size=6)
            grav = dyn.gravity_vector(model, q)
            lhs_p = qd @ (m @ qdd + c @ qd + grav)
            eps = 1e-6 / max(1.0, float(np.linalg.norm(qd)))
            jdot = (dyn.body_jacobian(model, q + eps * qd)
                    - dyn.body_jacobian(model, q - eps * qd)) / (2 * eps)
            m_t, c_t, g_t = dyn.operational_space(model, q, qd)
            vel = jb @ qd
            rhs_p = vel @ (m_t @ (jb @ qdd + jdot @ qd) + c_t @ vel + g_t)
            r_power = max(r_power, abs(lhs_p - rhs_p) / max(abs(lhs_p), 1.0))
    add("mass_matrix_spd", r_spd, 1e-10, dynamics_samples)
    add("mdot_minus_2c_skew", r_skew, 1e-4, dynamics_samples)
    add("spatial_body_jacobian_relation", r_jac, tolerance, dynamics_samples)
    add("operational_space_power_balance", r_power, 1e-8, dynamics_samples)

    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2)
    return report


# ---------------------------------------------------------------------------
# traces


def cmd_trace(policy_path, combo: ControllerKind, case: str, seed: int,
              out_path, model: dyn.ManipulatorModel | None = None,
              episode: env.EpisodeConfig | None = None) -> int:
    """Write the per-step CSV behind the time-snap plots; returns row count."""
    if not os.path.exists(str(policy_path)):
        raise MissingPolicyError(f"policy not found: {policy_path}")
    policy = load_policy(policy_path)
    model = model or dyn.reference_arm()
    scene = env.make_scene(case)
    base = episode or env.EpisodeConfig()
    config = replace(base, record_trace=True)
    rng = np.random.default_rng(seed)
    res = env.run_episode(model, scene, combo, policy, config, rng)
    tr = res.trace
    header = (["t"] + [f"p{a}" for a in "xyz"] + [f"q{a}" for a in "wxyz"]
              + [f"e_g{i}" for i in range(6)] + [f"e_c{i}" for i in range(6)]
              + [f"action{i}" for i in range(6)] + [f"gain{i}" for i in range(6)]
              + [f"f_ext{i}" for i in range(6)] + ["reward"])
    with open(out_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(res.steps):
            row = np.concatenate([
                [tr.t[k]], tr.pos[k], tr.quat[k], tr.e_g[k], tr.e_c[k],
                tr.action[k], tr.gains[k], tr.f_ext[k], [tr.reward[k]]])
            fh.write(",".join(f"{x:.12g}" for x in row) + "\n")
    return res.steps
