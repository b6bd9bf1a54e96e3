"""Gain-scheduling policy stack: MLP forward/backward, behavior-cloning
trainer, scripted expert, noise injection, and persistence for policies and
demonstration datasets.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .control import Action, ErrorKind
from .errors import (
    CorruptPayloadError,
    DegenerateTrainingError,
    GradientMismatchError,
    NonFiniteInputError,
    SchemaVersionError,
)

POLICY_SCHEMA_VERSION = 1
DATASET_SCHEMA_VERSION = 1
DEFAULT_HIDDEN = (128, 128, 128)
EXPERT_LATERAL_THRESHOLD = 0.002
EXPERT_HYSTERESIS = 0.0005
EXPERT_MOUTH_THRESHOLD = 0.040   # axial GCEV above this means "over the mouth"
DEFAULT_NOISE_SIGMA = 0.05


@dataclass(frozen=True)
class MlpPolicy:
    """Rectifier MLP with a tanh output squashing actions into (-1, 1)."""

    weights: tuple
    biases: tuple
    error_kind: ErrorKind = ErrorKind.GCEV

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(bs) or len(ws) < 2:
            raise ValueError("need matching weights/biases with >= 1 hidden layer")
        if ws[0].shape[1] != 6 or ws[-1].shape[0] != 6:
            raise ValueError("policy input and output width must be 6")
        for w, b in zip(ws, bs):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length must match layer width")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def arch(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @staticmethod
    def init(rng: np.random.Generator, hidden=DEFAULT_HIDDEN,
             error_kind: ErrorKind = ErrorKind.GCEV) -> "MlpPolicy":
        """Uniform fan-in initialization, fully seed-determined."""
        sizes = (6,) + tuple(hidden) + (6,)
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return MlpPolicy(tuple(ws), tuple(bs), error_kind)

    def __call__(self, e) -> np.ndarray:
        return policy_forward(self, e).a


def _forward_cached(policy: MlpPolicy, x: np.ndarray):
    """x: (batch, 6). Returns output (batch, 6) and per-layer activations."""
    acts = [x]
    h = x
    last = len(policy.weights) - 1
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        z = h @ w.T + b
        h = np.tanh(z) if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts


def policy_forward(policy: MlpPolicy, e) -> Action:
    """Deterministic forward pass; rejects non-finite inputs."""
    e = np.asarray(e, dtype=float).reshape(6)
    if not np.all(np.isfinite(e)):
        raise NonFiniteInputError("policy input contains NaN or inf")
    out, _ = _forward_cached(policy, e[None, :])
    return Action(out[0])


def _loss_and_grads(policy: MlpPolicy, x: np.ndarray, target: np.ndarray):
    """Mean squared action error and its gradient in all weights/biases."""
    out, acts = _forward_cached(policy, x)
    diff = out - target
    batch = x.shape[0]
    loss = float(np.sum(diff * diff) / batch)
    # d loss / d out
    delta = (2.0 / batch) * diff * (1.0 - out * out)   # tanh'
    grads_w = [None] * len(policy.weights)
    grads_b = [None] * len(policy.biases)
    for i in range(len(policy.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ policy.weights[i]) * (acts[i] > 0.0)
    return loss, grads_w, grads_b


def policy_loss(policy: MlpPolicy, x, target) -> float:
    out, _ = _forward_cached(policy, np.asarray(x, dtype=float))
    diff = out - np.asarray(target, dtype=float)
    return float(np.sum(diff * diff) / x.shape[0])


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_error: float
    worst_parameter: str
    tolerance: float
    checked: int


def policy_gradient_check(policy: MlpPolicy, e, tol: float = 1e-5,
                          fd_step: float = 1e-5,
                          target=None) -> GradientCheckReport:
    """Backpropagation audit: analytic gradient vs central differences over
    every weight and bias of (a small) policy."""
    x = np.atleast_2d(np.asarray(e, dtype=float))
    if target is None:
        target = np.full((x.shape[0], 6), 0.5)
    target = np.asarray(target, dtype=float)
    _, grads_w, grads_b = _loss_and_grads(policy, x, target)
    worst = 0.0
    worst_name = "none"
    checked = 0

    def perturbed(layer, flat_index, delta, is_weight):
        ws = [w.copy() for w in policy.weights]
        bs = [b.copy() for b in policy.biases]
        if is_weight:
            ws[layer].flat[flat_index] += delta
        else:
            bs[layer].flat[flat_index] += delta
        return MlpPolicy(tuple(ws), tuple(bs), policy.error_kind)

    for layer in range(len(policy.weights)):
        for is_weight, grads in ((True, grads_w), (False, grads_b)):
            g = grads[layer]
            for idx in range(g.size):
                lp = policy_loss(perturbed(layer, idx, fd_step, is_weight), x, target)
                lm = policy_loss(perturbed(layer, idx, -fd_step, is_weight), x, target)
                fd = (lp - lm) / (2.0 * fd_step)
                an = g.flat[idx]
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
                checked += 1
                if rel > worst:
                    worst = rel
                    kind = "W" if is_weight else "b"
                    worst_name = f"{kind}{layer}[{idx}]"
    if worst >= tol:
        raise GradientMismatchError(
            f"gradient mismatch at {worst_name}: relative error {worst:.3e}")
    return GradientCheckReport(worst, worst_name, tol, checked)


# ---------------------------------------------------------------------------
# demonstrations


@dataclass(frozen=True)
class DemoRecord:
    error: np.ndarray
    action: np.ndarray
    t: float
    episode_id: int

    def __post_init__(self):
        e = np.asarray(self.error, dtype=float).reshape(6)
        a = np.asarray(self.action, dtype=float).reshape(6)
        if not np.all(np.isfinite(e)):
            raise ValueError("record error vector must be finite")
        if np.any(np.abs(a) > 1.0 + 1e-12):
            raise ValueError("record action out of bounds")
        object.__setattr__(self, "error", e)
        object.__setattr__(self, "action", a)


@dataclass(frozen=True)
class DemoDataset:
    records: tuple
    error_kind: ErrorKind
    source: str = "scripted"           # scripted | teleop
    scene_case: str = "default"
    seeds: tuple = ()

    def __post_init__(self):
        if len(self.records) == 0:
            raise ValueError("dataset must be nonempty")
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def __len__(self) -> int:
        return len(self.records)

    def arrays(self):
        e = np.stack([r.error for r in self.records])
        a = np.stack([r.action for r in self.records])
        return e, a


# ---------------------------------------------------------------------------
# behavior cloning


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 20
    max_epochs: int = 60
    early_stop_patience: int = 10
    validation_fraction: float = 0.1
    hidden: tuple = DEFAULT_HIDDEN
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.max_epochs, self.early_stop_patience,
               self.lr_decay_every) <= 0:
            raise ValueError("config counts must be positive")
        if not (0.0 < self.validation_fraction <= 0.5):
            raise ValueError("validation_fraction must be in (0, 0.5]")
        if self.learning_rate <= 0.0 or not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("bad learning-rate schedule")


def bc_train(data: DemoDataset, cfg: TrainConfig) -> MlpPolicy:
    """Minibatch Adam on mean squared action error with stepped learning-rate
    decay and early stopping; returns the best-validation weights and is
    bitwise deterministic under a fixed config seed."""
    if len(data) < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    rng = np.random.default_rng(cfg.seed)
    e_all, a_all = data.arrays()
    order = rng.permutation(len(data))
    n_val = max(1, int(round(len(data) * cfg.validation_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    e_tr, a_tr = e_all[train_idx], a_all[train_idx]
    e_val, a_val = e_all[val_idx], a_all[val_idx]
    # standardize inputs for conditioning; folded back into the first layer
    # below so the exported policy consumes raw error vectors
    in_mean = e_tr.mean(axis=0)
    in_scale = np.maximum(e_tr.std(axis=0), 1e-6)
    e_tr = (e_tr - in_mean) / in_scale
    e_val = (e_val - in_mean) / in_scale

    policy = MlpPolicy.init(rng, cfg.hidden, data.error_kind)
    ws = [w.copy() for w in policy.weights]
    bs = [b.copy() for b in policy.biases]
    m_w = [np.zeros_like(w) for w in ws]
    v_w = [np.zeros_like(w) for w in ws]
    m_b = [np.zeros_like(b) for b in bs]
    v_b = [np.zeros_like(b) for b in bs]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step_count = 0

    def snapshot():
        folded_w = [w.copy() for w in ws]
        folded_b = [b.copy() for b in bs]
        folded_b[0] = folded_b[0] - folded_w[0] @ (in_mean / in_scale)
        folded_w[0] = folded_w[0] / in_scale[None, :]
        return MlpPolicy(tuple(folded_w), tuple(folded_b), data.error_kind)

    best = snapshot()
    best_val = policy_loss(MlpPolicy(tuple(ws), tuple(bs), data.error_kind),
                           e_val, a_val)
    if not math.isfinite(best_val):
        raise DegenerateTrainingError("validation loss is not finite")
    since_best = 0

    for epoch in range(cfg.max_epochs):
        lr = cfg.learning_rate * (cfg.lr_decay ** (epoch // cfg.lr_decay_every))
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm) - cfg.batch_size + 1, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            current = MlpPolicy(tuple(ws), tuple(bs), data.error_kind)
            _, g_w, g_b = _loss_and_grads(current, e_tr[batch], a_tr[batch])
            step_count += 1
            corr1 = 1.0 - beta1 ** step_count
            corr2 = 1.0 - beta2 ** step_count
            for i in range(len(ws)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * g_w[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * g_w[i] ** 2
                ws[i] = ws[i] - lr * (m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * g_b[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * g_b[i] ** 2
                bs[i] = bs[i] - lr * (m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + eps)
        val = policy_loss(MlpPolicy(tuple(ws), tuple(bs), data.error_kind),
                          e_val, a_val)
        if not math.isfinite(val):
            raise DegenerateTrainingError("validation loss is not finite")
        if val < best_val:
            best_val = val
            best = snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    return best


# ---------------------------------------------------------------------------
# scripted expert


class ScriptedExpert:
    """Two-phase heuristic on the GCEV: high lateral / low axial gains while
    aligning over the mouth, then full gains to push through the friction.

    The phase switch carries a hysteresis band so noise on the error cannot
    chatter between gain sets.
    """

    error_kind = ErrorKind.GCEV
    ALIGN = np.array([1.0, 1.0, -1.0, 1.0, 1.0, 1.0])
    INSERT = np.ones(6)

    def __init__(self, lateral_threshold: float = EXPERT_LATERAL_THRESHOLD,
                 hysteresis: float = EXPERT_HYSTERESIS,
                 mouth_threshold: float = EXPERT_MOUTH_THRESHOLD):
        self.lateral_threshold = lateral_threshold
        self.hysteresis = hysteresis
        self.mouth_threshold = mouth_threshold
        self.phase = "align"

    def reset(self):
        self.phase = "align"

    def __call__(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        lateral = math.hypot(e[0], e[1])
        axial = e[2]
        if self.phase == "align":
            if (lateral <= self.lateral_threshold
                    and axial <= self.mouth_threshold):
                self.phase = "insert"
        else:
            if (lateral > self.lateral_threshold + self.hysteresis
                    or axial > self.mouth_threshold + self.hysteresis):
                self.phase = "align"
        return (self.INSERT if self.phase == "insert" else self.ALIGN).copy()


def scripted_expert(e, mem: str | None):
    """Functional form of the expert: (error, phase) -> (action, phase)."""
    expert = ScriptedExpert()
    expert.phase = mem or "align"
    action = expert(e)
    return Action(action), expert.phase


def add_noise(action: Action, sigma: float, rng: np.random.Generator) -> Action:
    """Exploration noise, clamped back into the action box."""
    if sigma == 0.0:
        return action
    return Action(np.clip(action.a + rng.normal(0.0, sigma, size=6), -1.0, 1.0))


# ---------------------------------------------------------------------------
# persistence


def _encode(arrays) -> str:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return base64.b64encode(payload).decode("ascii")


def _decode(blob: str, shapes):
    try:
        raw = base64.b64decode(blob.encode("ascii"), validate=True)
    except Exception as err:
        raise CorruptPayloadError(f"bad base64 payload: {err}") from err
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(raw) != need:
        raise CorruptPayloadError(f"payload length {len(raw)} != expected {need}")
    flat = np.frombuffer(raw, dtype="<f8")
    out = []
    ofs = 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(flat[ofs:ofs + n].reshape(s).astype(float))
        ofs += n
    return out


def save_policy(policy: MlpPolicy, path) -> None:
    doc = {
        "version": POLICY_SCHEMA_VERSION,
        "error_kind": policy.error_kind.value,
        "arch": list(policy.arch),
        "weights_b64": _encode(policy.weights),
        "biases_b64": _encode(policy.biases),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_policy(path) -> MlpPolicy:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CorruptPayloadError(f"unreadable policy file: {err}") from err
    version = doc.get("version")
    if version != POLICY_SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported policy schema version {version!r}")
    try:
        arch = [int(x) for x in doc["arch"]]
        kind = ErrorKind(doc["error_kind"])
        w_shapes = [(arch[i + 1], arch[i]) for i in range(len(arch) - 1)]
        b_shapes = [(arch[i + 1],) for i in range(len(arch) - 1)]
        weights = _decode(doc["weights_b64"], w_shapes)
        biases = _decode(doc["biases_b64"], b_shapes)
    except (KeyError, ValueError, TypeError) as err:
        raise CorruptPayloadError(f"malformed policy file: {err}") from err
    return MlpPolicy(tuple(weights), tuple(biases), kind)


def save_dataset(data: DemoDataset, path) -> None:
    """Line-delimited JSON records plus a sidecar metadata document."""
    path = str(path)
    with open(path, "w") as fh:
        for r in data.records:
            fh.write(json.dumps({
                "error": [float(x) for x in r.error],
                "action": [float(x) for x in r.action],
                "t": float(r.t),
                "episode_id": int(r.episode_id),
            }) + "\n")
    meta = {
        "version": DATASET_SCHEMA_VERSION,
        "error_kind": data.error_kind.value,
        "source": data.source,
        "scene_case": data.scene_case,
        "seeds": list(data.seeds),
        "count": len(data),
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset(path) -> DemoDataset:
    path = str(path)
    try:
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CorruptPayloadError(f"unreadable dataset metadata: {err}") from err
    if meta.get("version") != DATASET_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported dataset schema version {meta.get('version')!r}")
    records = []
    try:
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                records.append(DemoRecord(d["error"], d["action"], d["t"],
                                          d["episode_id"]))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        raise CorruptPayloadError(f"malformed dataset: {err}") from err
    if len(records) != meta.get("count"):
        raise CorruptPayloadError(
            f"dataset truncated: {len(records)} records, metadata says {meta.get('count')}")
    return DemoDataset(tuple(records), ErrorKind(meta["error_kind"]),
                       meta.get("source", "scripted"),
                       meta.get("scene_case", "default"),
                       tuple(meta.get("seeds", ())))
