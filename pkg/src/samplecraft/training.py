"""Stochastic training of filter weights with Adam, plus checkpoint persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import backprop_stack
from .errors import ConfigError, NumericError, UsageError
from .filters import FilterStack, KernelBasis, init_kernel_basis, zero_stack
from .program import LossContext, fixed_dims, max_dim_used, parse
from .samplers import SAMPLERS, sample

CHECKPOINT_FORMAT = "samplecraft-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class AdamState:
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(theta, grad, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(theta', state')`` without mutating inputs."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise UsageError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to Adam")
    m = np.zeros_like(theta) if state.m is None else state.m
    v = np.zeros_like(theta) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(t, m, v, state.beta1, state.beta2, state.eps)


def lr_schedule(step: int, lr0: float, decay: float = 0.95) -> float:
    if step < 0:
        raise UsageError("step must be >= 0")
    return lr0 * decay ** (step / 1000.0)


@dataclass
class TrainConfig:
    program: str
    dims: int = 2
    points: int = 256
    iterations: int = 30
    rbf_count: int = 20
    receptive: float = 0.4
    kernel_sigma: float = 0.04
    batch: int = 4
    batches: int = 10000
    init: str = "random"
    lr: float = 1e-6
    decay: float = 0.95
    seed: int = 0
    shrink: float = 1.0
    K: int | None = None
    targets: dict = field(default_factory=dict, repr=False)

    def validate(self):
        for name in ("dims", "points", "iterations", "rbf_count", "batch"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")
        if self.batches < 0:
            raise UsageError("batches must be >= 0")
        if self.init not in SAMPLERS:
            raise UsageError(f"unknown init sampler {self.init!r}")
        if not self.lr > 0 or not 0 < self.decay <= 1:
            raise UsageError("lr must be positive and decay in (0, 1]")


class TrainingDiverged(NumericError):
    """Loss went non-finite; ``stack`` holds the last good weights."""

    def __init__(self, message, stack, history):
        super().__init__(message)
        self.stack = stack
        self.history = history


def _item_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def training_batch(cfg: TrainConfig, step: int) -> list[np.ndarray]:
    """Fresh initial point sets for ``step``; reproducible from the config seed."""
    return [sample(cfg.init, cfg.points, cfg.dims, _item_seed(cfg.seed, step, b)).coords
            for b in range(cfg.batch)]


def initial_stack(cfg: TrainConfig) -> FilterStack:
    program = parse(cfg.program, cfg.dims)
    free = np.ones(cfg.dims, bool)
    free[list(fixed_dims(program))] = False
    basis = init_kernel_basis(cfg.rbf_count, cfg.dims, cfg.receptive, cfg.kernel_sigma)
    return zero_stack(basis, cfg.iterations, free, cfg.shrink)


def train(cfg: TrainConfig, progress=None):
    """Run ``cfg.batches`` Adam steps from the identity filter.

    Returns ``(stack, history)`` with one ``(step, loss, lr)`` row per step.
    ``progress(step, loss)`` is called after every step when given.
    """
    cfg.validate()
    program = parse(cfg.program, cfg.dims)
    if max_dim_used(program) >= cfg.dims:
        raise UsageError("program references a dimension beyond --dims")
    stack = initial_stack(cfg)
    state = AdamState()
    history = []
    targets = dict(cfg.targets)
    for step in range(cfg.batches):
        ctx = LossContext(seed=(cfg.seed, step), K=cfg.K, targets=targets)
        try:
            loss, grad = backprop_stack(training_batch(cfg, step), stack, program, ctx)
        except NumericError as exc:
            raise TrainingDiverged(f"step {step}: {exc}", stack, history) from exc
        targets = ctx.targets
        lr = lr_schedule(step, cfg.lr, cfg.decay)
        history.append((step, loss, lr))
        weights, state = adam_step(stack.weights, grad, state, lr)
        stack = stack.with_weights(weights)
        if progress is not None:
            progress(step, loss)
    return stack, history


def write_history_csv(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,loss,lr\n")
        for step, loss, lr in history:
            fh.write("%d,%.17g,%.17g\n" % (step, loss, lr))


# ---------------------------------------------------------------------------
# checkpoints

def _dump(value, indent=0) -> str:
    """JSON text with floats written as 17 significant digits."""
    pad = " " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{pad} {json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            rows = [pad + " " + _dump(v, indent + 1) for v in value]
            return "[\n" + ",\n".join(rows) + "\n" + pad + "]"
        return "[" + ", ".join(_dump(v, indent) for v in value) + "]"
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise NumericError("cannot store non-finite value in a checkpoint")
        return "%.17g" % value
    raise TypeError(f"cannot serialize {type(value).__name__}")


def checkpoint_text(stack: FilterStack, meta: dict | None = None) -> str:
    meta = meta or {}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n": stack.dim,
        "free_dims": [bool(f) for f in stack.free_dims],
        "m": stack.basis.m,
        "n_s": stack.iterations,
        "sigma": float(stack.basis.receptive),
        "sigma_N": float(stack.basis.kernel_sigma),
        "gamma": float(stack.shrink),
        "mu": stack.basis.means.tolist(),
        "theta": stack.weights.tolist(),
        "training_N": meta.get("training_N"),
        "program": meta.get("program"),
        "seed": meta.get("seed"),
        "batch_index": meta.get("batch_index"),
    }
    return _dump(payload) + "\n"


def save_checkpoint(path, stack: FilterStack, meta: dict | None = None):
    Path(path).write_text(checkpoint_text(stack, meta), encoding="utf-8")


def parse_checkpoint(text: str):
    """Inverse of :func:`checkpoint_text`; returns ``(stack, meta)``."""
    try:
        p = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from exc
    if not isinstance(p, dict) or p.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a samplecraft checkpoint")
    if p.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {p.get('version')!r} (expected {CHECKPOINT_VERSION})")
    try:
        mu = np.array(p["mu"], dtype=float).reshape(p["m"], p["n"])
        theta = np.array(p["theta"], dtype=float).reshape(p["n_s"], p["m"])
        basis = KernelBasis(mu, float(p["sigma_N"]), float(p["sigma"]))
        stack = FilterStack(basis, theta, np.array(p["free_dims"], bool), float(p["gamma"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from exc
    meta = {k: p.get(k) for k in ("training_N", "program", "seed", "batch_index")}
    return stack, meta


def load_checkpoint(path, dims: int | None = None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    stack, meta = parse_checkpoint(text)
    if dims is not None and stack.dim != dims:
        raise UsageError(f"checkpoint is {stack.dim}D but {dims}D points were requested")
    return stack, meta
