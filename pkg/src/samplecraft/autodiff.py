"""Reverse-mode gradients of a program through an unrolled filter stack.

Every differentiable stage is a forward function paired with a hand-written
pullback (vector-Jacobian product). The stack is unrolled: the forward pass
keeps each iteration's input positions (and, within a memory budget, its pair
state) and the backward pass replays them in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from .errors import NumericError, UsageError
from .filters import FilterStack, apply_iteration, apply_stack, iteration_forward, iteration_vjp
from .parallel import pmap
from .program import LossContext, Program, evaluate_program
from .samplers import PointSet

STATE_BUDGET_BYTES = 1 << 30


@dataclass(frozen=True)
class DifferentiableOp:
    """A forward map ``x -> y`` with pullback ``(x, y, ct_y) -> ct_x`` (single array in and out)."""

    name: str
    forward: Callable
    pullback: Callable


def _iteration_op(w, basis, radius_scale=1.0, free_dims=None):
    return DifferentiableOp(
        "filter_iteration",
        lambda X: iteration_forward(X, w, basis, radius_scale, free_dims)[0],
        lambda X, Y, ct: iteration_vjp(X, w, basis, radius_scale, free_dims, ct)[0],
    )


def _weights_op(X, basis, radius_scale=1.0, free_dims=None):
    return DifferentiableOp(
        "filter_weights",
        lambda w: iteration_forward(X, w, basis, radius_scale, free_dims)[0],
        lambda w, Y, ct: iteration_vjp(X, w, basis, radius_scale, free_dims, ct)[1],
    )


def _periodogram_op(K):
    return DifferentiableOp(
        "periodogram",
        lambda X: L.periodogram(X, K).power,
        lambda X, P, ct: L.periodogram_vjp(X, K, ct),
    )


def _pcf_op(bins, r_max, h):
    def forward(X):
        return L._pcf_and_pullback(X, bins, r_max, h)[0]

    def pullback(X, H, ct):
        return L._pcf_and_pullback(X, bins, r_max, h)[1](ct)

    return DifferentiableOp("pcf_histogram", forward, pullback)


def _loss_op(name, fn):
    """Scalar loss of a single point set, wrapped as an op."""
    return DifferentiableOp(name, lambda X: np.array(fn([X])),
                            lambda X, y, ct: float(ct) * fn([X], grad=True)[1][0])


OPS = {
    "filter_iteration": _iteration_op,
    "filter_weights": _weights_op,
    "periodogram": _periodogram_op,
    "pcf_histogram": _pcf_op,
    "loss": _loss_op,
}


def adjoint_mismatch(op: DifferentiableOp, x, seed: int = 0, h: float = 1e-6) -> float:
    """Relative gap in ``<ct, J v> = <J^T ct, v>`` for random ``v`` and ``ct``.

    ``J v`` comes from a central difference of the forward map.
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    y = op.forward(x)
    v = rng.standard_normal(x.shape)
    ct = rng.standard_normal(np.shape(y))
    jvp = (op.forward(x + h * v) - op.forward(x - h * v)) / (2.0 * h)
    lhs = float(np.sum(ct * jvp))
    rhs = float(np.sum(op.pullback(x, y, ct) * v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


# ---------------------------------------------------------------------------
# stack backprop

def _as_array(X):
    return X.coords if isinstance(X, PointSet) else np.asarray(X, dtype=float)


def _state_bytes(N, n, m, iterations, batch, receptive):
    # expected pair count from the receptive-ball volume, with slack
    ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    pairs = N * max(N - 1, 0) * min(1.0, 2.0 * ball * receptive ** n)
    return pairs * (8 * (m + n + 3)) * iterations * batch


def _forward_tape(X, stack: FilterStack, keep_state: bool):
    tape, states = [X], []
    for level, w in enumerate(stack.weights):
        try:
            if keep_state:
                X, st = iteration_forward(X, w, stack.basis, stack.level_scale(level), stack.free_dims)
                states.append(st)
            else:
                X = apply_iteration(X, w, stack.basis, stack.level_scale(level), stack.free_dims)
        except NumericError as exc:
            raise NumericError(f"non-finite positions in filter iteration {level}: {exc}") from exc
        tape.append(X)
    return tape, states


def _backward_tape(tape, states, stack: FilterStack, ct):
    grad = np.zeros_like(stack.weights)
    for level in reversed(range(stack.iterations)):
        state = states[level] if states else None
        ct, ct_w = iteration_vjp(tape[level], stack.weights[level], stack.basis, stack.level_scale(level),
                                 stack.free_dims, ct, state)
        if not (np.all(np.isfinite(ct_w)) and np.all(np.isfinite(ct))):
            raise NumericError(f"non-finite gradient in filter iteration {level}")
        grad[level] = ct_w
    return grad


def backprop_stack(initial, stack: FilterStack, program: Program, ctx: LossContext):
    """Loss of ``program`` on the filtered batch and its gradient w.r.t. ``stack.weights``."""
    batch = [np.ascontiguousarray(_as_array(X)) for X in initial]
    if not batch:
        raise UsageError("empty batch")
    N, n = batch[0].shape
    if n != stack.dim:
        raise UsageError(f"point dimension {n} does not match filter dimension {stack.dim}")
    keep = _state_bytes(N, n, stack.basis.m, stack.iterations, len(batch),
                        stack.basis.receptive) <= STATE_BUDGET_BYTES
    runs = pmap(lambda X: _forward_tape(X, stack, keep), batch)
    outputs = [tape[-1] for tape, _ in runs]
    loss, cts = evaluate_program(program, outputs, ctx, grad=True)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads = pmap(lambda item: _backward_tape(item[0][0], item[0][1], stack, item[1]), list(zip(runs, cts)))
    total = np.zeros_like(stack.weights)
    for g in grads:  # fixed order
        total += g
    return float(loss), total


def forward_loss(initial, stack: FilterStack, program: Program, ctx: LossContext) -> float:
    batch = [apply_stack(_as_array(X), stack) for X in initial]
    return float(evaluate_program(program, batch, ctx))


# ---------------------------------------------------------------------------
# finite differences

@dataclass(frozen=True)
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    max_abs_error: float

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def compare_gradients(analytic, numeric) -> GradReport:
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(numeric, dtype=float)
    abs_err = np.abs(a - f)
    rel = abs_err / np.maximum(np.abs(a), 1e-8)
    return GradReport(a, f, float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0)))


def central_differences(fn, theta, h: float = 1e-5) -> np.ndarray:
    if not h > 0:
        raise UsageError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for idx in np.ndindex(theta.shape):
        tp = theta.copy()
        tp[idx] += h
        tm = theta.copy()
        tm[idx] -= h
        out[idx] = (fn(tp) - fn(tm)) / (2.0 * h)
    return out


def finite_difference_check(initial, stack: FilterStack, program: Program, ctx: LossContext,
                            h: float = 1e-5) -> GradReport:
    """Compare :func:`backprop_stack` against central differences in every weight."""
    _, analytic = backprop_stack(initial, stack, program, ctx)
    numeric = central_differences(
        lambda th: forward_loss(initial, stack.with_weights(th), program, ctx), stack.weights, h)
    return compare_gradients(analytic, numeric)
