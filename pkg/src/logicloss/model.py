"""Small MLP with hand-written reverse-mode gradients.

Forward passes are batched (rows are samples) and pure given a parameter
snapshot; gradients from any loss acting on the head outputs are pushed back
through a cached trace.  Losses return gradients w.r.t. the head outputs
(softmax probabilities or rectified regression outputs); the head Jacobian
is applied inside ``backward``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_CLAMP = 1e-12


class ShapeMismatchError(ValueError):
    pass


class StaleTraceError(RuntimeError):
    pass


class NonFiniteGradientError(ValueError):
    pass


class IndexOutOfRangeError(IndexError):
    pass


class Head(enum.Enum):
    SOFTMAX = "softmax"
    RELU_REGRESSION = "relu_regression"


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths include input and output, e.g. (4, 8, 3)."""

    layer_widths: tuple[int, ...]
    head: Head = Head.SOFTMAX
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_widths) < 3:
            raise ValueError("need at least one hidden layer")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")


@dataclass
class ModelParameters:
    spec: MLPSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    grad_w: list[np.ndarray]
    grad_b: list[np.ndarray]
    version: int = 0
    adam_m: list[np.ndarray] | None = None
    adam_v: list[np.ndarray] | None = None
    adam_t: int = 0

    def zero_grads(self) -> None:
        for g in self.grad_w:
            g.fill(0.0)
        for g in self.grad_b:
            g.fill(0.0)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (*self.weights, *self.biases)])

    def load_flat(self, theta: np.ndarray) -> None:
        k = 0
        for arr in (*self.weights, *self.biases):
            arr[...] = theta[k : k + arr.size].reshape(arr.shape)
            k += arr.size
        self.version += 1

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (*self.grad_w, *self.grad_b)])


def init(spec: MLPSpec) -> ModelParameters:
    """He-style fan-in scaled uniform weights, zero biases, seeded."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = math.sqrt(6.0 / fan_in)  # Var = 2 / fan_in
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParameters(
        spec,
        weights,
        biases,
        [np.zeros_like(w) for w in weights],
        [np.zeros_like(b) for b in biases],
    )


@dataclass
class ForwardTrace:
    version: int
    inputs: np.ndarray
    hidden_pre: list[np.ndarray]
    hidden_act: list[np.ndarray]
    logits: np.ndarray
    outputs: np.ndarray


def forward(p: ModelParameters, x: np.ndarray, head: Head | None = None) -> tuple[np.ndarray, ForwardTrace]:
    """Batched forward pass; ``x`` is (n, d_in) or a single (d_in,) vector."""
    head = head or p.spec.head
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != p.spec.layer_widths[0]:
        raise ShapeMismatchError(f"input width {x.shape[1]} != {p.spec.layer_widths[0]}")
    act = x
    hidden_pre, hidden_act = [], []
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        pre = act @ w.T + b
        hidden_pre.append(pre)
        act = np.maximum(pre, 0.0)
        hidden_act.append(act)
    logits = act @ p.weights[-1].T + p.biases[-1]
    if head == Head.SOFTMAX:
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        outputs = e / e.sum(axis=1, keepdims=True)
    else:
        outputs = np.maximum(logits, 0.0)
    trace = ForwardTrace(p.version, x, hidden_pre, hidden_act, logits, outputs)
    out = outputs[0] if squeeze else outputs
    return out, trace


def backward(p: ModelParameters, trace: ForwardTrace, out_grads: np.ndarray,
             head: Head | None = None) -> None:
    """Accumulate parameter gradients for dLoss/dOutputs of one trace.

    Multiple traces (e.g. per input slot) may be pushed back before a single
    ``apply_update``; their contributions sum.
    """
    head = head or p.spec.head
    if trace.version != p.version:
        raise StaleTraceError("trace was produced by an older parameter snapshot")
    g = np.asarray(out_grads, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace.outputs.shape:
        raise ShapeMismatchError(f"output grad shape {g.shape} != {trace.outputs.shape}")
    if head == Head.SOFTMAX:
        s = trace.outputs
        dlogits = s * g - s * (s * g).sum(axis=1, keepdims=True)
    else:
        dlogits = g * (trace.logits > 0.0)

    delta = dlogits
    for layer in range(len(p.weights) - 1, -1, -1):
        below = trace.hidden_act[layer - 1] if layer > 0 else trace.inputs
        p.grad_w[layer] += delta.T @ below
        p.grad_b[layer] += delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ p.weights[layer]) * (trace.hidden_pre[layer - 1] > 0.0)


def cross_entropy(pred: np.ndarray, target_class: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the target class with grad w.r.t. probs.

    Composed with the softmax Jacobian in ``backward`` this reproduces the
    usual ``pred - onehot`` logit gradient exactly.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if not 0 <= target_class < pred.shape[0]:
        raise IndexOutOfRangeError(f"target {target_class} out of range {pred.shape[0]}")
    clamped = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -math.log(clamped[target_class])
    grad = np.zeros_like(pred)
    grad[target_class] = -1.0 / clamped[target_class]
    return loss, grad


class UpdateRule(enum.Enum):
    PLAIN_SGD = "sgd"
    ADAPTIVE_MOMENTS = "adam"


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def apply_update(p: ModelParameters, step_size: float,
                 rule: UpdateRule = UpdateRule.PLAIN_SGD) -> None:
    """Step parameters along the accumulated gradients, then clear them."""
    grads = [*p.grad_w, *p.grad_b]
    params = [*p.weights, *p.biases]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient")
    if rule == UpdateRule.PLAIN_SGD:
        for arr, g in zip(params, grads):
            arr -= step_size * g
    else:
        if p.adam_m is None:
            p.adam_m = [np.zeros_like(a) for a in params]
            p.adam_v = [np.zeros_like(a) for a in params]
        p.adam_t += 1
        b1t = 1.0 - ADAM_BETA1**p.adam_t
        b2t = 1.0 - ADAM_BETA2**p.adam_t
        for arr, g, m, v in zip(params, grads, p.adam_m, p.adam_v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            arr -= step_size * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)
    p.version += 1
    p.zero_grads()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _format_array(arr: np.ndarray) -> str:
    # floats written with 17 significant digits: lossless float64 round-trip
    if arr.ndim == 1:
        return "[" + ", ".join(f"{v:.17g}" for v in arr) + "]"
    return "[" + ", ".join(_format_array(row) for row in arr) + "]"


def save_checkpoint(p: ModelParameters, path: str) -> None:
    lines = [
        "{",
        f'  "layer_widths": {json.dumps(list(p.spec.layer_widths))},',
        f'  "head": {json.dumps(p.spec.head.value)},',
        f'  "seed": {p.spec.seed},',
        '  "weights": [' + ", ".join(_format_array(w) for w in p.weights) + "],",
        '  "biases": [' + ", ".join(_format_array(b) for b in p.biases) + "]",
        "}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> ModelParameters:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = MLPSpec(tuple(doc["layer_widths"]), Head(doc["head"]), doc["seed"])
    p = init(spec)
    for w, saved in zip(p.weights, doc["weights"]):
        w[...] = np.array(saved)
    for b, saved in zip(p.biases, doc["biases"]):
        b[...] = np.array(saved)
    p.version += 1
    return p
