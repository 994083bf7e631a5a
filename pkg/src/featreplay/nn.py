"""Multilayer perceptrons with hand-rolled reverse-mode gradients.

Batches are column-major: an input of shape (in_dim, B) holds B samples.
Losses return (value, gradient) pairs; gradients are exact derivatives of
the returned scalar, suitable for finite-difference checking.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng, ShapeError, glorot_uniform

# Finite stand-in for -inf when masking logits of unseen classes: softmax
# probability underflows to exactly 0 and the gradient there is exactly 0.
NEG_MASK = -1e30

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")


@dataclass
class DenseLayer:
    W: np.ndarray  # (out_dim, in_dim)
    b: np.ndarray  # (out_dim, 1)
    activation: str = "identity"
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise ValueError(f"leaky_relu slope must be in (0,1), got {self.slope}")
        if self.b.shape != (self.W.shape[0], 1):
            raise ShapeError(f"bias shape {self.b.shape} does not match W {self.W.shape}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise ShapeError(
                    f"layer chain broken: {prev.W.shape} feeds {cur.W.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class ForwardTrace:
    """Per-layer inputs and pre-activations of one forward pass."""

    x_in: list[np.ndarray]  # input fed to each layer (post-activation of previous)
    z: list[np.ndarray]  # pre-activations W x + b

    def __len__(self) -> int:
        return len(self.x_in)


def _act(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0.0, z, slope * z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0.0, 1.0, slope)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _act_second_deriv(name: str, z: np.ndarray) -> np.ndarray:
    # Piecewise-linear activations have zero curvature almost everywhere.
    if name == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)


def build_mlp(rng: Rng, dims: list[int], activations: list[str], slope: float = 0.2) -> Mlp:
    """Glorot-uniform weights, zero biases. dims chains in->...->out."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        W = glorot_uniform(rng, dims[i + 1], dims[i])
        b = np.zeros((dims[i + 1], 1))
        layers.append(DenseLayer(W, b, act, slope))
    return Mlp(layers)


def copy_mlp(m: Mlp) -> Mlp:
    return copy.deepcopy(m)


def mlp_params(m: Mlp) -> list[np.ndarray]:
    out = []
    for layer in m.layers:
        out.append(layer.W)
        out.append(layer.b)
    return out


def forward(m: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != m.in_dim:
        raise ShapeError(f"forward: input {x.shape} does not feed first layer {m.layers[0].W.shape}")
    trace = ForwardTrace([], [])
    a = x
    for layer in m.layers:
        z = layer.W @ a + layer.b
        trace.x_in.append(a)
        trace.z.append(z)
        a = _act(layer.activation, z, layer.slope)
    return a, trace


def backward(
    m: Mlp, trace: ForwardTrace, grad_out: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact reverse-mode gradients of the traced pass.

    Returns per-layer (dW, db) in layer order plus the gradient w.r.t. the
    network input.
    """
    if len(trace) != len(m.layers):
        raise ShapeError("stale trace: layer count changed")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != (m.out_dim, trace.x_in[0].shape[1]):
        raise ShapeError(f"backward: grad_out {g.shape} does not match output")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(m.layers)
    for i in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[i]
        if trace.x_in[i].shape[0] != layer.in_dim or trace.z[i].shape[0] != layer.out_dim:
            raise ShapeError(f"stale trace at layer {i}: shapes drifted")
        dz = _act_deriv(layer.activation, trace.z[i], layer.slope) * g
        dW = dz @ trace.x_in[i].T
        db = np.sum(dz, axis=1, keepdims=True)
        grads[i] = (dW, db)
        g = layer.W.T @ dz
    return grads, g


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=0, keepdims=True)


def log_softmax_columns(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=0, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=0, keepdims=True))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((n_classes, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def mask_logits(logits: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Copy of logits with rows outside ``allowed`` pinned to NEG_MASK."""
    masked = np.full_like(logits, NEG_MASK)
    allowed = np.asarray(allowed, dtype=np.int64)
    masked[allowed, :] = logits[allowed, :]
    return masked


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class; grad w.r.t. logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes, batch = logits.shape
    if labels.size != batch:
        raise ShapeError(f"cross_entropy: {labels.size} labels for batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"cross_entropy: label outside [0, {n_classes})")
    logp = log_softmax_columns(logits)
    loss = -float(np.mean(logp[labels, np.arange(batch)]))
    grad = (softmax_columns(logits) - one_hot(labels, n_classes)) / batch
    return loss, grad


def distillation_loss(
    student_logits: np.ndarray, teacher_logits: np.ndarray, T: float
) -> tuple[float, np.ndarray]:
    """Soft cross-entropy against the temperature-softened teacher.

    The teacher distribution is a constant (no gradient flows to it); the
    returned gradient is the exact derivative w.r.t. the student logits,
    with no extra T^2 rescaling.
    """
    if T <= 0:
        raise ValueError(f"distillation_loss: temperature must be positive, got {T}")
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"distillation_loss: student {student_logits.shape} vs teacher {teacher_logits.shape}"
        )
    batch = student_logits.shape[1]
    p_teacher = softmax_columns(teacher_logits / T)
    logp_student = log_softmax_columns(student_logits / T)
    terms = np.where(p_teacher > 0.0, p_teacher * logp_student, 0.0)
    loss = -float(np.sum(terms)) / batch
    grad = (softmax_columns(student_logits / T) - p_teacher) / (T * batch)
    return loss, grad


def interpolate_pairs(h_real: np.ndarray, h_fake: np.ndarray, rng: Rng) -> np.ndarray:
    """Per-sample convex combinations eps*real + (1-eps)*fake."""
    if h_real.shape != h_fake.shape:
        raise ShapeError(f"interpolate: {h_real.shape} vs {h_fake.shape}")
    eps = rng.uniform(0.0, 1.0, (1, h_real.shape[1]))
    return eps * h_real + (1.0 - eps) * h_fake


def grad_penalty_at(
    d: Mlp, h_hat: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Penalty mean((||grad_h D(h_hat)|| - 1)^2) and its parameter gradients.

    The parameter gradients come from a second reverse pass over the
    (forward + input-gradient) computation; curvature of piecewise-linear
    activations is taken as zero almost everywhere. Also returns the
    per-sample input gradients grad_h D(h_hat) for direct checking.
    """
    if d.out_dim != 1:
        raise ShapeError(f"grad_penalty: discriminator head must be scalar, got {d.out_dim}")
    n_layers = len(d.layers)
    batch = h_hat.shape[1]

    _, trace = forward(d, h_hat)
    s = [_act_deriv(l.activation, trace.z[i], l.slope) for i, l in enumerate(d.layers)]
    s2 = [_act_second_deriv(l.activation, trace.z[i]) for i, l in enumerate(d.layers)]

    # First reverse pass: per-sample input gradients of the scalar output.
    gs = [None] * (n_layers + 1)  # gs[i] = d out / d a_i, gs[0] w.r.t. input
    ms = [None] * n_layers
    gs[n_layers] = np.ones((1, batch))
    for i in range(n_layers - 1, -1, -1):
        ms[i] = s[i] * gs[i + 1]
        gs[i] = d.layers[i].W.T @ ms[i]
    input_grads = gs[0]

    norms = np.sqrt(np.sum(input_grads * input_grads, axis=0, keepdims=True))
    penalty = float(np.mean((norms - 1.0) ** 2))

    # Adjoint of the input gradients; zero columns where the norm vanishes
    # (measure-zero kink of the penalty).
    safe = np.where(norms > 0.0, norms, 1.0)
    coeff = np.where(norms > 0.0, 2.0 * (norms - 1.0) / safe, 0.0) / batch
    g_adj = [None] * (n_layers + 1)
    g_adj[0] = coeff * input_grads

    dW = [np.zeros_like(l.W) for l in d.layers]
    db = [np.zeros_like(l.b) for l in d.layers]
    z_adj = [np.zeros_like(trace.z[i]) for i in range(n_layers)]

    # Reverse the first reverse pass (ascending through g_{i-1} = W_i^T (s_i g_i)).
    for i in range(n_layers):
        m_adj = d.layers[i].W @ g_adj[i]
        dW[i] += ms[i] @ g_adj[i].T
        g_adj[i + 1] = s[i] * m_adj
        z_adj[i] += s2[i] * gs[i + 1] * m_adj

    # Reverse the forward pass, folding in the curvature contributions.
    a_adj = np.zeros((d.out_dim, batch))  # network output is not part of the penalty
    for i in range(n_layers - 1, -1, -1):
        z_total = z_adj[i] + s[i] * a_adj
        dW[i] += z_total @ trace.x_in[i].T
        db[i] += np.sum(z_total, axis=1, keepdims=True)
        a_adj = d.layers[i].W.T @ z_total

    return penalty, list(zip(dW, db)), input_grads


def grad_penalty(
    d: Mlp, h_real: np.ndarray, h_fake: np.ndarray, rng: Rng
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Gradient penalty on random real/fake interpolates (one eps per sample)."""
    h_hat = interpolate_pairs(h_real, h_fake, rng)
    penalty, param_grads, _ = grad_penalty_at(d, h_hat)
    return penalty, param_grads


@dataclass
class SgdState:
    lr: float


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(state, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Update params in place (and return them). sgd or bias-corrected adam."""
    if len(params) != len(grads):
        raise ShapeError(f"optimizer_step: {len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"optimizer_step: param {p.shape} vs grad {g.shape}")
    if isinstance(state, SgdState):
        for p, g in zip(params, grads):
            p -= state.lr * g
        return params
    if isinstance(state, AdamState):
        if not state.m:
            state.m = [np.zeros_like(p) for p in params]
            state.v = [np.zeros_like(p) for p in params]
        state.t += 1
        bc1 = 1.0 - state.beta1**state.t
        bc2 = 1.0 - state.beta2**state.t
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        return params
    raise TypeError(f"unknown optimizer state {type(state).__name__}")
