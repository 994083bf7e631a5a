"""Orthogonal weight modification: per-layer projectors over input history.

A fresh projector is the identity. Each absorbed batch-mean input x shrinks
the projector along x via the rank-1 recursion

    P <- P - (alpha + x^T P x)^{-1} P x x^T P

which keeps P equal to the closed form alpha * (alpha*I + sum x x^T)^{-1}.
Multiplying a backprop gradient by P on the right suppresses the update
components that would disturb outputs on previously absorbed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError
from .nn import ForwardTrace, Mlp


@dataclass
class Projector:
    P: np.ndarray
    alpha: float
    absorbed_count: int = 0

    @property
    def dim(self) -> int:
        return self.P.shape[0]


def projector_init(dim: int, alpha: float) -> Projector:
    if dim < 1:
        raise ValueError(f"projector dim must be >= 1, got {dim}")
    if alpha <= 0:
        raise ValueError(f"projector alpha must be positive, got {alpha}")
    return Projector(np.eye(dim), float(alpha))


def projector_update(p: Projector, xbar: np.ndarray) -> Projector:
    """Absorb one mean input vector (d x 1) into the projector, in place."""
    xbar = np.asarray(xbar, dtype=np.float64)
    if xbar.ndim == 1:
        xbar = xbar.reshape(-1, 1)
    if xbar.shape != (p.dim, 1):
        raise ShapeError(f"projector_update: vector {xbar.shape} vs projector dim {p.dim}")
    px = p.P @ xbar
    denom = p.alpha + float((xbar.T @ px).item())
    p.P -= (px @ px.T) / denom
    p.P = 0.5 * (p.P + p.P.T)  # re-symmetrize rounding residue
    p.absorbed_count += 1
    return p


def closed_form_projector(means: list[np.ndarray], alpha: float, dim: int | None = None) -> np.ndarray:
    """I - A (A^T A + alpha I)^{-1} A^T with the means stacked as columns.

    Test oracle for the recursion (Woodbury-equivalent form). An empty
    history is the identity; ``dim`` is only needed then.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    cols = [np.asarray(m, dtype=np.float64).reshape(-1, 1) for m in means]
    if not cols:
        if dim is None:
            raise ValueError("closed_form_projector: empty history needs an explicit dim")
        return np.eye(dim)
    d = cols[0].shape[0]
    if any(c.shape[0] != d for c in cols):
        raise ShapeError("closed_form_projector: means have mixed dimensions")
    A = np.hstack(cols)
    k = A.shape[1]
    inner = A.T @ A + alpha * np.eye(k)
    return np.eye(d) - A @ np.linalg.solve(inner, A.T)


def project_gradient(gradW: np.ndarray, p: Projector) -> np.ndarray:
    gradW = np.asarray(gradW, dtype=np.float64)
    if gradW.shape[1] != p.dim:
        raise ShapeError(f"project_gradient: grad {gradW.shape} vs projector dim {p.dim}")
    return gradW @ p.P


@dataclass
class OwmLayerSet:
    """Projectors for the weight matrices of an Mlp (optionally biases too).

    Bias projection treats the bias input as the constant scalar 1, so each
    bias gets a 1x1 projector.
    """

    alpha: float
    project_bias: bool = False
    weight_proj: list[Projector] = field(default_factory=list)
    bias_proj: list[Projector] = field(default_factory=list)

    @classmethod
    def for_mlp(cls, m: Mlp, alpha: float, project_bias: bool = False) -> "OwmLayerSet":
        s = cls(alpha=alpha, project_bias=project_bias)
        for layer in m.layers:
            s.weight_proj.append(projector_init(layer.in_dim, alpha))
            s.bias_proj.append(projector_init(1, alpha) if project_bias else None)
        return s


def owm_step(
    m: Mlp,
    proj: OwmLayerSet,
    trace: ForwardTrace,
    param_grads: list[tuple[np.ndarray, np.ndarray]],
    lr: float,
) -> None:
    """Projected gradient step, then absorb this batch's mean inputs.

    Every weight matrix of ``m`` must have a projector in ``proj``; biases
    take a plain sgd step unless bias projection is enabled.
    """
    if len(proj.weight_proj) != len(m.layers):
        raise ValueError(
            f"owm_step: {len(proj.weight_proj)} projectors for {len(m.layers)} layers"
        )
    if len(param_grads) != len(m.layers):
        raise ShapeError("owm_step: gradient list does not match layer count")
    for i, layer in enumerate(m.layers):
        dW, db = param_grads[i]
        layer.W -= lr * project_gradient(dW, proj.weight_proj[i])
        if proj.project_bias:
            layer.b -= lr * (db * proj.bias_proj[i].P[0, 0])
        else:
            layer.b -= lr * db
    for i in range(len(m.layers)):
        xbar = np.mean(trace.x_in[i], axis=1, keepdims=True)
        projector_update(proj.weight_proj[i], xbar)
        if proj.project_bias:
            projector_update(proj.bias_proj[i], np.ones((1, 1)))


def sgd_step(m: Mlp, param_grads: list[tuple[np.ndarray, np.ndarray]], lr: float) -> None:
    """Unprojected counterpart of owm_step."""
    for layer, (dW, db) in zip(m.layers, param_grads):
        layer.W -= lr * dW
        layer.b -= lr * db
