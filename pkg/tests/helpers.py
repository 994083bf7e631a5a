"""Shared test oracles: central finite differences and scalar-loop forward."""

from __future__ import annotations

import numpy as np


def central_diff(f, x: np.ndarray, idx: tuple, step: float = 1e-5) -> float:
    """Central finite difference of scalar f w.r.t. x[idx], restoring x."""
    orig = x[idx]
    x[idx] = orig + step
    up = f()
    x[idx] = orig - step
    down = f()
    x[idx] = orig
    return (up - down) / (2.0 * step)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_param_grads(f, params, analytic, rng, n_probes=30, step=1e-5, rtol=1e-4, floor=1e-8):
    """Compare analytic grads against finite differences at random coordinates.

    f: () -> scalar loss, recomputed from current param values.
    params/analytic: parallel lists of arrays.
    """
    worst = 0.0
    for _ in range(n_probes):
        pi = int(rng.integers(0, len(params)))
        p = params[pi]
        if p.size == 0:
            continue
        flat = int(rng.integers(0, p.size))
        idx = np.unravel_index(flat, p.shape)
        fd = central_diff(f, p, idx, step)
        an = analytic[pi][idx]
        if abs(fd) < floor and abs(an) < floor:
            continue
        worst = max(worst, rel_err(an, fd, floor))
    return worst


def scalar_loop_forward(mlp, x):
    """Brute-force re-implementation of the MLP forward with python loops."""
    a = [list(col) for col in np.asarray(x, dtype=np.float64).T]  # per-sample rows
    for layer in mlp.layers:
        W, b = layer.W, layer.b
        nxt = []
        for sample in a:
            z = []
            for r in range(W.shape[0]):
                acc = b[r, 0]
                for c in range(W.shape[1]):
                    acc += W[r, c] * sample[c]
                z.append(acc)
            out = []
            for v in z:
                if layer.activation == "relu":
                    out.append(v if v > 0 else 0.0)
                elif layer.activation == "leaky_relu":
                    out.append(v if v > 0 else layer.slope * v)
                elif layer.activation == "tanh":
                    out.append(float(np.tanh(v)))
                else:
                    out.append(v)
            nxt.append(out)
        a = nxt
    return np.array(a).T
