"""Conditional feature generator with a two-headed critic.

The generator maps (noise, one-hot class) to a penultimate-layer feature
vector. The discriminator scores realism (scalar head, Wasserstein-style
with gradient penalty) and predicts the class (auxiliary head). From the
second task on, samples of the frozen previous generator are treated as
real so the new generator keeps earlier classes; current-generator fakes
carry current-task labels only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Rng, ShapeError
from .nn import (
    AdamState,
    DenseLayer,
    Mlp,
    backward,
    build_mlp,
    copy_mlp,
    cross_entropy,
    forward,
    grad_penalty_at,
    interpolate_pairs,
    mask_logits,
    mlp_params,
    one_hot,
    optimizer_step,
)


class TrainingDiverged(RuntimeError):
    """A loss went non-finite during adversarial training."""


@dataclass
class GanConfig:
    z_dim: int = 64
    hidden: int = 128
    n_critic: int = 5
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epochs: int = 60
    batch_size: int = 64
    lambda_gp: float = 10.0
    gen_output_activation: str = "relu"


@dataclass
class GeneratorNet:
    net: Mlp
    z_dim: int
    n_classes: int  # one-hot conditioning width (full class count)
    known_classes: tuple[int, ...]  # classes this generator was trained on

    @property
    def feat_dim(self) -> int:
        return self.net.out_dim


@dataclass
class DiscriminatorNet:
    trunk: Mlp
    dis_head: DenseLayer
    cls_head: DenseLayer

    def dis_mlp(self) -> Mlp:
        # Shares the layer objects: updates through this view hit the net.
        return Mlp(self.trunk.layers + [self.dis_head])

    def params(self) -> list[np.ndarray]:
        out = mlp_params(self.trunk)
        out += [self.dis_head.W, self.dis_head.b, self.cls_head.W, self.cls_head.b]
        return out


def build_generator(rng: Rng, feat_dim: int, n_classes: int, cfg: GanConfig) -> GeneratorNet:
    net = build_mlp(
        rng,
        [cfg.z_dim + n_classes, cfg.hidden, cfg.hidden, feat_dim],
        ["relu", "relu", cfg.gen_output_activation],
    )
    return GeneratorNet(net, cfg.z_dim, n_classes, known_classes=())


def build_discriminator(rng: Rng, feat_dim: int, n_classes: int, cfg: GanConfig) -> DiscriminatorNet:
    trunk = build_mlp(rng, [feat_dim, cfg.hidden, cfg.hidden], ["leaky_relu", "leaky_relu"])
    dis_head = build_mlp(rng, [cfg.hidden, 1], ["identity"]).layers[0]
    cls_head = build_mlp(rng, [cfg.hidden, n_classes], ["identity"]).layers[0]
    return DiscriminatorNet(trunk, dis_head, cls_head)


def copy_generator(g: GeneratorNet) -> GeneratorNet:
    return GeneratorNet(copy_mlp(g.net), g.z_dim, g.n_classes, tuple(g.known_classes))


def copy_discriminator(d: DiscriminatorNet) -> DiscriminatorNet:
    trunk = copy_mlp(d.trunk)
    dis = DenseLayer(d.dis_head.W.copy(), d.dis_head.b.copy(), d.dis_head.activation, d.dis_head.slope)
    cls = DenseLayer(d.cls_head.W.copy(), d.cls_head.b.copy(), d.cls_head.activation, d.cls_head.slope)
    return DiscriminatorNet(trunk, dis, cls)


def extract_features(E_frozen: Mlp, x: np.ndarray) -> np.ndarray:
    """Penultimate features h = E(x); E is read-only here."""
    h, _ = forward(E_frozen, x)
    return h


def generator_input(g: GeneratorNet, z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.vstack([z, one_hot(labels, g.n_classes)])


def sample_generator(g: GeneratorNet, rng: Rng, labels: np.ndarray) -> np.ndarray:
    """One feature vector per requested label, z ~ standard normal."""
    labels = np.asarray(labels, dtype=np.int64)
    unknown = set(labels.tolist()) - set(g.known_classes)
    if unknown:
        raise ValueError(f"sample_generator: labels {sorted(unknown)} outside known classes")
    z = rng.normal((g.z_dim, labels.size))
    h, _ = forward(g.net, generator_input(g, z, labels))
    return h


@dataclass
class ReplayBatch:
    features: np.ndarray  # (feat_dim, B)
    labels: np.ndarray  # (B,) int
    teacher_logits: np.ndarray  # frozen old head on these exact features
    classes: np.ndarray  # class set the labels were drawn from


def make_replay_batch(
    g: GeneratorNet, F_frozen: Mlp, classes_seen: np.ndarray, count: int, rng: Rng
) -> ReplayBatch:
    classes_seen = np.asarray(classes_seen, dtype=np.int64)
    if classes_seen.size == 0:
        raise ValueError("make_replay_batch: empty class set")
    if count < 1:
        raise ValueError(f"make_replay_batch: count must be >= 1, got {count}")
    labels = classes_seen[rng.integers(0, classes_seen.size, count)]
    features = sample_generator(g, rng, labels)
    teacher_logits, _ = forward(F_frozen, features)
    return ReplayBatch(features, labels, teacher_logits, classes_seen)


def _forward_heads(d: DiscriminatorNet, h: np.ndarray):
    trunk_out, trunk_trace = forward(d.trunk, h)
    dis_out = d.dis_head.W @ trunk_out + d.dis_head.b
    cls_out = d.cls_head.W @ trunk_out + d.cls_head.b
    return dis_out, cls_out, trunk_out, trunk_trace


def _backward_heads(d, trunk_out, trunk_trace, dis_grad, cls_grad):
    """Parameter grads for trunk + both heads given per-head output grads."""
    d_dis = (dis_grad @ trunk_out.T, np.sum(dis_grad, axis=1, keepdims=True))
    d_cls = (cls_grad @ trunk_out.T, np.sum(cls_grad, axis=1, keepdims=True))
    dtrunk_out = d.dis_head.W.T @ dis_grad + d.cls_head.W.T @ cls_grad
    trunk_grads, dh = backward(d.trunk, trunk_trace, dtrunk_out)
    return trunk_grads, d_dis, d_cls, dh


def _accumulate(total: list, grads: list, scale: float = 1.0) -> None:
    for t, g in zip(total, grads):
        t += scale * g


def _flatten_pairs(pairs) -> list[np.ndarray]:
    return [g for pair in pairs for g in pair]


def discriminator_loss(
    d: DiscriminatorNet,
    h_real: np.ndarray,
    y_real: np.ndarray,
    h_old: np.ndarray | None,
    c_old: np.ndarray | None,
    h_fake: np.ndarray,
    c_fake: np.ndarray,
    h_hat: np.ndarray,
    seen_classes: np.ndarray,
    lambda_gp: float,
) -> tuple[float, dict, list[np.ndarray]]:
    """Critic loss on fixed batches; returns (total, components, grads).

    Components follow the three-term structure: the critic score is pushed
    up on real and old-replay features, down on current fakes; the class
    head is trained on all three sources; the gradient penalty acts on the
    supplied interpolates.
    """

    params = d.params()
    total_grads = [np.zeros_like(p) for p in params]
    comps: dict[str, float] = {}

    def add_source(h, labels, dis_sign, key):
        dis_out, cls_out, trunk_out, trace = _forward_heads(d, h)
        B = h.shape[1]
        gan_term = dis_sign * float(np.mean(dis_out))
        masked = mask_logits(cls_out, seen_classes)
        ac_term, dcls = cross_entropy(masked, labels)
        ddis = np.full_like(dis_out, dis_sign / B)
        trunk_grads, d_dis, d_cls, _ = _backward_heads(d, trunk_out, trace, ddis, dcls)
        _accumulate(total_grads, _flatten_pairs(trunk_grads) + [*d_dis, *d_cls])
        comps[f"gan_{key}"] = gan_term
        comps[f"ac_{key}"] = ac_term

    add_source(h_real, y_real, -1.0, "real")
    if h_old is not None:
        add_source(h_old, c_old, -1.0, "old")
    else:
        comps["gan_old"] = 0.0
        comps["ac_old"] = 0.0
    add_source(h_fake, c_fake, +1.0, "fake")

    gp, gp_grads, _ = grad_penalty_at(d.dis_mlp(), h_hat)
    comps["gp"] = gp
    # dis_mlp params are trunk params followed by the dis head.
    n_trunk = 2 * len(d.trunk.layers)
    gp_flat = _flatten_pairs(gp_grads)
    _accumulate(total_grads[: n_trunk + 2], gp_flat, lambda_gp)

    total = (
        comps["gan_real"]
        + comps["gan_old"]
        + comps["gan_fake"]
        + comps["ac_real"]
        + comps["ac_old"]
        + comps["ac_fake"]
        + lambda_gp * gp
    )
    comps["total"] = total
    return total, comps, total_grads


def generator_loss(
    g: GeneratorNet,
    d: DiscriminatorNet,
    z: np.ndarray,
    labels: np.ndarray,
    seen_classes: np.ndarray,
) -> tuple[float, dict, list[np.ndarray]]:
    """Generator loss on fixed noise: fool the critic, satisfy the class head."""
    h_fake, gen_trace = forward(g.net, generator_input(g, z, labels))
    dis_out, cls_out, trunk_out, trunk_trace = _forward_heads(d, h_fake)
    B = z.shape[1]
    adv = -float(np.mean(dis_out))
    masked = mask_logits(cls_out, seen_classes)
    ac, dcls = cross_entropy(masked, labels)
    ddis = np.full_like(dis_out, -1.0 / B)
    _, _, _, dh = _backward_heads(d, trunk_out, trunk_trace, ddis, dcls)
    gen_grads, _ = backward(g.net, gen_trace, dh)
    total = adv + ac
    comps = {"adv": adv, "ac": ac, "total": total}
    return total, comps, _flatten_pairs(gen_grads)


def gan_losses(
    d: DiscriminatorNet,
    g_cur: GeneratorNet,
    g_old: GeneratorNet | None,
    h_real: np.ndarray,
    y_real: np.ndarray,
    rng: Rng,
    task_classes: np.ndarray,
    lambda_gp: float,
) -> tuple[dict, dict]:
    """Sample one round of batches and evaluate both losses.

    Returns (generator components, discriminator components); the middle
    (old-replay) terms are exactly zero on the first task.
    """
    task_classes = np.asarray(task_classes, dtype=np.int64)
    m = h_real.shape[1]
    if g_old is not None:
        old_classes = np.asarray(g_old.known_classes, dtype=np.int64)
        c_old = old_classes[rng.integers(0, old_classes.size, m)]
        h_old = sample_generator(g_old, rng, c_old)
        seen = np.union1d(old_classes, task_classes)
    else:
        h_old, c_old = None, None
        seen = task_classes
    c_fake = task_classes[rng.integers(0, task_classes.size, m)]
    h_fake = sample_generator(g_cur, rng, c_fake)

    real_side = h_real if h_old is None else np.hstack([h_real, h_old])
    c_gp = task_classes[rng.integers(0, task_classes.size, real_side.shape[1])]
    h_gp = sample_generator(g_cur, rng, c_gp)
    h_hat = interpolate_pairs(real_side, h_gp, rng)

    _, d_comps, _ = discriminator_loss(
        d, h_real, y_real, h_old, c_old, h_fake, c_fake, h_hat, seen, lambda_gp
    )
    z = rng.normal((g_cur.z_dim, m))
    c_gen = task_classes[rng.integers(0, task_classes.size, m)]
    _, g_comps, _ = generator_loss(g_cur, d, z, c_gen, seen)
    return g_comps, d_comps


def train_gan_task(
    features: np.ndarray,
    labels: np.ndarray,
    task_classes: np.ndarray,
    g_old: GeneratorNet | None,
    d_old: DiscriminatorNet | None,
    n_classes_total: int,
    cfg: GanConfig,
    rng: Rng,
) -> tuple[GeneratorNet, DiscriminatorNet]:
    """Adversarial phase for one task's (frozen) features.

    Warm-starts from copies of the previous nets when given; the previous
    generator itself is only sampled, never mutated. cfg.epochs == 0
    returns the initialized pair untouched.
    """
    task_classes = np.asarray(task_classes, dtype=np.int64)
    feat_dim = features.shape[0]
    if g_old is not None:
        g = copy_generator(g_old)
        seen = np.union1d(np.asarray(g_old.known_classes, dtype=np.int64), task_classes)
    else:
        g = build_generator(rng.spawn(1), feat_dim, n_classes_total, cfg)
        seen = task_classes
    d = copy_discriminator(d_old) if d_old is not None else build_discriminator(
        rng.spawn(2), feat_dim, n_classes_total, cfg
    )
    g.known_classes = tuple(int(c) for c in seen)

    old_classes = np.asarray(g_old.known_classes, dtype=np.int64) if g_old is not None else None
    g_params = mlp_params(g.net)
    d_params = d.params()
    g_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2)
    d_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2)

    n = features.shape[1]
    bs = min(cfg.batch_size, n)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            batch = order[start : start + bs]
            h_real = features[:, batch]
            y_real = labels[batch]
            m = h_real.shape[1]
            if g_old is not None:
                c_old = old_classes[rng.integers(0, old_classes.size, m)]
                h_old = sample_generator(g_old, rng, c_old)
            else:
                c_old, h_old = None, None
            c_fake = task_classes[rng.integers(0, task_classes.size, m)]
            h_fake = sample_generator(g, rng, c_fake)
            real_side = h_real if h_old is None else np.hstack([h_real, h_old])
            c_gp = task_classes[rng.integers(0, task_classes.size, real_side.shape[1])]
            h_gp = sample_generator(g, rng, c_gp)
            h_hat = interpolate_pairs(real_side, h_gp, rng)
            d_total, _, d_grads = discriminator_loss(
                d, h_real, y_real, h_old, c_old, h_fake, c_fake, h_hat, seen, cfg.lambda_gp
            )
            if not np.isfinite(d_total):
                raise TrainingDiverged(f"discriminator loss non-finite at step {step}")
            optimizer_step(d_opt, d_params, d_grads)

            step += 1
            if step % cfg.n_critic == 0:
                z = rng.normal((g.z_dim, m))
                c_gen = task_classes[rng.integers(0, task_classes.size, m)]
                g_total, _, g_grads = generator_loss(g, d, z, c_gen, seen)
                if not np.isfinite(g_total):
                    raise TrainingDiverged(f"generator loss non-finite at step {step}")
                optimizer_step(g_opt, g_params, g_grads)
    return g, d
