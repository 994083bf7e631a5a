"""Classifier = feature extractor E, class head F, optional rotation head F_r.

The class head is allocated at full width from the start; logits of unseen
classes are pinned to NEG_MASK in every loss and evaluation, so projector
shapes never change. The combined per-batch loss is

    L_CLS(rotated batch) + L_GFR(distillation on replayed features) + w * L_SSL

with one rotation index drawn per mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feature_gan import ReplayBatch
from .linalg import Rng
from .nn import Mlp, backward, build_mlp, cross_entropy, distillation_loss, forward, mask_logits
from .rotation import SslConfig, rotate_flat


@dataclass
class Classifier:
    E: Mlp
    F: Mlp  # single linear layer, full class width
    F_r: Mlp | None  # single linear layer, width K
    height: int
    width: int

    @property
    def feat_dim(self) -> int:
        return self.E.out_dim

    @property
    def n_classes(self) -> int:
        return self.F.out_dim


def build_classifier(
    rng: Rng,
    in_dim: int,
    hidden_dims: tuple[int, ...],
    n_classes: int,
    height: int,
    width: int,
    ssl_K: int | None = None,
) -> Classifier:
    E = build_mlp(rng, [in_dim, *hidden_dims], ["relu"] * len(hidden_dims))
    F = build_mlp(rng, [hidden_dims[-1], n_classes], ["identity"])
    F_r = build_mlp(rng, [hidden_dims[-1], ssl_K], ["identity"]) if ssl_K else None
    return Classifier(E, F, F_r, height, width)


def features_of(clf: Classifier, x: np.ndarray) -> np.ndarray:
    h, _ = forward(clf.E, x)
    return h


def averaged_inference(
    E: Mlp, F: Mlp, x: np.ndarray, height: int, width: int, K: int
) -> np.ndarray:
    """Logits on the mean of the K rotated-view features."""
    h_sum = None
    for k in range(1, K + 1):
        h, _ = forward(E, rotate_flat(x, height, width, k, K))
        h_sum = h if h_sum is None else h_sum + h
    logits, _ = forward(F, h_sum / K)
    return logits


def classify(clf: Classifier, x: np.ndarray, seen_classes: np.ndarray, ssl: SslConfig) -> np.ndarray:
    """Masked logits for evaluation; rotation-averaged when SSL is on."""
    if ssl.enabled:
        logits = averaged_inference(clf.E, clf.F, x, clf.height, clf.width, ssl.K)
    else:
        logits, _ = forward(clf.F, features_of(clf, x))
    return mask_logits(logits, seen_classes)


@dataclass
class ClassifierStep:
    total: float
    components: dict
    e_grads: list
    f_grads: list
    fr_grads: list | None
    e_trace: object
    f_trace: object
    fr_trace: object | None
    replay_f_grads: list | None
    replay_features: np.ndarray | None


def combined_classifier_loss(
    clf: Classifier,
    x: np.ndarray,
    y: np.ndarray,
    replay: ReplayBatch | None,
    ssl: SslConfig,
    seen_classes: np.ndarray,
    temperature: float,
    rng: Rng,
) -> ClassifierStep:
    """One mini-batch of the multi-task classifier objective.

    Task-data gradients (e/f/fr) and replay gradients (f only; replayed
    features never reach E) are kept separate so the training step can
    project one and not the other.
    """
    if ssl.enabled:
        k = int(rng.integers(1, ssl.K + 1))
        x_used = rotate_flat(x, clf.height, clf.width, k, ssl.K)
    else:
        k = 1
        x_used = x

    h, e_trace = forward(clf.E, x_used)
    logits, f_trace = forward(clf.F, h)
    loss_cls, dlogits = cross_entropy(mask_logits(logits, seen_classes), y)
    f_grads, dh = backward(clf.F, f_trace, dlogits)

    loss_ssl = 0.0
    fr_grads = None
    fr_trace = None
    if ssl.enabled:
        rot_logits, fr_trace = forward(clf.F_r, h)
        rot_labels = np.full(x.shape[1], k - 1, dtype=np.int64)
        loss_ssl, drot = cross_entropy(rot_logits, rot_labels)
        fr_grads, dh_ssl = backward(clf.F_r, fr_trace, drot)
        fr_grads = [(ssl.weight * dW, ssl.weight * db) for dW, db in fr_grads]
        dh = dh + ssl.weight * dh_ssl
    e_grads, _ = backward(clf.E, e_trace, dh)

    loss_gfr = 0.0
    replay_f_grads = None
    replay_features = None
    if replay is not None:
        if replay.labels.size and replay.labels.max() >= clf.n_classes:
            raise ValueError(
                f"replay label {int(replay.labels.max())} exceeds head width {clf.n_classes}"
            )
        student_logits, replay_trace = forward(clf.F, replay.features)
        loss_gfr, dstudent = distillation_loss(
            mask_logits(student_logits, seen_classes),
            mask_logits(replay.teacher_logits, replay.classes),
            temperature,
        )
        replay_f_grads, _ = backward(clf.F, replay_trace, dstudent)
        replay_features = replay.features

    total = loss_cls + loss_gfr + ssl.weight * loss_ssl
    return ClassifierStep(
        total=total,
        components={"cls": loss_cls, "gfr": loss_gfr, "ssl": loss_ssl, "k": k},
        e_grads=e_grads,
        f_grads=f_grads,
        fr_grads=fr_grads,
        e_trace=e_trace,
        f_trace=f_trace,
        fr_trace=fr_trace,
        replay_f_grads=replay_f_grads,
        replay_features=replay_features,
    )
