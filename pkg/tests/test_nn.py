import numpy as np
import pytest

from featreplay.linalg import Rng, ShapeError
from featreplay.nn import (
    AdamState,
    DenseLayer,
    Mlp,
    SgdState,
    backward,
    build_mlp,
    cross_entropy,
    distillation_loss,
    forward,
    grad_penalty_at,
    interpolate_pairs,
    mask_logits,
    mlp_params,
    one_hot,
    optimizer_step,
    softmax_columns,
)

from helpers import central_diff, check_param_grads, rel_err, scalar_loop_forward


def test_forward_identity_layer():
    m = Mlp([DenseLayer(np.eye(3), np.zeros((3, 1)), "identity")])
    x = Rng(0).normal((3, 5))
    y, trace = forward(m, x)
    assert np.array_equal(y, x)
    assert len(trace) == 1


def test_forward_relu_all_negative():
    m = Mlp([DenseLayer(-np.eye(2), np.zeros((2, 1)), "relu")])
    y, _ = forward(m, np.abs(Rng(1).normal((2, 4))))
    assert np.array_equal(y, np.zeros((2, 4)))


def test_forward_matches_scalar_loop_oracle():
    rng = Rng(5)
    m = build_mlp(rng, [4, 6, 3], ["tanh", "identity"])
    x = rng.normal((4, 7))
    y, _ = forward(m, x)
    assert np.max(np.abs(y - scalar_loop_forward(m, x))) < 1e-12


def test_forward_shape_error():
    m = build_mlp(Rng(2), [4, 3], ["relu"])
    with pytest.raises(ShapeError):
        forward(m, np.zeros((5, 2)))


def test_forward_deterministic():
    m = build_mlp(Rng(3), [4, 5, 2], ["relu", "identity"])
    x = Rng(4).normal((4, 6))
    y1, _ = forward(m, x)
    y2, _ = forward(m, x)
    assert np.array_equal(y1, y2)


def test_backward_zero_grad_out():
    m = build_mlp(Rng(6), [3, 4, 2], ["tanh", "identity"])
    x = Rng(7).normal((3, 5))
    _, trace = forward(m, x)
    grads, gin = backward(m, trace, np.zeros((2, 5)))
    assert all(np.all(dW == 0) and np.all(db == 0) for dW, db in grads)
    assert np.all(gin == 0)


def test_backward_linear_layer_structure():
    # scalar output w^T x: dW = x^T (as a row), d input = w
    w = np.array([[2.0, -1.0, 0.5]])
    m = Mlp([DenseLayer(w.copy(), np.zeros((1, 1)), "identity")])
    x = np.array([[1.0], [2.0], [3.0]])
    _, trace = forward(m, x)
    grads, gin = backward(m, trace, np.ones((1, 1)))
    assert np.array_equal(grads[0][0], x.T)
    assert np.array_equal(grads[0][1], np.ones((1, 1)))
    assert np.array_equal(gin, w.T)


def test_backward_matches_finite_differences():
    rng = Rng(8)
    m = build_mlp(rng, [4, 6, 3], ["tanh", "tanh"])
    x = rng.normal((4, 5))
    target = rng.normal((3, 5))

    def loss():
        y, _ = forward(m, x)
        return 0.5 * float(np.sum((y - target) ** 2))

    y, trace = forward(m, x)
    grads, _ = backward(m, trace, y - target)
    params = mlp_params(m)
    flat = [g for pair in grads for g in pair]
    worst = check_param_grads(loss, params, flat, rng, n_probes=60)
    assert worst < 1e-4


def test_backward_stale_trace_rejected():
    m = build_mlp(Rng(9), [3, 4, 2], ["relu", "identity"])
    x = Rng(10).normal((3, 5))
    _, trace = forward(m, x)
    m.layers[0].W = np.zeros((5, 3))  # shape drift
    m.layers[0].b = np.zeros((5, 1))
    with pytest.raises(ShapeError):
        backward(m, trace, np.zeros((2, 5)))


def test_cross_entropy_uniform_logits():
    loss, _ = cross_entropy(np.zeros((7, 3)), np.array([0, 3, 6]))
    assert abs(loss - np.log(7)) < 1e-12


def test_cross_entropy_confident_limit():
    logits = one_hot(np.array([1, 2]), 4) * 1e4
    loss, _ = cross_entropy(logits, np.array([1, 2]))
    assert loss < 1e-10


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((3, 2)), np.array([0, 3]))


def test_cross_entropy_gradient_finite_differences():
    rng = Rng(11)
    logits = rng.normal((5, 6))
    labels = np.array(rng.integers(0, 5, 6))
    _, grad = cross_entropy(logits, labels)
    worst = 0.0
    for _ in range(40):
        idx = (int(rng.integers(0, 5)), int(rng.integers(0, 6)))
        fd = central_diff(lambda: cross_entropy(logits, labels)[0], logits, idx)
        worst = max(worst, rel_err(grad[idx], fd))
    assert worst < 1e-4


def test_distillation_matched_logits_zero_grad():
    logits = Rng(12).normal((4, 5))
    for T in (0.5, 1.0, 2.0, 7.0):
        loss, grad = distillation_loss(logits, logits.copy(), T)
        assert np.max(np.abs(grad)) < 1e-12
        assert loss >= 0.0


def test_distillation_teacher_shift_invariance():
    rng = Rng(13)
    student = rng.normal((4, 5))
    teacher = rng.normal((4, 5))
    shift = rng.normal((1, 5))
    l1, g1 = distillation_loss(student, teacher, 2.0)
    l2, g2 = distillation_loss(student, teacher + shift, 2.0)
    assert abs(l1 - l2) < 1e-10
    assert np.max(np.abs(g1 - g2)) < 1e-12


def test_distillation_gradient_finite_differences_T2():
    rng = Rng(14)
    student = rng.normal((5, 4))
    teacher = rng.normal((5, 4))
    _, grad = distillation_loss(student, teacher, 2.0)
    worst = 0.0
    for _ in range(40):
        idx = (int(rng.integers(0, 5)), int(rng.integers(0, 4)))
        fd = central_diff(lambda: distillation_loss(student, teacher, 2.0)[0], student, idx)
        worst = max(worst, rel_err(grad[idx], fd))
    assert worst < 1e-4


def test_distillation_T1_onehot_teacher_equals_cross_entropy():
    rng = Rng(15)
    student = rng.normal((6, 8))
    labels = np.array(rng.integers(0, 6, 8))
    teacher = one_hot(labels, 6) * 1e4
    dl, dgrad = distillation_loss(student, teacher, 1.0)
    cl, cgrad = cross_entropy(student, labels)
    assert abs(dl - cl) < 1e-10
    assert np.max(np.abs(dgrad - cgrad)) < 1e-10


def test_distillation_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        distillation_loss(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def test_mask_logits_zeroes_probability_and_gradient():
    rng = Rng(16)
    logits = rng.normal((6, 3))
    masked = mask_logits(logits, np.array([0, 1, 2]))
    p = softmax_columns(masked)
    assert np.all(p[3:, :] == 0.0)
    loss, grad = cross_entropy(masked, np.array([0, 2, 1]))
    assert np.isfinite(loss)
    assert np.all(grad[3:, :] == 0.0)


def test_grad_penalty_unit_linear_critic():
    w = Rng(17).normal((1, 6))
    w /= np.linalg.norm(w)
    d = Mlp([DenseLayer(w, np.zeros((1, 1)), "identity")])
    penalty, grads, _ = grad_penalty_at(d, Rng(18).normal((6, 9)))
    assert abs(penalty) < 1e-20
    assert all(np.max(np.abs(dW)) < 1e-12 and np.max(np.abs(db)) < 1e-12 for dW, db in grads)


def test_grad_penalty_constant_critic():
    d = Mlp([DenseLayer(np.zeros((1, 4)), np.zeros((1, 1)), "identity")])
    penalty, grads, _ = grad_penalty_at(d, Rng(19).normal((4, 7)))
    assert penalty == 1.0
    assert all(np.all(dW == 0) and np.all(db == 0) for dW, db in grads)


def test_grad_penalty_input_gradient_matches_fd():
    rng = Rng(20)
    d = build_mlp(rng, [5, 7, 6, 1], ["tanh", "tanh", "identity"])
    h = rng.normal((5, 4))
    _, _, input_grads = grad_penalty_at(d, h)
    worst = 0.0
    for _ in range(40):
        idx = (int(rng.integers(0, 5)), int(rng.integers(0, 4)))

        def critic_sum():
            y, _ = forward(d, h)
            return float(np.sum(y))

        fd = central_diff(critic_sum, h, idx)
        worst = max(worst, rel_err(input_grads[idx], fd))
    assert worst < 1e-4


def test_grad_penalty_param_grads_match_fd():
    rng = Rng(21)
    d = build_mlp(rng, [4, 6, 5, 1], ["tanh", "tanh", "identity"])
    h_hat = rng.normal((4, 8))  # fixed interpolates

    def penalty():
        return grad_penalty_at(d, h_hat)[0]

    _, grads, _ = grad_penalty_at(d, h_hat)
    params = mlp_params(d)
    flat = [g for pair in grads for g in pair]
    worst = check_param_grads(penalty, params, flat, rng, n_probes=80, rtol=1e-3)
    assert worst < 1e-3


def test_grad_penalty_rejects_nonscalar_head():
    d = build_mlp(Rng(22), [3, 4, 2], ["relu", "identity"])
    with pytest.raises(ShapeError):
        grad_penalty_at(d, np.zeros((3, 2)))


def test_interpolates_lie_between():
    rng = Rng(23)
    a = np.zeros((3, 10))
    b = np.ones((3, 10))
    h = interpolate_pairs(a, b, rng)
    assert np.all(h >= 0.0) and np.all(h <= 1.0)
    # one eps per sample: constant within each column
    assert np.allclose(h.max(axis=0), h.min(axis=0))


def test_optimizer_zero_gradient_noop():
    p = Rng(24).normal((3, 3))
    before = p.copy()
    optimizer_step(SgdState(0.1), [p], [np.zeros_like(p)])
    assert np.array_equal(p, before)
    st = AdamState(0.1)
    optimizer_step(st, [p], [np.zeros_like(p)])
    assert np.array_equal(p, before)


def test_sgd_forced_arithmetic():
    p = Rng(25).normal((2, 2))
    optimizer_step(SgdState(1.0), [p], [p.copy()])
    assert np.array_equal(p, np.zeros((2, 2)))


def test_adam_quadratic_bowl_converges():
    p = Rng(26).normal((4, 1)) * 5.0
    start = np.linalg.norm(p)
    st = AdamState(lr=0.05)
    for _ in range(500):
        optimizer_step(st, [p], [p.copy()])  # grad of 0.5||p||^2
    assert np.linalg.norm(p) < start / 10.0


def test_optimizer_shape_mismatch():
    with pytest.raises(ShapeError):
        optimizer_step(SgdState(0.1), [np.zeros((2, 2))], [np.zeros((3, 2))])
