"""Tests of mtbridge.autodiff."""
import numpy as np
import pytest
from scipy.special import softmax

from mtbridge.autodiff import (
    IGNORE_INDEX,
    OptimState,
    Tape,
    Tensor,
    add,
    backward,
    conv2d,
    pixel_softmax_ce,
    poly_lr,
    relu,
    scale,
    sgd_step,
    tensor_sum,
)
from mtbridge.exceptions import ContractError, ShapeError
from mtbridge.segnet import ParamSet, SegNetConfig, forward, init_params


def _random_problem(seed):
    """Small random network, image, and label map (with ignored pixels)."""
    rng = np.random.default_rng(seed)
    config = SegNetConfig(
        channels=(3, 2), num_classes=2, in_channels=2, init_seed=seed
    )
    params = init_params(config)
    image = rng.normal(size=(2, 5, 5))
    label = rng.integers(0, 2, size=(5, 5))
    label[rng.random((5, 5)) < 0.2] = IGNORE_INDEX
    return params, image, label


def _loss_value(params, image, label):
    return pixel_softmax_ce(forward(params, image), label).item()


def _min_preactivation(params, image):
    weight, bias = params.tensors[:2]
    return np.abs(conv2d(image, weight, bias).data).min()


@pytest.mark.slow
def test_gradients_match_finite_differences():
    """Analytic gradients agree with central finite differences for 100
    random (network, input) pairs."""
    h = 1e-4
    n_checked = 0
    for seed in range(100):
        params, image, label = _random_problem(seed)
        if _min_preactivation(params, image) < 1e-3:
            continue  # too close to a ReLU kink for a finite difference
        with Tape():
            loss = pixel_softmax_ce(forward(params, image), label)
            backward(loss)
        analytic = np.concatenate([t.grad.ravel() for t in params.tensors])
        numeric = []
        for t in params.tensors:
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                plus = _loss_value(params, image, label)
                flat[i] = orig - h
                minus = _loss_value(params, image, label)
                flat[i] = orig
                numeric.append((plus - minus) / (2 * h))
        numeric = np.array(numeric)
        err = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12
        )
        assert err < 1e-4, "seed %d: relative error %g" % (seed, err)
        n_checked += 1
    assert n_checked >= 80


def test_conv2d_identity_kernel():
    x = np.arange(18.0).reshape(2, 3, 3)
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 2.0
    out = conv2d(Tensor(x), Tensor(w), Tensor([0.0, 1.0]))
    assert np.array_equal(out.data[0], x[0])
    assert np.array_equal(out.data[1], 2 * x[1] + 1)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((2, 4, 4)))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((4, 4))), Tensor(np.zeros((1, 1, 1, 1))), [0])


def test_relu_subgradient_at_zero():
    x = Tensor([-1.0, 0.0, 3.0], requires_grad=True)
    with Tape():
        backward(tensor_sum(relu(x)))
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_softmax_ce_uniform_logits():
    logits = Tensor(np.zeros((4, 3, 3)))
    label = np.zeros((3, 3), dtype=int)
    assert abs(pixel_softmax_ce(logits, label).item() - np.log(4)) < 1e-12


def test_softmax_ce_all_ignored():
    logits = Tensor(np.random.default_rng(0).normal(size=(3, 2, 2)), True)
    label = np.full((2, 2), IGNORE_INDEX)
    with Tape():
        loss = pixel_softmax_ce(logits, label)
        assert loss.item() == 0.0
        backward(loss)
    assert np.all(logits.grad == 0)


def test_softmax_ce_weights():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(3, 2, 2)))
    label = np.array([[0, 1], [2, 0]])
    plain = pixel_softmax_ce(logits, label).item()
    doubled = pixel_softmax_ce(logits, label, weights=np.full((2, 2), 2.0))
    assert abs(doubled.item() - 2 * plain) < 1e-12
    zero = pixel_softmax_ce(logits, label, weights=np.zeros((2, 2)))
    assert zero.item() == 0.0


def test_softmax_ce_label_errors():
    logits = Tensor(np.zeros((3, 2, 2)))
    with pytest.raises(IndexError):
        pixel_softmax_ce(logits, np.array([[0, 3], [0, 0]]))
    with pytest.raises(IndexError):
        pixel_softmax_ce(logits, np.array([[0, -1], [0, 0]]))
    with pytest.raises(ShapeError):
        pixel_softmax_ce(logits, np.zeros((3, 3), dtype=int))
    with pytest.raises(ShapeError):
        pixel_softmax_ce(
            logits, np.zeros((2, 2), dtype=int), weights=np.ones(4)
        )


def test_backward_contract():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(y)  # not a scalar
    with pytest.raises(ContractError):
        backward(tensor_sum(x))  # no active tape


def test_backward_clears_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = tensor_sum(add(x, x))
        assert len(tape) == 2
        backward(loss)
        assert len(tape) == 0
    assert x.grad.tolist() == [2.0, 2.0, 2.0]


def test_gradients_accumulate():
    x = Tensor(np.ones(2), requires_grad=True)
    for _ in range(2):
        with Tape():
            backward(tensor_sum(scale(x, 3.0)))
    assert x.grad.tolist() == [6.0, 6.0]
    x.zero_grad()
    assert x.grad is None


def test_no_recording_without_gradients():
    x = Tensor(np.ones(2))
    with Tape() as tape:
        tensor_sum(x)
    assert len(tape) == 0


def test_tensor_operators():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 4.0])
    assert (a + b).data.tolist() == [4.0, 6.0]
    assert (2 * a).data.tolist() == [2.0, 4.0]
    with pytest.raises(ShapeError):
        add(a, Tensor([1.0]))
    with pytest.raises(ContractError):
        a.item()


def test_sgd_step_momentum_and_weight_decay():
    params = ParamSet([('w', np.array([1.0, -2.0]))])
    state = OptimState(momentum=0.5, weight_decay=0.1)
    params['w'].grad = np.array([1.0, 1.0])
    sgd_step(params, state, lr=0.1)
    # v = g + wd * w = [1.1, 0.8]
    assert np.allclose(params['w'].data, [1.0 - 0.11, -2.0 - 0.08])
    assert params['w'].grad is None
    params['w'].grad = np.array([0.0, 0.0])
    w = params['w'].data.copy()
    sgd_step(params, state, lr=0.1)
    v = 0.5 * np.array([1.1, 0.8]) + 0.1 * w
    assert np.allclose(params['w'].data, w - 0.1 * v)


def test_sgd_step_contract():
    params = ParamSet([('w', np.ones(2))])
    with pytest.raises(ContractError) as exc_info:
        sgd_step(params, OptimState(), lr=0.1)
    assert 'missing for w' in str(exc_info.value)
    frozen = ParamSet([('w', np.ones(2))], trainable=False)
    with pytest.raises(ContractError):
        sgd_step(frozen, OptimState(), lr=0.1)


def test_poly_lr():
    state = OptimState(base_lr=2.5e-4, power=0.9, max_iter=100)
    assert poly_lr(0, state) == 2.5e-4
    assert abs(poly_lr(50, state) - 2.5e-4 * 0.5 ** 0.9) < 1e-18
    assert poly_lr(100, state) == 0.0
    lrs = [poly_lr(i, state) for i in range(101)]
    assert all(a >= b for (a, b) in zip(lrs, lrs[1:]))


def _loop_conv2d(x, w, b):
    """Cross-correlation with zero padding, one output element at a time"""
    c_out, c_in, k, _ = w.shape
    _, h, width = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((c_out, h, width))
    for o in range(c_out):
        for i in range(h):
            for j in range(width):
                total = b[o]
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            total += w[o, c, u, v] * xp[c, i + u, j + v]
                out[o, i, j] = total
    return out


@pytest.mark.parametrize(
    'c_in, c_out, h, w, k',
    [(2, 3, 5, 7, 3), (1, 2, 4, 3, 5), (3, 1, 7, 7, 1), (2, 2, 3, 6, 3)],
)
def test_conv2d_against_loop_reference(c_in, c_out, h, w, k):
    rng = np.random.default_rng(h * w + k)
    x = rng.normal(size=(c_in, h, w))
    kernel = rng.normal(size=(c_out, c_in, k, k))
    bias = rng.normal(size=c_out)
    out = conv2d(Tensor(x), Tensor(kernel), Tensor(bias))
    assert out.shape == (c_out, h, w)
    assert np.max(np.abs(out.data - _loop_conv2d(x, kernel, bias))) < 1e-12


def test_softmax_ce_gradient():
    """The gradient is (softmax - onehot) / N_valid, zero on ignored pixels"""
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
    label = rng.integers(0, 4, size=(3, 5))
    label[0, :2] = IGNORE_INDEX
    label[2, 4] = IGNORE_INDEX
    valid = label != IGNORE_INDEX
    with Tape():
        backward(pixel_softmax_ce(logits, label))
    expected = softmax(logits.data, axis=0)
    onehot = np.zeros_like(expected)
    for (i, j) in zip(*np.nonzero(valid)):
        onehot[label[i, j], i, j] = 1.0
    expected = (expected - onehot) * valid / valid.sum()
    assert np.allclose(logits.grad, expected, rtol=0, atol=1e-13)
    assert np.all(logits.grad[:, ~valid] == 0)


def test_tape_linearity():
    """grad(a*f + b*g) == a*grad(f) + b*grad(g)"""
    params, image, label = _random_problem(7)
    other = np.where(label == IGNORE_INDEX, IGNORE_INDEX, 1 - label)
    a, b = 0.7, -1.3

    def grads(loss_fn):
        params.zero_grad()
        with Tape():
            backward(loss_fn())
        return [t.grad.copy() for t in params.tensors]

    def f():
        return pixel_softmax_ce(forward(params, image), label)

    def g():
        return pixel_softmax_ce(forward(params, image), other)

    grad_f = grads(f)
    grad_g = grads(g)
    combined = grads(lambda: add(scale(f(), a), scale(g(), b)))
    for (gf, gg, gc) in zip(grad_f, grad_g, combined):
        assert np.allclose(gc, a * gf + b * gg, rtol=0, atol=1e-12)


def test_backward_unused_parameter():
    """A parameter that the loss does not depend on gets a zero gradient"""
    params = ParamSet([('p', np.ones((2, 2))), ('q', np.arange(3.0))])
    with Tape():
        tensor_sum(params['p'])
        loss = tensor_sum(params['q'])
        backward(loss)
    assert np.array_equal(params['p'].grad, np.zeros((2, 2)))
    assert params['q'].grad.tolist() == [1.0, 1.0, 1.0]
    # a zero gradient leaves the unused parameter in place
    sgd_step(params, OptimState(momentum=0.0, weight_decay=0.0), lr=0.1)
    assert np.array_equal(params['p'].data, np.ones((2, 2)))
    assert np.allclose(params['q'].data, [-0.1, 0.9, 1.9])
