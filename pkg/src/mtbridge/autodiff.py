r"""Minimal reverse-mode automatic differentiation on dense float arrays.

A :class:`Tensor` wraps a :class:`numpy.ndarray` of 64-bit floats. Operations
on tensors (:func:`conv2d`, :func:`relu`, :func:`pixel_softmax_ce`,
:func:`add`, :func:`scale`, :func:`tensor_sum`) are recorded on the active
:class:`Tape` whenever at least one of their inputs requires a gradient. The
tape is activated as a context manager::

    with Tape():
        loss = pixel_softmax_ce(logits_from(params, image), label)
        backward(loss)

After :func:`backward`, the gradients are available in the :attr:`Tensor.grad`
attribute of every leaf tensor that requires a gradient. Gradients accumulate
additively until they are reset with :meth:`Tensor.zero_grad`.

Parameter updates are done with :func:`sgd_step`, using a learning rate from
the polynomial schedule in :func:`poly_lr`.
"""
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax

from .exceptions import ContractError, ShapeError


__all__ = [
    'IGNORE_INDEX',
    'Tensor',
    'Tape',
    'OptimState',
    'conv2d',
    'relu',
    'pixel_softmax_ce',
    'add',
    'scale',
    'tensor_sum',
    'backward',
    'sgd_step',
    'poly_lr',
]

IGNORE_INDEX = 255
"""Label value for pixels that do not contribute to losses or metrics."""

_TAPES = threading.local()


class Tensor:
    """Dense array of 64-bit floats with an optional gradient.

    Args:
        data (numpy.ndarray): The tensor values. Converted to a (copied)
            float64 array.
        requires_grad (bool): Whether :func:`backward` should compute a
            gradient for this tensor.

    Attributes:
        data (numpy.ndarray): The tensor values
        grad (None or numpy.ndarray): Accumulated gradient, of the same shape
            as :attr:`data`
        requires_grad (bool): Whether the tensor participates in
            differentiation
    """

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None  # (tape, index) if produced by a recorded op

    @property
    def shape(self):
        """tuple: Shape of :attr:`data`"""
        return self.data.shape

    @property
    def size(self):
        """int: Number of elements in :attr:`data`"""
        return self.data.size

    def item(self):
        """Value of a single-element tensor, as a float."""
        if self.data.size != 1:
            raise ContractError(
                "item() requires a single-element tensor, not shape %s"
                % (self.shape,)
            )
        return float(self.data.reshape(()))

    def zero_grad(self):
        """Discard the accumulated gradient."""
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, factor):
        return scale(self, factor)

    __rmul__ = __mul__

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (
            self.shape,
            self.requires_grad,
        )


class _Node:
    __slots__ = ('inputs', 'output', 'backward_rule')

    def __init__(self, inputs, output, backward_rule):
        self.inputs = inputs
        self.output = output
        self.backward_rule = backward_rule


class Tape:
    """Recording of differentiable operations, in order of execution.

    A tape is active inside a ``with`` block. Tapes are thread-local: each
    thread records onto its own innermost active tape. Every recorded node
    holds the input tensors, the output tensor, and a rule that maps the
    gradient of the output onto gradients of the inputs. Since nodes are only
    ever appended, the inputs of a node always appear earlier on the tape.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_TAPES, 'stack', None)
        if stack is None:
            stack = _TAPES.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, inputs, output, backward_rule):
        """Append an operation producing `output` from `inputs`."""
        output._node = (self, len(self.nodes))
        self.nodes.append(_Node(tuple(inputs), output, backward_rule))

    def clear(self):
        """Remove all nodes, detaching their outputs from the tape."""
        for node in self.nodes:
            node.output._node = None
        self.nodes = []


def _active_tape():
    stack = getattr(_TAPES, 'stack', None)
    if stack:
        return stack[-1]
    return None


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, inputs, backward_rule):
    """Wrap `data` as the output of an op, recording it if required."""
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(inputs, out, backward_rule)
        return out
    return Tensor(data)


def conv2d(input, kernel, bias):
    """Same-padded, stride-1 cross-correlation of a single image.

    Args:
        input (Tensor): Image of shape ``(C_in, H, W)``
        kernel (Tensor): Kernel of shape ``(C_out, C_in, k, k)`` with odd `k`
        bias (Tensor): Bias of shape ``(C_out,)``

    Returns:
        Tensor: Output of shape ``(C_out, H, W)``

    Raises:
        ShapeError: If the shapes are incompatible

    Example:

        >>> x = Tensor(numpy.arange(4.0).reshape(1, 2, 2))
        >>> identity = Tensor(numpy.ones((1, 1, 1, 1)))
        >>> conv2d(x, identity, Tensor([0.5])).data
        array([[[0.5, 1.5],
                [2.5, 3.5]]])
    """
    input = _as_tensor(input)
    kernel = _as_tensor(kernel)
    bias = _as_tensor(bias)
    x, w, b = input.data, kernel.data, bias.data
    if x.ndim != 3:
        raise ShapeError(
            "conv2d input must have shape (C, H, W), not %s" % (x.shape,)
        )
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 != 1:
        raise ShapeError(
            "conv2d kernel must have shape (C_out, C_in, k, k) with odd k, "
            "not %s" % (w.shape,)
        )
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            "conv2d kernel expects %d input channels, image has %d"
            % (w.shape[1], x.shape[0])
        )
    if b.shape != (w.shape[0],):
        raise ShapeError(
            "conv2d bias must have shape (%d,), not %s" % (w.shape[0], b.shape)
        )
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # C_in,H,W,k,k
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))
    out += b[:, None, None]

    def conv2d_backward(g):
        # gradient w.r.t. input: full correlation with the flipped kernel
        gp = np.pad(g, ((0, 0), (p, p), (p, p)))
        g_windows = sliding_window_view(gp, (k, k), axis=(1, 2))
        w_flip = w[:, :, ::-1, ::-1]
        dx = np.tensordot(w_flip, g_windows, axes=([0, 2, 3], [0, 3, 4]))
        dw = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        db = g.sum(axis=(1, 2))
        return dx, dw, db

    return _result(out, (input, kernel, bias), conv2d_backward)


def relu(input):
    """Elementwise ``max(0, x)``, with a subgradient of 0 at ``x = 0``.

    Example:

        >>> relu(Tensor([-1.0, 0.0, 2.0])).data
        array([0., 0., 2.])
    """
    input = _as_tensor(input)
    active = input.data > 0
    out = np.where(active, input.data, 0.0)

    def relu_backward(g):
        return (g * active,)

    return _result(out, (input,), relu_backward)


def pixel_softmax_ce(logits, target, weights=None, ignore_index=IGNORE_INDEX):
    r"""Pixel-wise softmax cross-entropy, averaged over non-ignored pixels.

    .. math::

        L = \frac{1}{N} \sum_{p} w_p \left(-\log \mathrm{softmax}(z_p)_{y_p}
        \right)

    where the sum runs over the $N$ pixels whose label is not `ignore_index`.

    Args:
        logits (Tensor): Logits of shape ``(C, H, W)``
        target (numpy.ndarray): Integer label map of shape ``(H, W)``, with
            values in ``[0, C)`` or equal to `ignore_index`
        weights (None or numpy.ndarray): Per-pixel weights of shape ``(H, W)``.
            Defaults to 1 everywhere.
        ignore_index (int): Label value of pixels that are skipped

    Returns:
        Tensor: Scalar loss. If every pixel is ignored, the loss is zero.

    Raises:
        ShapeError: If `target` or `weights` do not match the spatial shape
            of `logits`
        IndexError: If `target` contains a class index ``>= C`` (or a
            negative one) that is not `ignore_index`

    Example:

        >>> loss = pixel_softmax_ce(
        ...     Tensor(numpy.zeros((7, 2, 2))), numpy.zeros((2, 2), dtype=int)
        ... )
        >>> print("%.4f" % loss.item())
        1.9459
    """
    logits = _as_tensor(logits)
    z = logits.data
    if z.ndim != 3:
        raise ShapeError(
            "logits must have shape (C, H, W), not %s" % (z.shape,)
        )
    n_classes = z.shape[0]
    target = np.asarray(target)
    if target.shape != z.shape[1:]:
        raise ShapeError(
            "target shape %s does not match logits shape %s"
            % (target.shape, z.shape)
        )
    valid = target != ignore_index
    if np.any(valid):
        bad = target[valid]
        if bad.min() < 0 or bad.max() >= n_classes:
            raise IndexError(
                "target contains class index %d outside [0, %d)"
                % (bad.max() if bad.max() >= n_classes else bad.min(),
                   n_classes)
            )
    if weights is None:
        w = valid.astype(np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != target.shape:
            raise ShapeError(
                "weights shape %s does not match target shape %s"
                % (weights.shape, target.shape)
            )
        w = np.where(valid, weights, 0.0)
    n_valid = int(np.count_nonzero(valid))
    safe_target = np.where(valid, target, 0).astype(np.intp)
    log_p = log_softmax(z, axis=0)
    if n_valid == 0:
        loss = 0.0
    else:
        nll = -np.take_along_axis(log_p, safe_target[None], axis=0)[0]
        loss = float(np.sum(w * nll) / n_valid)

    def pixel_softmax_ce_backward(g):
        if n_valid == 0:
            return (np.zeros_like(z),)
        d = np.exp(log_p)
        np.put_along_axis(
            d,
            safe_target[None],
            np.take_along_axis(d, safe_target[None], axis=0) - 1.0,
            axis=0,
        )
        return (g * d * (w / n_valid)[None],)

    return _result(np.array(loss), (logits,), pixel_softmax_ce_backward)


def add(a, b):
    """Elementwise sum of two tensors of identical shape."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("cannot add shapes %s and %s" % (a.shape, b.shape))

    def add_backward(g):
        return g, g

    return _result(a.data + b.data, (a, b), add_backward)


def scale(a, factor):
    """Multiply a tensor by a constant float `factor`."""
    a = _as_tensor(a)
    factor = float(factor)

    def scale_backward(g):
        return (factor * g,)

    return _result(factor * a.data, (a,), scale_backward)


def tensor_sum(a):
    """Sum of all elements, as a scalar tensor."""
    a = _as_tensor(a)
    shape = a.shape

    def sum_backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.array(a.data.sum()), (a,), sum_backward)


def backward(loss):
    """Back-propagate from a scalar `loss` recorded on the active tape.

    Gradients are accumulated into the :attr:`~Tensor.grad` attribute of
    every leaf tensor with ``requires_grad=True`` that `loss` depends on.
    Leaves that were used on the same tape before `loss` was recorded, but
    that `loss` does not depend on, receive a zero gradient.
    Afterwards, the tape that recorded `loss` is cleared.

    Raises:
        ContractError: If `loss` is not a scalar, or if it was not recorded
            on a tape.
    """
    if loss.size != 1:
        raise ContractError(
            "backward requires a scalar loss, not shape %s" % (loss.shape,)
        )
    if loss._node is None:
        raise ContractError(
            "backward requires a loss that was recorded on an active Tape"
        )
    tape, i_loss = loss._node
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: i_loss + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue  # node does not contribute to loss
        input_grads = node.backward_rule(g)
        for inp, ig in zip(node.inputs, input_grads):
            if not inp.requires_grad:
                continue
            if inp._node is None:  # leaf
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=np.float64)
                else:
                    inp.grad = inp.grad + ig
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
    # leaves on the tape that do not reach `loss` get a zero gradient
    for node in tape.nodes[: i_loss + 1]:
        for inp in node.inputs:
            if inp.requires_grad and inp._node is None and inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
    tape.clear()


@dataclass
class OptimState:
    """State of the SGD optimizer with momentum and weight decay.

    Attributes:
        base_lr (float): Learning rate at iteration 0
        momentum (float): Momentum coefficient in [0, 1]
        weight_decay (float): L2 weight decay coefficient
        power (float): Exponent of the polynomial learning-rate decay
        max_iter (int): Iteration at which the learning rate reaches zero
        momentum_buffers (dict): Map of parameter names to velocity arrays,
            filled on the first :func:`sgd_step`
    """

    base_lr: float = 2.5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    max_iter: int = 120000
    momentum_buffers: dict = field(default_factory=dict)


def sgd_step(params, state, lr):
    """Update `params` in place by one step of SGD with momentum.

    For every parameter $\\theta$ with gradient $g$, the velocity is updated
    as $v \\leftarrow m v + (g + \\mathrm{wd}\\,\\theta)$, followed by
    $\\theta \\leftarrow \\theta - \\mathrm{lr}\\, v$. Gradients are reset
    afterwards.

    Args:
        params (mtbridge.segnet.ParamSet): Trainable parameters with populated
            gradients
        state (OptimState): Optimizer state (momentum buffers are updated in
            place)
        lr (float): The learning rate for this step

    Returns:
        mtbridge.segnet.ParamSet: The updated `params`

    Raises:
        ContractError: If `params` is not trainable, or if any parameter is
            missing its gradient
    """
    if not params.trainable:
        raise ContractError(
            "sgd_step cannot update a non-trainable ParamSet (teacher "
            "parameters change only through EMA updates)"
        )
    missing = [name for (name, t) in params if t.grad is None]
    if len(missing) > 0:
        raise ContractError(
            "sgd_step requires gradients for all parameters; missing for %s"
            % ", ".join(missing)
        )
    for (name, t) in params:
        d = t.grad + state.weight_decay * t.data
        v = state.momentum_buffers.get(name)
        if v is None:
            v = d
        else:
            v = state.momentum * v + d
        state.momentum_buffers[name] = v
        t.data = t.data - lr * v
        t.grad = None
    return params


def poly_lr(iteration, state):
    """Polynomial learning rate schedule.

    Example:

        >>> state = OptimState(base_lr=1.0, power=1.0, max_iter=10)
        >>> poly_lr(0, state), poly_lr(5, state), poly_lr(12, state)
        (1.0, 0.5, 0.0)
    """
    if iteration >= state.max_iter:
        return 0.0
    frac = 1.0 - iteration / state.max_iter
    return state.base_lr * frac ** state.power
