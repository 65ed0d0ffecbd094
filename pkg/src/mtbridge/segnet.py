"""A tiny fully-convolutional segmentation network.

The network is a stack of same-padded convolutions with ReLU activations in
between, and no activation after the last layer, which has one output channel
per class. All parameters live in a :class:`ParamSet`, an ordered collection of
named :class:`.Tensor` objects. The same :class:`ParamSet` structure is used
for the student and the teacher model, and for per-parameter quantities like
the Fisher information.

Example:

    >>> config = SegNetConfig(channels=(4, 3), num_classes=3, init_seed=1)
    >>> params = init_params(config)
    >>> params.names
    ['conv0.weight', 'conv0.bias', 'conv1.weight', 'conv1.bias']
    >>> params.total_len == 4 * 3 * 9 + 4 + 3 * 4 * 9 + 3
    True
    >>> forward(params, numpy.zeros((3, 8, 8))).shape
    (3, 8, 8)
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import softmax

from .autodiff import Tensor, conv2d, relu
from .exceptions import (
    ConfigError,
    ContractError,
    DataError,
    FileFormatError,
    ShapeError,
)
from .fileformat import (
    HEADER_OFFSET,
    check_payload_size,
    read_container,
    write_container,
)


__all__ = [
    'ParamSet',
    'SegNetConfig',
    'init_params',
    'forward',
    'clone_params',
    'predict',
    'save_checkpoint',
    'load_checkpoint',
]

CHECKPOINT_MAGIC = b'ODBC'


class ParamSet:
    """Ordered collection of named parameter tensors.

    Iterating over a :class:`ParamSet` yields ``(name, tensor)`` tuples, in a
    fixed order.

    Args:
        entries (list): List of tuples ``(name, tensor)``, where `tensor` is a
            :class:`.Tensor` or an array
        trainable (bool): Whether the parameters may be updated by
            :func:`.sgd_step` (and thus record gradients)

    Raises:
        ContractError: If the names are not unique
    """

    def __init__(self, entries, trainable=True):
        self.trainable = bool(trainable)
        self._entries = []
        for (name, tensor) in entries:
            if not isinstance(tensor, Tensor):
                tensor = Tensor(tensor)
            tensor.requires_grad = self.trainable
            self._entries.append((str(name), tensor))
        self._index = {name: i for (i, (name, _)) in enumerate(self._entries)}
        if len(self._index) != len(self._entries):
            raise ContractError("parameter names must be unique")

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, name):
        return self._entries[self._index[name]][1]

    def __repr__(self):
        return "ParamSet(%d tensors, total_len=%d, trainable=%s)" % (
            len(self),
            self.total_len,
            self.trainable,
        )

    @property
    def names(self):
        """list[str]: Names of the parameters, in order"""
        return [name for (name, _) in self._entries]

    @property
    def tensors(self):
        """list[Tensor]: The parameter tensors, in order"""
        return [tensor for (_, tensor) in self._entries]

    @property
    def arrays(self):
        """list[numpy.ndarray]: The parameter values, in order"""
        return [tensor.data for (_, tensor) in self._entries]

    @property
    def shapes(self):
        """list[tuple]: The parameter shapes, in order"""
        return [tensor.shape for (_, tensor) in self._entries]

    @property
    def total_len(self):
        """int: Total number of parameter elements"""
        return sum(tensor.size for (_, tensor) in self._entries)

    def is_congruent(self, other):
        """Whether `other` has the same names and shapes, in the same order."""
        return self.names == other.names and self.shapes == other.shapes

    def zero_grad(self):
        """Discard the accumulated gradients of all parameters."""
        for (_, tensor) in self._entries:
            tensor.zero_grad()

    def flat(self):
        """All parameter values, concatenated into a flat array."""
        return np.concatenate([a.ravel() for a in self.arrays])


@dataclass
class SegNetConfig:
    """Architecture of the segmentation network.

    Attributes:
        channels (tuple[int]): Output widths of all convolution layers. The
            last width must equal `num_classes`.
        num_classes (int): Number of classes `C`
        kernel (int): Odd kernel size `k`
        init_seed (int): Seed for the weight initialization
        init_scale (float): Factor for the Kaiming standard deviation
        in_channels (int): Number of image channels
    """

    channels: tuple = (16, 32, 32, 7)
    num_classes: int = 7
    kernel: int = 3
    init_seed: int = 0
    init_scale: float = 1.0
    in_channels: int = 3

    def validate(self):
        """Raise :exc:`.ConfigError` for an invalid architecture."""
        if len(self.channels) == 0:
            raise ConfigError("channels must not be empty")
        if self.channels[-1] != self.num_classes:
            raise ConfigError(
                "the last layer width %d must equal num_classes=%d"
                % (self.channels[-1], self.num_classes)
            )
        if any(c < 1 for c in self.channels):
            raise ConfigError("all layer widths must be >= 1")
        if self.kernel < 1 or self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd, not %r" % self.kernel)
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0")

    def to_dict(self):
        """Dict of all configuration values (JSON-serializable)."""
        data = asdict(self)
        data['channels'] = list(self.channels)
        return data

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict`."""
        data = dict(data)
        if 'channels' in data:
            data['channels'] = tuple(int(c) for c in data['channels'])
        try:
            config = cls(**data)
        except TypeError as exc_info:
            raise ConfigError("invalid model configuration: %s" % exc_info)
        return config


def init_params(config, seed=None):
    """Initialize the parameters of the network described by `config`.

    Weights are drawn from a Gaussian with standard deviation
    ``init_scale * sqrt(2 / (C_in * k**2))``; biases are zero.

    Args:
        config (SegNetConfig): The architecture
        seed (None or int): If given, an additional seed that is combined with
            ``config.init_seed``

    Returns:
        ParamSet: A trainable parameter set
    """
    config.validate()
    if seed is None:
        rng = np.random.default_rng(config.init_seed)
    else:
        rng = np.random.default_rng([config.init_seed, seed])
    k = config.kernel
    entries = []
    c_in = config.in_channels
    for (i, c_out) in enumerate(config.channels):
        std = config.init_scale * np.sqrt(2.0 / (c_in * k * k))
        weight = rng.normal(0.0, 1.0, size=(c_out, c_in, k, k)) * std
        entries.append(('conv%d.weight' % i, weight))
        entries.append(('conv%d.bias' % i, np.zeros(c_out)))
        c_in = c_out
    return ParamSet(entries)


def _layers(params):
    tensors = params.tensors
    if len(tensors) % 2 != 0:
        raise ShapeError("ParamSet does not consist of (weight, bias) pairs")
    return [(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]


def forward(params, image):
    """Compute the logits of the network for a single image.

    Args:
        params (ParamSet): The network parameters
        image (Tensor or numpy.ndarray): Image of shape ``(C_in, H, W)``

    Returns:
        Tensor: Logits of shape ``(C, H, W)``

    Raises:
        ShapeError: If the image does not match the first layer
    """
    if not isinstance(image, Tensor):
        image = Tensor(image)
    layers = _layers(params)
    expected = layers[0][0].shape[1]
    if image.data.ndim != 3 or image.shape[0] != expected:
        raise ShapeError(
            "image of shape %s does not match network input (%d, H, W)"
            % (image.shape, expected)
        )
    x = image
    for (i, (weight, bias)) in enumerate(layers):
        x = conv2d(x, weight, bias)
        if i < len(layers) - 1:
            x = relu(x)
    return x


def clone_params(src, trainable=None):
    """Deep copy of a :class:`ParamSet`, without gradients.

    Args:
        src (ParamSet): The parameters to copy
        trainable (None or bool): Whether the copy is trainable. Defaults to
            ``src.trainable``.
    """
    if trainable is None:
        trainable = src.trainable
    return ParamSet(
        [(name, tensor.data.copy()) for (name, tensor) in src],
        trainable=trainable,
    )


def predict(params, image):
    """Per-pixel argmax prediction and softmax probabilities.

    Ties are broken in favor of the lowest class index.

    Returns:
        tuple: ``(label, probs)``: an integer label map of shape ``(H, W)`` and
        the softmax probabilities of shape ``(C, H, W)``
    """
    logits = forward(params, image).data
    probs = softmax(logits, axis=0)
    return np.argmax(logits, axis=0), probs


def save_checkpoint(filename, params, config, iteration=0):
    """Write a checkpoint of `params` to `filename`.

    The file has the magic bytes ``ODBC``, a JSON header with the model
    configuration, the iteration, and the names and shapes of the parameters,
    followed by the raw little-endian ``f64`` parameter values in
    :class:`ParamSet` order.
    """
    header = dict(
        config=config.to_dict(),
        iteration=int(iteration),
        params=[[name, list(t.shape)] for (name, t) in params],
    )
    payload = b''.join(
        np.ascontiguousarray(t.data, dtype='<f8').tobytes()
        for (_, t) in params
    )
    write_container(filename, CHECKPOINT_MAGIC, header, payload)


def load_checkpoint(filename, config=None, trainable=False, max_iter=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Args:
        filename (str): Name of the checkpoint file
        config (None or SegNetConfig): If given, the configuration the
            checkpoint must match
        trainable (bool): Whether the loaded :class:`ParamSet` is trainable
        max_iter (None or int): If given, log a warning if the checkpoint was
            written after more than `max_iter` iterations

    Returns:
        tuple: ``(params, config, iteration)``

    Raises:
        FileFormatError: If the file is corrupt or truncated
        DataError: If the checkpoint does not match `config`
    """
    logger = logging.getLogger('mtbridge')
    header, payload, offset = read_container(
        filename,
        CHECKPOINT_MAGIC,
        required_keys=('config', 'iteration', 'params'),
    )
    try:
        file_config = SegNetConfig.from_dict(header['config'])
        iteration = int(header['iteration'])
        shapes = [
            (str(name), tuple(shape)) for (name, shape) in header['params']
        ]
    except (ConfigError, TypeError, ValueError) as exc_info:
        raise FileFormatError(
            "invalid checkpoint header: %s" % exc_info, HEADER_OFFSET
        )
    sizes = [int(np.prod(shape)) for (_, shape) in shapes]
    check_payload_size(payload, 8 * sum(sizes), offset)
    values = np.frombuffer(payload, dtype='<f8')
    entries = []
    pos = 0
    for ((name, shape), size) in zip(shapes, sizes):
        chunk = values[pos : pos + size]
        entries.append((name, chunk.reshape(shape).copy()))
        pos += size
    params = ParamSet(entries, trainable=trainable)
    reference = init_params(file_config)
    if not params.is_congruent(reference):
        raise FileFormatError(
            "checkpoint parameters do not match the stored configuration",
            HEADER_OFFSET,
        )
    if config is not None and config.to_dict() != file_config.to_dict():
        raise DataError(
            "checkpoint %s was written for a different model configuration"
            % filename
        )
    if max_iter is not None and iteration > max_iter:
        logger.warning(
            "Checkpoint %s was written after %d iterations, more than "
            "max_iter=%d",
            filename,
            iteration,
            max_iter,
        )
    logger.debug("Loaded checkpoint %s (iteration %d)", filename, iteration)
    return params, file_config, iteration
