r"""Teacher updates with per-element EMA coefficients from Fisher information.

After the teacher has been trained on a target domain, the (diagonal) Fisher
information

.. math::

    \mathcal{F} = \frac{1}{N} \sum_{n=1}^{N}
        \left(\nabla_{\theta'} L_{\mathrm{ce}}(f_{\theta'}(x_n), \hat{y}_n)
        \right)^2

over the scenes $x_n$ of that domain, with the teacher's own pseudo-labels
$\hat{y}_n$, measures how important every teacher parameter is for that
domain. The Fisher information is normalized to [0, 1] and clipped to
$[\lambda_1, \lambda_2]$, yielding per-element EMA coefficients
$\mathcal{F}'$ (:func:`normalize_clip`). Subsequent teacher updates

.. math::

    \theta' \leftarrow \mathcal{F}' \odot \theta'
        + (1 - \mathcal{F}') \odot \theta

(:func:`af_ema_update`) then change the important parameters more slowly,
which reduces forgetting of the domains visited earlier.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward, pixel_softmax_ce
from .exceptions import ConfigError, ContractError, FileFormatError, ShapeError
from .fileformat import (
    HEADER_OFFSET,
    check_payload_size,
    read_container,
    write_container,
)
from .mean_teacher import ema_update
from .parallelization import serial_map
from .segnet import ParamSet, forward


__all__ = [
    'FisherCoefficients',
    'FisherEMA',
    'compute_fisher',
    'normalize_clip',
    'af_ema_update',
]

FISHER_MAGIC = b'ODBF'

NORM_SCOPES = ('tensor', 'global')


def _sample_sq_grad(image, names, arrays):
    """Squared gradient of the teacher loss for a single scene."""
    params = ParamSet(zip(names, [a.copy() for a in arrays]), trainable=True)
    with Tape():
        logits = forward(params, image)
        label = np.argmax(logits.data, axis=0)
        loss = pixel_softmax_ce(logits, label)
        backward(loss)
    return [t.grad ** 2 for t in params.tensors]


def _subsample(num_images, max_samples):
    if max_samples is None or max_samples >= num_images:
        return np.arange(num_images)
    return np.round(np.linspace(0, num_images - 1, max_samples)).astype(int)


def compute_fisher(teacher, dataset, max_samples=None, parallel_map=None):
    """Diagonal Fisher information of the `teacher` on a target domain.

    The gradient for every scene is taken with respect to a temporary copy of
    the teacher parameters, using the teacher's own (regenerated) argmax
    pseudo-labels. The teacher itself is not modified.

    Args:
        teacher (ParamSet): The teacher parameters
        dataset (Dataset or numpy.ndarray): The scenes, as a
            :class:`.Dataset` (whose labels are not accessed) or an array of
            shape ``(N, 3, H, W)``
        max_samples (None or int): If given, use at most this many scenes,
            evenly spaced over the dataset
        parallel_map (None or callable): Function to evaluate the per-scene
            squared gradients (see :mod:`mtbridge.parallelization`)

    Returns:
        list[numpy.ndarray]: The Fisher information for every parameter
        tensor, in :class:`.ParamSet` order

    Raises:
        ContractError: If there are no scenes
    """
    images = getattr(dataset, 'images', dataset)
    num_images = len(images)
    if num_images == 0:
        raise ContractError(
            "cannot compute the Fisher information of zero samples"
        )
    if parallel_map is None:
        parallel_map = serial_map
    indices = _subsample(num_images, max_samples)
    sq_grads = parallel_map(
        _sample_sq_grad,
        [images[i] for i in indices],
        task_args=(teacher.names, teacher.arrays),
    )
    fisher = [np.zeros(shape) for shape in teacher.shapes]
    for sample_grads in sq_grads:
        for (f, g) in zip(fisher, sample_grads):
            f += g
    return [f / len(indices) for f in fisher]


def _check_lambdas(lambda1, lambda2):
    if not 0 <= lambda1 <= lambda2 <= 1:
        raise ConfigError(
            "lambdas must satisfy 0 <= lambda1 <= lambda2 <= 1, not "
            "lambda1=%r, lambda2=%r" % (lambda1, lambda2)
        )


def _min_max_clip(values, lo, hi, lambda1, lambda2):
    if hi == lo:
        return np.full(values.shape, float(lambda1))
    return np.clip((values - lo) / (hi - lo), lambda1, lambda2)


def normalize_clip(raw, lambda1=0.99, lambda2=0.9999, scope='tensor'):
    """Turn Fisher information into per-element EMA coefficients.

    The values are min-max normalized to [0, 1] and then clipped to
    ``[lambda1, lambda2]``. A scope in which all values are equal maps to
    `lambda1`.

    Args:
        raw (list[numpy.ndarray]): Fisher information per parameter tensor
        lambda1 (float): Lower clipping bound
        lambda2 (float): Upper clipping bound
        scope (str): 'tensor' to normalize every parameter tensor
            separately, 'global' to normalize over all parameters

    Returns:
        list[numpy.ndarray]: The adjusted coefficients

    Raises:
        ConfigError: If the lambdas are invalid or `scope` is unknown

    Example:

        >>> adjusted = normalize_clip([numpy.array([0.0, 0.5, 2.0])])
        >>> adjusted[0].tolist()
        [0.99, 0.99, 0.9999]
    """
    _check_lambdas(lambda1, lambda2)
    if scope not in NORM_SCOPES:
        raise ConfigError(
            "normalization scope must be one of %s, not %r"
            % (NORM_SCOPES, scope)
        )
    raw = [np.asarray(f, dtype=np.float64) for f in raw]
    if scope == 'tensor':
        return [
            _min_max_clip(f, f.min(), f.max(), lambda1, lambda2) for f in raw
        ]
    lo = min(f.min() for f in raw)
    hi = max(f.max() for f in raw)
    return [_min_max_clip(f, lo, hi, lambda1, lambda2) for f in raw]


def af_ema_update(pair, adjusted):
    """Move the teacher towards the student with per-element coefficients.

    Every teacher element is updated as ``f * teacher + (1 - f) * student``,
    where `f` is the corresponding element of `adjusted`. With constant
    coefficients, this is identical to :func:`.ema_update`.

    Args:
        pair (TeacherStudent): The student/teacher pair
        adjusted (list[numpy.ndarray] or FisherCoefficients): The
            coefficients, in :class:`.ParamSet` order

    Returns:
        ParamSet: The updated teacher

    Raises:
        ShapeError: If the coefficients do not mirror the parameters
    """
    if isinstance(adjusted, FisherCoefficients):
        adjusted = adjusted.adjusted
    shapes = [np.shape(f) for f in adjusted]
    if shapes != pair.teacher.shapes:
        raise ShapeError(
            "EMA coefficients do not match the teacher parameter shapes"
        )
    if not pair.student.is_congruent(pair.teacher):
        raise ShapeError("student and teacher parameters are not congruent")
    for (f, (_, t), (_, s)) in zip(adjusted, pair.teacher, pair.student):
        t.data = f * t.data + (1.0 - f) * s.data
    pair.teacher_updates += 1
    return pair.teacher


@dataclass
class FisherCoefficients:
    """Fisher information of the teacher on one target domain.

    Attributes:
        raw (list[numpy.ndarray]): The Fisher information, non-negative
        adjusted (list[numpy.ndarray]): The EMA coefficients in
            ``[lambda1, lambda2]``
        computed_on (str): Id of the target domain
        lambda1 (float): Lower clipping bound
        lambda2 (float): Upper clipping bound
        names (list[str]): Names of the parameter tensors
        scope (str): The normalization scope
        num_samples (int): Number of scenes the Fisher information is
            averaged over
    """

    raw: list
    adjusted: list
    computed_on: str
    lambda1: float
    lambda2: float
    names: list = field(default_factory=list)
    scope: str = 'tensor'
    num_samples: int = 0

    def dump(self, filename):
        """Write the coefficients to `filename`.

        The file has the magic bytes ``ODBF``, a JSON header, and the raw
        little-endian ``f64`` values of :attr:`raw` followed by those of
        :attr:`adjusted`.
        """
        header = dict(
            computed_on=self.computed_on,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            names=list(self.names),
            shapes=[list(f.shape) for f in self.raw],
            scope=self.scope,
            num_samples=int(self.num_samples),
        )
        payload = b''.join(
            np.ascontiguousarray(f, dtype='<f8').tobytes()
            for f in list(self.raw) + list(self.adjusted)
        )
        write_container(filename, FISHER_MAGIC, header, payload)

    @classmethod
    def load(cls, filename):
        """Read coefficients written by :meth:`dump`.

        Raises:
            FileFormatError: If the file is corrupt or truncated
        """
        header, payload, offset = read_container(
            filename,
            FISHER_MAGIC,
            required_keys=('computed_on', 'lambda1', 'lambda2', 'shapes'),
        )
        try:
            shapes = [tuple(int(n) for n in s) for s in header['shapes']]
        except (TypeError, ValueError) as exc_info:
            raise FileFormatError(
                "invalid Fisher header: %s" % exc_info, HEADER_OFFSET
            )
        sizes = [int(np.prod(s)) for s in shapes]
        check_payload_size(payload, 16 * sum(sizes), offset)
        values = np.frombuffer(payload, dtype='<f8')
        arrays = []
        pos = 0
        for (shape, size) in zip(shapes + shapes, sizes + sizes):
            arrays.append(values[pos : pos + size].reshape(shape).copy())
            pos += size
        n = len(shapes)
        return cls(
            raw=arrays[:n],
            adjusted=arrays[n:],
            computed_on=header['computed_on'],
            lambda1=header['lambda1'],
            lambda2=header['lambda2'],
            names=header.get('names', []),
            scope=header.get('scope', 'tensor'),
            num_samples=header.get('num_samples', 0),
        )


class FisherEMA:
    """Teacher update rule switching from plain EMA to Fisher-weighted EMA.

    Before the first call to :meth:`refresh`, :meth:`update` applies
    :func:`.ema_update`. Afterwards, it applies :func:`af_ema_update` with the
    most recent coefficients.

    Args:
        lambda1 (float): Lower clipping bound for the coefficients
        lambda2 (float): Upper clipping bound for the coefficients
        scope (str): Normalization scope, see :func:`normalize_clip`
        max_samples (None or int): Cap on the number of scenes for the Fisher
            information
        parallel_map (None or callable): Passed to :func:`compute_fisher`

    Attributes:
        coefficients (None or FisherCoefficients): The active coefficients
    """

    def __init__(
        self,
        lambda1=0.99,
        lambda2=0.9999,
        scope='tensor',
        max_samples=256,
        parallel_map=None,
    ):
        _check_lambdas(lambda1, lambda2)
        if scope not in NORM_SCOPES:
            raise ConfigError(
                "normalization scope must be one of %s, not %r"
                % (NORM_SCOPES, scope)
            )
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.scope = scope
        self.max_samples = max_samples
        self.parallel_map = parallel_map
        self.coefficients = None

    def refresh(self, teacher, dataset, domain_id):
        """Recompute the coefficients on the scenes of `dataset`.

        Returns:
            dict: A ``fisher_computed`` event
        """
        logger = logging.getLogger('mtbridge')
        num_images = len(getattr(dataset, 'images', dataset))
        num_samples = len(_subsample(num_images, self.max_samples))
        if num_samples < num_images:
            logger.warning(
                "Fisher information for %s is limited to %d of %d samples",
                domain_id,
                num_samples,
                num_images,
            )
        raw = compute_fisher(
            teacher,
            dataset,
            max_samples=self.max_samples,
            parallel_map=self.parallel_map,
        )
        adjusted = normalize_clip(raw, self.lambda1, self.lambda2, self.scope)
        self.coefficients = FisherCoefficients(
            raw=raw,
            adjusted=adjusted,
            computed_on=str(domain_id),
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            names=teacher.names,
            scope=self.scope,
            num_samples=num_samples,
        )
        flat = np.concatenate([f.ravel() for f in adjusted])
        logger.info(
            "Fisher information on %s from %d samples: mean coefficient %.6f",
            domain_id,
            num_samples,
            float(flat.mean()),
        )
        return {
            'event': 'fisher_computed',
            'domain': str(domain_id),
            'num_samples': num_samples,
            'dataset_size': num_images,
            'raw_max': float(max(f.max() for f in raw)),
            'adjusted_mean': float(flat.mean()),
            'adjusted_min': float(flat.min()),
            'adjusted_max': float(flat.max()),
        }

    def update(self, pair):
        """Update the teacher of `pair` in place and return it."""
        if self.coefficients is None:
            return ema_update(pair)
        return af_ema_update(pair, self.coefficients)
