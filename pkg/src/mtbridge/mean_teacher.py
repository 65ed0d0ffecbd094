r"""Student/teacher pair, training losses, and the EMA teacher update.

The student parameters $\theta$ are trained by gradient descent. The teacher
parameters $\theta'$ are never trained directly: they follow the student as
an exponential moving average,

.. math::

    \theta' \leftarrow \alpha \theta' + (1 - \alpha) \theta,

and the teacher generates the pseudo-labels for the unlabeled target scenes.
"""
from collections import namedtuple

import numpy as np

from .autodiff import pixel_softmax_ce
from .exceptions import ConfigError, ContractError
from .segnet import clone_params, forward, predict


__all__ = [
    'TeacherStudent',
    'PseudoLabel',
    'supervised_loss',
    'unsupervised_loss',
    'bridging_loss',
    'pseudo_label',
    'confidence_weights',
    'ema_update',
]


PseudoLabel = namedtuple('PseudoLabel', ['label', 'confidence'])
PseudoLabel.__doc__ = """Teacher prediction for an unlabeled scene.

Attributes:
    label (numpy.ndarray): Per-pixel argmax of the teacher softmax (ties are
        broken in favor of the lowest class index)
    confidence (numpy.ndarray): Per-pixel maximum softmax probability
"""


class TeacherStudent:
    """A student model and its EMA teacher.

    Args:
        student (ParamSet): Trainable student parameters
        teacher (None or ParamSet): Non-trainable teacher parameters. If None,
            the teacher starts as a copy of the student.
        alpha (float): EMA coefficient for :func:`ema_update`

    Attributes:
        teacher_updates (int): Number of EMA updates applied to the teacher

    Raises:
        ContractError: If the parameter sets are not congruent, or the
            teacher is trainable
        ConfigError: If `alpha` is not in [0, 1]
    """

    def __init__(self, student, teacher=None, alpha=0.999):
        if teacher is None:
            teacher = clone_params(student, trainable=False)
        if teacher.trainable:
            raise ContractError("the teacher ParamSet must not be trainable")
        if not student.is_congruent(teacher):
            raise ContractError(
                "student and teacher parameters are not congruent"
            )
        if not 0 <= alpha <= 1:
            raise ConfigError("alpha must be in [0, 1], not %r" % alpha)
        self.student = student
        self.teacher = teacher
        self.alpha = float(alpha)
        self.teacher_updates = 0

    def __repr__(self):
        return "TeacherStudent(%r, alpha=%s, teacher_updates=%d)" % (
            self.student,
            self.alpha,
            self.teacher_updates,
        )


def supervised_loss(student, x_s, y_s):
    """Cross-entropy of the student on a labeled source scene."""
    return pixel_softmax_ce(forward(student, x_s), y_s)


def unsupervised_loss(student, x_t, pseudo, weights=None):
    """Cross-entropy of the student on a target scene against the teacher's
    :class:`PseudoLabel`."""
    label = pseudo.label if isinstance(pseudo, PseudoLabel) else pseudo
    return pixel_softmax_ce(forward(student, x_t), label, weights=weights)


def bridging_loss(student, bridge, weights=None):
    """Cross-entropy of the student on a :class:`.Bridge`.

    Args:
        student (ParamSet): The student parameters
        bridge (Bridge): The bridge sample
        weights (None or numpy.ndarray): Optional per-pixel weights, see
            :func:`confidence_weights`
    """
    return pixel_softmax_ce(
        forward(student, bridge.image), bridge.label, weights=weights
    )


def pseudo_label(teacher, x_t):
    """The teacher's :class:`PseudoLabel` for the target scene `x_t`.

    Example:

        >>> from mtbridge.segnet import SegNetConfig, init_params
        >>> config = SegNetConfig(channels=(3,), num_classes=3)
        >>> teacher = init_params(config)
        >>> for (_, t) in teacher:
        ...     t.data[:] = 0
        >>> pseudo = pseudo_label(teacher, numpy.ones((3, 2, 2)))
        >>> pseudo.label.tolist()
        [[0, 0], [0, 0]]
        >>> print("%.4f" % pseudo.confidence[0, 0])
        0.3333
    """
    label, probs = predict(teacher, x_t)
    return PseudoLabel(label=label, confidence=probs.max(axis=0))


def confidence_weights(mask, confidence, threshold=0.968):
    """Per-pixel weights for the bridging loss.

    Pixels pasted from the source scene (where `mask` is set) have weight 1.
    All other pixels carry pseudo-labels and are weighted by the fraction of
    target pixels whose confidence exceeds `threshold`.

    Args:
        mask (ClassMask or numpy.ndarray): The bridge mask
        confidence (numpy.ndarray): The :attr:`PseudoLabel.confidence`
        threshold (float): Confidence threshold
    """
    mask = np.asarray(getattr(mask, 'mask', mask), dtype=bool)
    confidence = np.asarray(confidence)
    fraction = float(np.mean(confidence > threshold))
    return np.where(mask, 1.0, fraction)


def ema_update(pair, alpha=None):
    """Move the teacher towards the student, in place.

    Every teacher element is updated as ``alpha * teacher + (1 - alpha) *
    student``.

    Args:
        pair (TeacherStudent): The student/teacher pair
        alpha (None or float): EMA coefficient. Defaults to ``pair.alpha``.

    Returns:
        ParamSet: The updated teacher

    Raises:
        ContractError: If the parameter sets are not congruent
    """
    if alpha is None:
        alpha = pair.alpha
    if not pair.student.is_congruent(pair.teacher):
        raise ContractError(
            "cannot apply the EMA update to incongruent parameter sets"
        )
    for ((_, t), (_, s)) in zip(pair.teacher, pair.student):
        t.data = alpha * t.data + (1.0 - alpha) * s.data
    pair.teacher_updates += 1
    return pair.teacher
