r"""Construction of domain bridges by class-wise mixing.

A *bridge* is a composite training sample: the pixels of some randomly
selected classes are cut from a labeled source scene and pasted into an
unlabeled target scene, whose remaining pixels carry the teacher's
pseudo-labels. Given a binary class mask $M$,

.. math::

    x_{\mathrm{brg}} = M \odot x_s + (1 - M) \odot x_t, \qquad
    y_{\mathrm{brg}} = M \odot y_s + (1 - M) \odot \hat{y}_t.

:func:`classmix` pastes the source classes at their original position.
:func:`cgmix` first generates `n_aug` geometrically transformed versions of the
source scene (:func:`generate_candidates`) and pastes the one whose
surroundings in the target scene resemble the surroundings of the pasted
classes in the source scene most closely. The surroundings are described by
a :class:`ContextVector`, the class histogram over a thin ring around the
class mask (:func:`neighbor_mask`).
"""
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import affine_transform, correlate

from .autodiff import IGNORE_INDEX
from .exceptions import ConfigError, ShapeError


__all__ = [
    'ClassMask',
    'NeighborMask',
    'ContextVector',
    'Bridge',
    'GeometricTransform',
    'Candidate',
    'select_classes',
    'class_mask',
    'classmix',
    'neighbor_mask',
    'context_vector',
    'cosine_similarity',
    'generate_candidates',
    'cgmix',
    'dump_bridge_triptych',
]


@dataclass
class ClassMask:
    """Binary mask of the pixels that belong to a set of classes.

    Attributes:
        mask (numpy.ndarray): Boolean array of shape ``(H, W)``
        selected_classes (frozenset): The selected class indices
    """

    mask: np.ndarray
    selected_classes: frozenset = frozenset()


@dataclass
class NeighborMask:
    """Binary ring of pixels around (and disjoint from) a :class:`ClassMask`.

    Attributes:
        mask (numpy.ndarray): Boolean array of shape ``(H, W)``
        source_mask (ClassMask): The class mask the ring surrounds
    """

    mask: np.ndarray
    source_mask: ClassMask


@dataclass
class ContextVector:
    """Class histogram of the pixels under a :class:`NeighborMask`.

    Attributes:
        hist (numpy.ndarray): Array of length `C` with non-negative entries
            that sum to one, or all zero for an empty ring
    """

    hist: np.ndarray

    @property
    def is_zero(self):
        """bool: Whether the histogram is empty"""
        return not np.any(self.hist)


@dataclass
class Bridge:
    """A bridge sample mixing source classes into a target scene.

    Attributes:
        image (numpy.ndarray): Image of shape ``(3, H, W)``
        label (numpy.ndarray): Integer label map of shape ``(H, W)``
        mask (ClassMask): Mask of the pixels taken from the (transformed)
            source scene
        provenance (str): 'classmix' or 'cgmix'
        chosen_candidate (None or int): For 'cgmix', the index of the pasted
            candidate
        similarities (None or numpy.ndarray): For 'cgmix', the cosine
            similarity of every candidate
    """

    image: np.ndarray
    label: np.ndarray
    mask: ClassMask
    provenance: str = 'classmix'
    chosen_candidate: int = None
    similarities: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class GeometricTransform:
    """A horizontal flip, followed by scaling about the image center,
    followed by an integer translation.

    Attributes:
        flip (bool): Whether to mirror horizontally
        dy (int): Vertical translation in pixels (positive is down)
        dx (int): Horizontal translation in pixels (positive is right)
        scale (float): Scaling factor
    """

    flip: bool = False
    dy: int = 0
    dx: int = 0
    scale: float = 1.0

    @classmethod
    def sample(
        cls,
        rng,
        shape,
        max_shift=0.25,
        scale_range=(0.8, 1.25),
        flip_prob=0.5,
    ):
        """Draw a random transform for images of the given ``(H, W)`` shape.

        The flip is drawn first, then the vertical and the horizontal shift
        (uniform integers up to `max_shift` times the image size), then the
        scale (uniform in `scale_range`).
        """
        height, width = shape
        flip = bool(rng.random() < flip_prob)
        max_dy = int(max_shift * height)
        max_dx = int(max_shift * width)
        dy = int(rng.integers(-max_dy, max_dy + 1))
        dx = int(rng.integers(-max_dx, max_dx + 1))
        scale = float(rng.uniform(scale_range[0], scale_range[1]))
        return cls(flip=flip, dy=dy, dx=dx, scale=scale)

    @property
    def is_identity(self):
        """bool: Whether the transform leaves every pixel in place"""
        return (
            not self.flip and self.dy == 0 and self.dx == 0 and self.scale == 1
        )

    def _matrix_offset(self, shape):
        height, width = shape
        cy = (height - 1) / 2.0
        cx = (width - 1) / 2.0
        s = self.scale
        # output pixel o samples input pixel matrix @ o + offset
        if self.flip:
            matrix = [1.0 / s, -1.0 / s]
            offset = [cy - (cy + self.dy) / s, cx + (cx + self.dx) / s]
        else:
            matrix = [1.0 / s, 1.0 / s]
            offset = [cy - (cy + self.dy) / s, cx - (cx + self.dx) / s]
        return np.array(matrix), np.array(offset)

    def apply_label(self, label, ignore_index=IGNORE_INDEX):
        """Transform a label map; pixels outside the frame are ignored."""
        label = np.asarray(label)
        if self.is_identity:
            return label.copy()
        matrix, offset = self._matrix_offset(label.shape)
        return affine_transform(
            label,
            matrix,
            offset=offset,
            order=0,
            mode='constant',
            cval=ignore_index,
        )

    def apply_image(self, image):
        """Transform every channel of a ``(3, H, W)`` image; pixels outside
        the frame are zero."""
        image = np.asarray(image)
        if self.is_identity:
            return image.copy()
        matrix, offset = self._matrix_offset(image.shape[1:])
        return np.stack(
            [
                affine_transform(
                    channel,
                    matrix,
                    offset=offset,
                    order=0,
                    mode='constant',
                    cval=0.0,
                )
                for channel in image
            ]
        )


Candidate = namedtuple('Candidate', ['image', 'label', 'mask', 'transform'])
Candidate.__doc__ = """A geometrically transformed source scene.

Attributes:
    image (numpy.ndarray): The transformed image
    label (numpy.ndarray): The transformed label map (ignore outside frame)
    mask (ClassMask): The selected classes in the transformed label map
    transform (GeometricTransform): The applied transform
"""


def _check_pair(x, y, name):
    if x.ndim != 3 or x.shape[1:] != y.shape:
        raise ShapeError(
            "%s image of shape %s and label map of shape %s do not match"
            % (name, x.shape, y.shape)
        )


def select_classes(label, rng, ignore_index=IGNORE_INDEX):
    """Select half of the classes present in `label`, uniformly at random.

    If `P` classes are present, ``ceil(P / 2)`` of them are selected.

    Returns:
        frozenset: The selected class indices

    Example:

        >>> rng = numpy.random.default_rng(0)
        >>> label = numpy.array([[0, 1], [2, 3]])
        >>> selected = select_classes(label, rng)
        >>> len(selected), selected <= {0, 1, 2, 3}
        (2, True)
    """
    label = np.asarray(label)
    present = np.unique(label[label != ignore_index])
    n_select = (len(present) + 1) // 2
    if n_select == 0:
        return frozenset()
    chosen = rng.choice(present, size=n_select, replace=False)
    return frozenset(int(c) for c in chosen)


def class_mask(label, classes):
    """The :class:`ClassMask` of the pixels of `label` in `classes`."""
    classes = frozenset(int(c) for c in classes)
    label = np.asarray(label)
    if len(classes) == 0:
        mask = np.zeros(label.shape, dtype=bool)
    else:
        mask = np.isin(label, sorted(classes))
    return ClassMask(mask=mask, selected_classes=classes)


def _compose(x_src, y_src, x_t, y_t, cmask, **kwargs):
    mask = cmask.mask
    image = np.where(mask[None, :, :], x_src, x_t)
    label = np.where(mask, y_src, y_t).astype(np.int64)
    return Bridge(image=image, label=label, mask=cmask, **kwargs)


def classmix(x_s, y_s, x_t, y_t, classes):
    """Paste the `classes` of the source scene into the target scene.

    Args:
        x_s (numpy.ndarray): Source image ``(3, H, W)``
        y_s (numpy.ndarray): Source label map ``(H, W)``
        x_t (numpy.ndarray): Target image ``(3, H, W)``
        y_t (numpy.ndarray): Target pseudo-label map ``(H, W)``
        classes (set): The source classes to paste

    Returns:
        Bridge: The bridge sample

    Raises:
        ShapeError: If the shapes of the inputs disagree
    """
    x_s, y_s, x_t, y_t = (np.asarray(a) for a in (x_s, y_s, x_t, y_t))
    _check_pair(x_s, y_s, 'source')
    _check_pair(x_t, y_t, 'target')
    if x_s.shape != x_t.shape:
        raise ShapeError(
            "source shape %s does not match target shape %s"
            % (x_s.shape, x_t.shape)
        )
    return _compose(x_s, y_s, x_t, y_t, class_mask(y_s, classes))


def _gaussian_kernel(sigma, radius):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def neighbor_mask(mask, sigma=1.0, radius=2):
    """The ring of pixels around `mask`.

    The mask is blurred with a Gaussian kernel truncated at `radius` pixels;
    every pixel with a positive blurred value that is not itself in the mask
    belongs to the ring.

    Args:
        mask (ClassMask or numpy.ndarray): The class mask
        sigma (float): Standard deviation of the Gaussian kernel
        radius (int): Half-width of the kernel

    Returns:
        NeighborMask: The ring, disjoint from `mask`

    Raises:
        ConfigError: If `sigma` or `radius` are not positive

    Example:

        >>> center = numpy.zeros((5, 5), dtype=bool)
        >>> center[2, 2] = True
        >>> ring = neighbor_mask(center, radius=1)
        >>> int(ring.mask.sum()), bool(ring.mask[2, 2])
        (8, False)
    """
    if not isinstance(mask, ClassMask):
        mask = ClassMask(mask=np.asarray(mask, dtype=bool))
    if sigma <= 0:
        raise ConfigError("neighbor sigma must be > 0, not %r" % sigma)
    if int(radius) != radius or radius < 1:
        raise ConfigError("neighbor radius must be an integer >= 1")
    m = mask.mask
    if not np.any(m):
        return NeighborMask(
            mask=np.zeros(m.shape, dtype=bool), source_mask=mask
        )
    blurred = correlate(
        m.astype(np.float64),
        _gaussian_kernel(sigma, int(radius)),
        mode='constant',
        cval=0.0,
    )
    return NeighborMask(mask=(blurred > 0) & ~m, source_mask=mask)


def context_vector(label, mask, num_classes, ignore_index=IGNORE_INDEX):
    """L1-normalized class histogram of `label` under `mask`.

    Pixels with the ignore value are not counted. An empty mask yields the
    zero vector.

    Raises:
        IndexError: If `label` has a class index ``>= num_classes`` under the
            mask

    Example:

        >>> label = numpy.array([[0, 0, 2], [0, 0, 2]])
        >>> context_vector(label, numpy.ones((2, 3), bool), 4).hist.tolist()
        [0.6666666666666666, 0.0, 0.3333333333333333, 0.0]
    """
    if isinstance(mask, (NeighborMask, ClassMask)):
        mask = mask.mask
    label = np.asarray(label)
    values = label[np.asarray(mask, dtype=bool) & (label != ignore_index)]
    hist = np.zeros(num_classes)
    if values.size > 0:
        if values.min() < 0 or values.max() >= num_classes:
            raise IndexError(
                "label contains class indices outside [0, %d)" % num_classes
            )
        counts = np.bincount(values.astype(np.int64), minlength=num_classes)
        hist = counts / counts.sum()
    return ContextVector(hist=hist)


def cosine_similarity(a, b):
    """Cosine similarity of two context vectors; 0 if either is zero."""
    a = a.hist if isinstance(a, ContextVector) else np.asarray(a)
    b = b.hist if isinstance(b, ContextVector) else np.asarray(b)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        return 0.0
    return float(np.dot(a, b) / norm)


def generate_candidates(
    x_s,
    y_s,
    classes,
    n_aug,
    rng,
    include_identity=False,
    max_shift=0.25,
    scale_range=(0.8, 1.25),
    flip_prob=0.5,
):
    """Generate `n_aug` geometrically transformed versions of a source scene.

    Every candidate is a random :class:`GeometricTransform` applied
    identically to the image and the label map. Pixels that move in from
    outside the frame are labeled with the ignore value and are never part
    of the candidate's class mask.

    Args:
        x_s (numpy.ndarray): Source image
        y_s (numpy.ndarray): Source label map
        classes (set): The selected classes
        n_aug (int): Number of candidates
        rng (numpy.random.Generator): Random stream
        include_identity (bool): If True, the first candidate is the
            untransformed scene
        max_shift (float): Maximum translation as a fraction of the image size
        scale_range (tuple): Range of scaling factors
        flip_prob (float): Probability of a horizontal flip

    Returns:
        list[Candidate]: The candidates

    Raises:
        ConfigError: If `n_aug` < 1
    """
    if n_aug < 1:
        raise ConfigError("n_aug must be >= 1, not %r" % n_aug)
    x_s = np.asarray(x_s)
    y_s = np.asarray(y_s)
    transforms = []
    if include_identity:
        transforms.append(GeometricTransform())
    while len(transforms) < n_aug:
        transforms.append(
            GeometricTransform.sample(
                rng,
                y_s.shape,
                max_shift=max_shift,
                scale_range=scale_range,
                flip_prob=flip_prob,
            )
        )
    candidates = []
    for transform in transforms:
        label = transform.apply_label(y_s)
        candidates.append(
            Candidate(
                image=transform.apply_image(x_s),
                label=label,
                mask=class_mask(label, classes),
                transform=transform,
            )
        )
    return candidates


def cgmix(
    x_s,
    y_s,
    x_t,
    y_t,
    classes,
    n_aug,
    sigma,
    radius,
    rng,
    num_classes=None,
    include_identity=False,
):
    """Context-guided mixing of the source `classes` into the target scene.

    The context vector of the selected classes in the source scene is compared
    (by cosine similarity) with the context vector of the target
    pseudo-labels under the neighbor ring of every candidate from
    :func:`generate_candidates`. The candidate with the highest similarity
    (the lowest index among ties) is pasted into the target scene.

    If `classes` is empty, the bridge is the unmodified target scene with an
    empty mask.

    Args:
        x_s, y_s, x_t, y_t: As for :func:`classmix`
        classes (set): The source classes to paste
        n_aug (int): Number of candidates
        sigma (float): Standard deviation for :func:`neighbor_mask`
        radius (int): Kernel half-width for :func:`neighbor_mask`
        rng (numpy.random.Generator): Random stream for the candidates
        num_classes (None or int): Length of the context vectors. Defaults to
            one more than the largest class index in `y_s` and `y_t`.
        include_identity (bool): Passed to :func:`generate_candidates`

    Returns:
        Bridge: The bridge sample
    """
    x_s, y_s, x_t, y_t = (np.asarray(a) for a in (x_s, y_s, x_t, y_t))
    _check_pair(x_s, y_s, 'source')
    _check_pair(x_t, y_t, 'target')
    if x_s.shape != x_t.shape:
        raise ShapeError(
            "source shape %s does not match target shape %s"
            % (x_s.shape, x_t.shape)
        )
    classes = frozenset(int(c) for c in classes)
    if len(classes) == 0:
        return _compose(
            x_s, y_s, x_t, y_t, class_mask(y_s, classes), provenance='cgmix'
        )
    if num_classes is None:
        valid_s = y_s[y_s != IGNORE_INDEX]
        valid_t = y_t[y_t != IGNORE_INDEX]
        num_classes = 1 + int(
            max(valid_s.max(initial=0), valid_t.max(initial=0))
        )
    source_ring = neighbor_mask(class_mask(y_s, classes), sigma, radius)
    c_s = context_vector(y_s, source_ring, num_classes)
    candidates = generate_candidates(
        x_s, y_s, classes, n_aug, rng, include_identity=include_identity
    )
    similarities = np.zeros(len(candidates))
    for (i, candidate) in enumerate(candidates):
        ring = neighbor_mask(candidate.mask, sigma, radius)
        c_t = context_vector(y_t, ring, num_classes)
        similarities[i] = cosine_similarity(c_s, c_t)
    chosen = int(np.argmax(similarities))
    candidate = candidates[chosen]
    return _compose(
        candidate.image,
        candidate.label,
        x_t,
        y_t,
        candidate.mask,
        provenance='cgmix',
        chosen_candidate=chosen,
        similarities=similarities,
    )


def _gray(label, num_classes):
    label = np.asarray(label, dtype=np.int64)
    gray = np.where(
        label == IGNORE_INDEX,
        255,
        (label * 200) // max(num_classes - 1, 1),
    )
    return gray.astype(np.uint8)


def dump_bridge_triptych(filename, y_s, y_t, bridge, num_classes):
    """Write source, target and bridge label maps side by side as a binary
    PGM image.

    Classes are mapped to gray levels between 0 and 200; ignored pixels are
    white.
    """
    label = bridge.label if isinstance(bridge, Bridge) else bridge
    panels = [_gray(a, num_classes) for a in (y_s, y_t, label)]
    height = panels[0].shape[0]
    spacer = np.full((height, 2), 255, dtype=np.uint8)
    image = np.concatenate(
        [panels[0], spacer, panels[1], spacer, panels[2]], axis=1
    )
    with open(filename, 'wb') as out_fh:
        out_fh.write(b'P5\n%d %d\n255\n' % (image.shape[1], image.shape[0]))
        out_fh.write(image.tobytes())
