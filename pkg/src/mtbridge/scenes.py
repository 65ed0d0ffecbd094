"""Procedurally generated multi-domain segmentation scenes.

Every domain is described by a :class:`DomainProfile`: a palette of mean class
colors, color jitter and pixel noise, and a :class:`ClassLayout` per class
that controls where the class appears in the image. All domains share the
same label space. A scene is generated by first drawing its label map
(horizontal background bands, then blobs and boxes on top), and then
rendering the image from the label map through the palette.

:func:`build_benchmark` generates a labeled source domain and `K` target
domains, each with a train and a validation split. The target splits carry
labels as well, but only for evaluation: :attr:`Dataset.label_reads` counts
every access to the labels, which allows to audit that training never looks
at them.

Example:

    >>> source, targets = default_profiles(num_classes=7, num_targets=2)
    >>> [p.name for p in targets]
    ['city_a', 'city_b']
    >>> sample = generate_sample(source, seed=1, height=32, width=32)
    >>> sample.image.shape, sample.label.shape
    ((3, 32, 32), (32, 32))
"""
import logging
import os
from collections import OrderedDict, namedtuple
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, DataError, FileFormatError
from .fileformat import check_payload_size, read_container, write_container
from .parallelization import serial_map


__all__ = [
    'CLASS_NAMES',
    'ClassLayout',
    'DomainProfile',
    'Sample',
    'Dataset',
    'GeneratorConfig',
    'Benchmark',
    'class_names',
    'default_profiles',
    'generate_sample',
    'build_benchmark',
    'save_dataset',
    'load_dataset',
]

CLASS_NAMES = (
    'flat',
    'construction',
    'object',
    'nature',
    'sky',
    'human',
    'vehicle',
)
"""Names of the classes in the default 7-class label space."""

DATASET_MAGIC = b'ODBD'

_SPLITS = ('train', 'val')


def class_names(num_classes):
    """Names for `num_classes` classes.

    Example:

        >>> class_names(3)
        ['class_0', 'class_1', 'class_2']
        >>> class_names(7)[:2]
        ['flat', 'construction']
    """
    if num_classes == len(CLASS_NAMES):
        return list(CLASS_NAMES)
    return ['class_%d' % i for i in range(num_classes)]


class ClassLayout:
    """Spatial placement of one class in a scene.

    Args:
        kind (str): One of 'band' (horizontal background band), 'blob'
            (ellipses), or 'box' (rectangles)
        center (float): Mean vertical position, as a fraction of the image
            height (0 is the top row)
        spread (float): Standard deviation of the vertical position
        extent (float): For bands, the relative thickness of the band
        count (tuple[int]): Inclusive range for the number of blobs/boxes
        size (tuple[float]): Range for the blob/box half-height, as a fraction
            of the image height

    Raises:
        ConfigError: If any value is out of range
    """

    kinds = ('band', 'blob', 'box')

    def __init__(
        self,
        kind,
        center,
        spread=0.05,
        extent=0.2,
        count=(1, 2),
        size=(0.04, 0.1),
    ):
        if kind not in self.kinds:
            raise ConfigError(
                "layout kind must be one of %s, not %r" % (self.kinds, kind)
            )
        for (name, val) in [('center', center), ('extent', extent)]:
            if not 0 <= val <= 1:
                raise ConfigError(
                    "layout %s must be in [0, 1], not %r" % (name, val)
                )
        if spread < 0:
            raise ConfigError("layout spread must be >= 0, not %r" % spread)
        count = tuple(int(n) for n in count)
        if len(count) != 2 or count[0] < 0 or count[0] > count[1]:
            raise ConfigError("invalid layout count range %r" % (count,))
        size = tuple(float(s) for s in size)
        if len(size) != 2 or not 0 < size[0] <= size[1] <= 1:
            raise ConfigError("invalid layout size range %r" % (size,))
        self.kind = kind
        self.center = float(center)
        self.spread = float(spread)
        self.extent = float(extent)
        self.count = count
        self.size = size

    def shifted(self, delta):
        """Copy of the layout with `center` shifted by `delta` (clipped)."""
        return ClassLayout(
            kind=self.kind,
            center=float(np.clip(self.center + delta, 0.0, 1.0)),
            spread=self.spread,
            extent=self.extent,
            count=self.count,
            size=self.size,
        )

    def __repr__(self):
        return "ClassLayout(%r, center=%.2f, spread=%.2f)" % (
            self.kind,
            self.center,
            self.spread,
        )


class DomainProfile:
    """Generative recipe for one synthetic domain.

    Args:
        name (str): Identifier of the domain
        palette (numpy.ndarray): Array of shape ``(C, 3)`` of mean RGB colors
            in [0, 1] for every class. Values are rounded to single precision,
            so that rendered images are stored losslessly.
        layout (list[ClassLayout]): Placement of every class
        color_jitter (float or numpy.ndarray): Standard deviation of the
            per-image color offset for each class
        noise_sigma (float): Standard deviation of the per-pixel noise
        seed_offset (int): Offset mixed into every random seed

    Raises:
        ConfigError: If the palette and the layout are inconsistent, or any
            value is out of range
    """

    def __init__(
        self,
        name,
        palette,
        layout,
        color_jitter=0.03,
        noise_sigma=0.02,
        seed_offset=0,
    ):
        palette = np.asarray(palette, dtype=np.float32).astype(np.float64)
        if palette.ndim != 2 or palette.shape[1] != 3:
            raise ConfigError(
                "palette must have shape (C, 3), not %s" % (palette.shape,)
            )
        if np.any(palette < 0) or np.any(palette > 1):
            raise ConfigError("palette colors must be in [0, 1]")
        n_classes = palette.shape[0]
        if len(layout) != n_classes:
            raise ConfigError(
                "layout has %d entries for %d palette colors"
                % (len(layout), n_classes)
            )
        color_jitter = np.broadcast_to(
            np.asarray(color_jitter, dtype=np.float64), (n_classes,)
        ).copy()
        if np.any(color_jitter < 0):
            raise ConfigError("color_jitter must be >= 0")
        if noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0, not %r" % noise_sigma)
        self.name = str(name)
        self.palette = palette
        self.layout = list(layout)
        self.color_jitter = color_jitter
        self.noise_sigma = float(noise_sigma)
        self.seed_offset = int(seed_offset)

    @property
    def num_classes(self):
        """int: Number of classes `C`"""
        return self.palette.shape[0]

    def __repr__(self):
        return "DomainProfile(%r, num_classes=%d)" % (
            self.name,
            self.num_classes,
        )


Sample = namedtuple('Sample', ['image', 'label'])
Sample.__doc__ = """A single scene.

Attributes:
    image (numpy.ndarray): float image of shape ``(3, H, W)`` in [0, 1]
    label (numpy.ndarray): integer label map of shape ``(H, W)``
"""


def _default_7class_profiles():
    source = DomainProfile(
        'synth',
        palette=[
            [0.50, 0.25, 0.50],
            [0.27, 0.27, 0.27],
            [0.98, 0.67, 0.12],
            [0.42, 0.56, 0.14],
            [0.27, 0.51, 0.71],
            [0.86, 0.08, 0.24],
            [0.00, 0.00, 0.56],
        ],
        layout=[
            ClassLayout('band', center=0.85, extent=0.25),
            ClassLayout('band', center=0.45, extent=0.2),
            ClassLayout('box', center=0.55, count=(1, 3), size=(0.03, 0.06)),
            ClassLayout('blob', center=0.5, count=(1, 3), size=(0.08, 0.18)),
            ClassLayout('band', center=0.1, extent=0.15),
            ClassLayout('blob', center=0.7, count=(0, 3), size=(0.03, 0.06)),
            ClassLayout('box', center=0.75, count=(1, 3), size=(0.05, 0.1)),
        ],
        color_jitter=0.02,
        noise_sigma=0.01,
        seed_offset=0,
    )
    city_a = DomainProfile(
        'city_a',
        palette=[
            [0.45, 0.35, 0.45],
            [0.35, 0.33, 0.30],
            [0.80, 0.65, 0.30],
            [0.30, 0.45, 0.20],
            [0.55, 0.65, 0.75],
            [0.75, 0.25, 0.30],
            [0.15, 0.15, 0.45],
        ],
        layout=[
            ClassLayout('band', center=0.9, extent=0.2),
            ClassLayout('band', center=0.5, extent=0.25),
            ClassLayout('box', center=0.5, count=(2, 4), size=(0.03, 0.05)),
            ClassLayout('blob', center=0.4, count=(2, 4), size=(0.06, 0.14)),
            ClassLayout('band', center=0.2, extent=0.2),
            ClassLayout('blob', center=0.75, count=(1, 3), size=(0.03, 0.06)),
            ClassLayout('box', center=0.8, count=(1, 2), size=(0.05, 0.09)),
        ],
        color_jitter=0.04,
        noise_sigma=0.04,
        seed_offset=1,
    )
    city_b = DomainProfile(
        'city_b',
        palette=[
            [0.62, 0.52, 0.55],
            [0.55, 0.50, 0.42],
            [0.90, 0.78, 0.45],
            [0.55, 0.62, 0.35],
            [0.80, 0.78, 0.70],
            [0.88, 0.45, 0.40],
            [0.35, 0.35, 0.60],
        ],
        layout=[
            ClassLayout('band', center=0.8, extent=0.3),
            ClassLayout('band', center=0.4, extent=0.15),
            ClassLayout('box', center=0.6, count=(1, 2), size=(0.03, 0.06)),
            ClassLayout('blob', center=0.55, count=(0, 2), size=(0.08, 0.16)),
            ClassLayout('band', center=0.05, extent=0.25),
            ClassLayout('blob', center=0.65, count=(1, 4), size=(0.03, 0.06)),
            ClassLayout('box', center=0.65, count=(2, 4), size=(0.04, 0.08)),
        ],
        color_jitter=0.05,
        noise_sigma=0.05,
        seed_offset=2,
    )
    city_c = DomainProfile(
        'city_c',
        palette=[
            [0.40, 0.30, 0.55],
            [0.25, 0.30, 0.40],
            [0.85, 0.60, 0.25],
            [0.25, 0.50, 0.35],
            [0.40, 0.55, 0.85],
            [0.80, 0.15, 0.40],
            [0.05, 0.10, 0.65],
        ],
        layout=[
            ClassLayout('band', center=0.88, extent=0.22),
            ClassLayout('band', center=0.55, extent=0.2),
            ClassLayout('box', center=0.45, count=(1, 3), size=(0.03, 0.06)),
            ClassLayout('band', center=0.35, extent=0.1),
            ClassLayout('band', center=0.15, extent=0.18),
            ClassLayout('blob', center=0.75, count=(0, 2), size=(0.03, 0.06)),
            ClassLayout('box', center=0.7, count=(1, 3), size=(0.05, 0.1)),
        ],
        color_jitter=0.03,
        noise_sigma=0.03,
        seed_offset=3,
    )
    return source, [city_a, city_b, city_c]


def _generic_profiles(num_classes):
    rng = np.random.default_rng([num_classes, 0])
    palette = rng.uniform(0.05, 0.95, size=(num_classes, 3))
    layout = [ClassLayout('band', center=0.85, extent=0.3)]
    if num_classes > 1:
        layout.append(ClassLayout('band', center=0.15, extent=0.3))
    for center in np.linspace(0.3, 0.8, max(num_classes - 2, 0)):
        layout.append(
            ClassLayout('blob', center=center, count=(1, 3), size=(0.04, 0.1))
        )
    source = DomainProfile('synth', palette, layout, seed_offset=0)
    targets = []
    for k in range(3):
        targets.append(_perturbed_profile(source, 'city_%s' % 'abc'[k], k + 1))
    return source, targets


def _perturbed_profile(base, name, seed_offset):
    rng = np.random.default_rng([1000, seed_offset])
    tint = rng.uniform(0, 1, size=3)
    palette = np.clip(0.65 * base.palette + 0.35 * tint, 0, 1)
    layout = [
        layout.shifted(rng.uniform(-0.08, 0.08)) for layout in base.layout
    ]
    return DomainProfile(
        name,
        palette,
        layout,
        color_jitter=base.color_jitter + 0.01,
        noise_sigma=base.noise_sigma + 0.01,
        seed_offset=seed_offset,
    )


def default_profiles(num_classes=7, num_targets=2):
    """Return the default source profile and `num_targets` target profiles.

    For 7 classes, the source domain 'synth' has saturated colors, and the
    targets 'city_a', 'city_b', 'city_c' shift both the palette and the
    vertical layout of the classes. For other numbers of classes, or more than
    three targets, the additional profiles are derived procedurally.

    Raises:
        ConfigError: If ``num_classes < 2`` or ``num_targets < 1``
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2, not %r" % num_classes)
    if num_targets < 1:
        raise ConfigError(
            "at least one target domain is required, not %r" % num_targets
        )
    if num_classes == len(CLASS_NAMES):
        source, targets = _default_7class_profiles()
    else:
        source, targets = _generic_profiles(num_classes)
    for k in range(len(targets), num_targets):
        targets.append(
            _perturbed_profile(targets[k % 3], 'city_%d' % (k + 1), k + 1)
        )
    return source, targets[:num_targets]


def _band_labels(profile, rng, height, width):
    bands = [
        (i, layout)
        for (i, layout) in enumerate(profile.layout)
        if layout.kind == 'band'
    ]
    if len(bands) == 0:
        return np.zeros((height, width), dtype=np.int64)
    classes = np.array([i for (i, _) in bands])
    centers = np.array(
        [rng.normal(layout.center, layout.spread) for (_, layout) in bands]
    )
    centers = np.clip(centers, 0.0, 1.0)
    extents = np.array([max(layout.extent, 1e-3) for (_, layout) in bands])
    # wavy boundaries: per-column vertical offset
    amplitude = rng.uniform(0.0, 0.04)
    freq = rng.uniform(0.5, 2.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    offset = amplitude * np.sin(2 * np.pi * freq * xs + phase)
    y = ys[:, None] + offset[None, :]  # H, W
    dist = np.abs(y[None] - centers[:, None, None]) / extents[:, None, None]
    return classes[np.argmin(dist, axis=0)]


def generate_sample(profile, seed, height=64, width=64):
    """Generate a single deterministic scene.

    Args:
        profile (DomainProfile): The domain recipe
        seed (int): Seed of the scene. The same `profile` and `seed` always
            yield a bit-identical :class:`Sample`.
        height (int): Image height
        width (int): Image width

    Returns:
        Sample: The rendered image and its label map

    Example:

        >>> source, _ = default_profiles()
        >>> a = generate_sample(source, seed=42, height=16, width=16)
        >>> b = generate_sample(source, seed=42, height=16, width=16)
        >>> bool(numpy.all(a.image == b.image))
        True
        >>> bool(numpy.all(a.label == b.label))
        True
    """
    rng = np.random.default_rng([profile.seed_offset, int(seed)])
    label = _band_labels(profile, rng, height, width)
    rows = np.arange(height)[:, None] + 0.5
    cols = np.arange(width)[None, :] + 0.5
    for (i, layout) in enumerate(profile.layout):
        if layout.kind == 'band':
            continue
        n = rng.integers(layout.count[0], layout.count[1] + 1)
        for _ in range(n):
            cy = np.clip(rng.normal(layout.center, layout.spread), 0, 1)
            cx = rng.uniform(0.0, 1.0)
            ry = rng.uniform(*layout.size) * height
            rx = ry * rng.uniform(0.6, 1.6)
            dy = (rows - cy * height) / ry
            dx = (cols - cx * width) / rx
            if layout.kind == 'blob':
                inside = dy ** 2 + dx ** 2 <= 1.0
            else:
                inside = (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)
            label = np.where(inside, i, label)
    offsets = rng.normal(0.0, 1.0, size=(profile.num_classes, 3))
    colors = profile.palette + offsets * profile.color_jitter[:, None]
    image = colors[label].transpose(2, 0, 1)
    noise = rng.normal(0.0, 1.0, size=image.shape) * profile.noise_sigma
    image = np.clip(image + noise, 0.0, 1.0)
    image = image.astype(np.float32).astype(np.float64)
    return Sample(image=image, label=label.astype(np.int64))


class Dataset:
    """Ordered collection of scenes from a single domain and split.

    Args:
        domain_id (str): Name of the domain
        split (str): 'train' or 'val'
        images (numpy.ndarray): Array of shape ``(N, 3, H, W)``
        labels (None or numpy.ndarray): Array of shape ``(N, H, W)``
        num_classes (int): Number of classes `C` of the label space

    Attributes:
        label_reads (int): Number of times any label was accessed through
            :meth:`label` (or :attr:`samples`)

    Raises:
        DataError: If the dataset is empty or the arrays are inconsistent
    """

    def __init__(self, domain_id, split, images, labels, num_classes):
        if split not in _SPLITS:
            raise DataError(
                "split must be one of %s, not %r" % (_SPLITS, split)
            )
        images = np.array(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3 or len(images) == 0:
            raise DataError(
                "dataset %s/%s must have images of shape (N>0, 3, H, W), "
                "not %s" % (domain_id, split, images.shape)
            )
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (images.shape[0],) + images.shape[2:]:
                raise DataError(
                    "labels of shape %s are incongruent with images of shape "
                    "%s" % (labels.shape, images.shape)
                )
            if labels.min() < 0 or labels.max() >= num_classes:
                raise DataError(
                    "labels of dataset %s/%s must be in [0, %d)"
                    % (domain_id, split, num_classes)
                )
            labels = labels.astype(np.uint8)
            labels.flags.writeable = False
        images.flags.writeable = False
        self.domain_id = str(domain_id)
        self.split = split
        self.num_classes = int(num_classes)
        self._images = images
        self._labels = labels
        self.label_reads = 0

    def __len__(self):
        return self._images.shape[0]

    def __repr__(self):
        return "Dataset(%r, %r, count=%d)" % (
            self.domain_id,
            self.split,
            len(self),
        )

    @property
    def height(self):
        """int: Image height"""
        return self._images.shape[2]

    @property
    def width(self):
        """int: Image width"""
        return self._images.shape[3]

    @property
    def has_labels(self):
        """bool: Whether the dataset carries labels"""
        return self._labels is not None

    @property
    def images(self):
        """numpy.ndarray: Read-only array of all images"""
        return self._images

    def image(self, i):
        """The image with index `i`, as a read-only array."""
        return self._images[i]

    def label(self, i):
        """The label map with index `i`.

        Every call increments :attr:`label_reads`.

        Raises:
            DataError: If the dataset has no labels
        """
        if self._labels is None:
            raise DataError(
                "dataset %s/%s has no labels" % (self.domain_id, self.split)
            )
        self.label_reads += 1
        return self._labels[i].astype(np.int64)

    def sample(self, i):
        """The :class:`Sample` with index `i` (reads its label)."""
        return Sample(image=self.image(i), label=self.label(i))

    @property
    def samples(self):
        """list[Sample]: All samples, in order (reads all labels)"""
        return [self.sample(i) for i in range(len(self))]


@dataclass
class GeneratorConfig:
    """Configuration of the synthetic benchmark.

    Attributes:
        num_classes (int): Number of classes `C`
        height (int): Image height
        width (int): Image width
        num_targets (int): Number of target domains `K`
        train_size (int): Number of scenes in every train split
        val_size (int): Number of scenes in every validation split
        seed (int): Base seed of the benchmark
    """

    num_classes: int = 7
    height: int = 64
    width: int = 64
    num_targets: int = 2
    train_size: int = 100
    val_size: int = 50
    seed: int = 0

    def validate(self):
        """Raise :exc:`.ConfigError` for invalid values."""
        if self.num_targets < 1:
            raise ConfigError(
                "at least one target domain is required (num_targets=%r)"
                % self.num_targets
            )
        if self.num_classes < 2:
            raise ConfigError(
                "num_classes must be >= 2, not %r" % self.num_classes
            )
        if self.num_classes >= 255:
            raise ConfigError("num_classes must be < 255")
        for name in ('height', 'width', 'train_size', 'val_size'):
            if getattr(self, name) < 1:
                raise ConfigError(
                    "%s must be >= 1, not %r" % (name, getattr(self, name))
                )
        if self.seed < 0:
            raise ConfigError("seed must be >= 0, not %r" % self.seed)

    def to_dict(self):
        """Dict of all configuration values."""
        return asdict(self)


def _seed(config, domain_index, split_index, i):
    """Seed of a scene; disjoint blocks per domain and split."""
    return (
        config.seed * 10 ** 9
        + domain_index * 10 ** 7
        + split_index * 10 ** 6
        + i
    )


def _sample_arrays(seed, profile, height, width):
    sample = generate_sample(profile, seed, height=height, width=width)
    return sample.image, sample.label


class Benchmark:
    """A labeled source domain and `K` target domains, with both splits.

    Attributes:
        source_train (Dataset): Labeled source training data
        source_val (Dataset): Source validation data
        target_train (OrderedDict): Map of target domain ids to the training
            :class:`Dataset` of that domain (labels for auditing only)
        target_val (OrderedDict): Map of target domain ids to the validation
            :class:`Dataset` of that domain
    """

    def __init__(self, source_train, source_val, target_train, target_val):
        self.source_train = source_train
        self.source_val = source_val
        self.target_train = OrderedDict(target_train)
        self.target_val = OrderedDict(target_val)
        if list(self.target_train) != list(self.target_val):
            raise DataError("train and val target domains do not match")
        if len(self.target_train) == 0:
            raise DataError("benchmark without target domains")
        for dataset in self.datasets():
            if (
                dataset.num_classes != source_train.num_classes
                or dataset.height != source_train.height
                or dataset.width != source_train.width
            ):
                raise DataError(
                    "%r does not share the shape and label space of the "
                    "source domain" % dataset
                )

    @property
    def target_ids(self):
        """list[str]: Ids of the target domains, in order"""
        return list(self.target_train)

    @property
    def num_classes(self):
        """int: Number of classes `C`"""
        return self.source_train.num_classes

    def datasets(self):
        """List of all datasets (source first)."""
        result = [self.source_train, self.source_val]
        for domain_id in self.target_ids:
            result.append(self.target_train[domain_id])
            result.append(self.target_val[domain_id])
        return result

    def restricted_to(self, target_ids):
        """A :class:`Benchmark` with only the given target domains.

        Raises:
            ConfigError: If any of the `target_ids` is unknown
        """
        unknown = [d for d in target_ids if d not in self.target_train]
        if len(unknown) > 0:
            raise ConfigError("unknown target domain(s) %s" % unknown)
        return Benchmark(
            self.source_train,
            self.source_val,
            [(d, self.target_train[d]) for d in target_ids],
            [(d, self.target_val[d]) for d in target_ids],
        )

    def save(self, directory):
        """Write every dataset to `directory`.

        Returns:
            list[str]: The names of the written files
        """
        os.makedirs(directory, exist_ok=True)
        filenames = []
        for dataset in self.datasets():
            filename = os.path.join(
                directory, "%s_%s.odbd" % (dataset.domain_id, dataset.split)
            )
            save_dataset(dataset, filename)
            filenames.append(filename)
        return filenames

    @classmethod
    def load(cls, directory, source_id='synth', config=None):
        """Load a benchmark written by :meth:`save`.

        Args:
            directory (str): Directory with the ``.odbd`` files
            source_id (str): Domain id of the source domain
            config (None or GeneratorConfig): If given, cross-check every
                dataset against it.

        Raises:
            DataError: If the directory does not contain a complete benchmark
        """
        datasets = {}
        for filename in sorted(os.listdir(directory)):
            if filename.endswith('.odbd'):
                dataset = load_dataset(
                    os.path.join(directory, filename), config=config
                )
                datasets[(dataset.domain_id, dataset.split)] = dataset
        try:
            source_train = datasets.pop((source_id, 'train'))
            source_val = datasets.pop((source_id, 'val'))
        except KeyError:
            raise DataError(
                "no source domain %r in %s" % (source_id, directory)
            )
        target_ids = sorted(set(d for (d, _) in datasets))
        try:
            return cls(
                source_train,
                source_val,
                [(d, datasets[(d, 'train')]) for d in target_ids],
                [(d, datasets[(d, 'val')]) for d in target_ids],
            )
        except KeyError as exc_info:
            raise DataError("missing dataset %s in %s" % (exc_info, directory))


def build_benchmark(config, profiles=None, parallel_map=None):
    """Generate the source domain and all target domains.

    Args:
        config (GeneratorConfig): The benchmark configuration
        profiles (None or tuple): A tuple ``(source_profile,
            target_profiles)``. Defaults to :func:`default_profiles`.
        parallel_map (None or callable): Map function with the interface of
            :func:`.parallelization.serial_map` used to generate the scenes of
            each dataset. Seeds are fixed per scene, so the result does not
            depend on the map function.

    Returns:
        Benchmark: The generated benchmark

    Raises:
        ConfigError: If `config` is invalid (e.g. ``num_targets=0``)
    """
    logger = logging.getLogger('mtbridge')
    config.validate()
    if parallel_map is None:
        parallel_map = serial_map
    if profiles is None:
        profiles = default_profiles(config.num_classes, config.num_targets)
    source_profile, target_profiles = profiles
    target_profiles = list(target_profiles)[: config.num_targets]
    if len(target_profiles) != config.num_targets:
        raise ConfigError(
            "%d target profiles given for num_targets=%d"
            % (len(target_profiles), config.num_targets)
        )
    all_profiles = [source_profile] + target_profiles
    if len(set(p.name for p in all_profiles)) != len(all_profiles):
        raise ConfigError("domain profiles must have distinct names")
    for profile in all_profiles:
        if profile.num_classes != config.num_classes:
            raise ConfigError(
                "profile %r has %d classes, config has %d"
                % (profile.name, profile.num_classes, config.num_classes)
            )

    def generate(domain_index, profile, split):
        split_index = _SPLITS.index(split)
        count = config.train_size if split == 'train' else config.val_size
        seeds = [
            _seed(config, domain_index, split_index, i) for i in range(count)
        ]
        logger.info(
            "Generating %d scenes for %s/%s", count, profile.name, split
        )
        arrays = parallel_map(
            _sample_arrays,
            seeds,
            task_args=(profile, config.height, config.width),
        )
        return Dataset(
            profile.name,
            split,
            np.stack([image for (image, _) in arrays]),
            np.stack([label for (_, label) in arrays]),
            num_classes=config.num_classes,
        )

    source_train = generate(0, source_profile, 'train')
    source_val = generate(0, source_profile, 'val')
    target_train, target_val = [], []
    for (k, profile) in enumerate(target_profiles):
        target_train.append((profile.name, generate(k + 1, profile, 'train')))
        target_val.append((profile.name, generate(k + 1, profile, 'val')))
    return Benchmark(source_train, source_val, target_train, target_val)


def _record_dtype(height, width, has_labels):
    fields = [('image', '<f4', (3, height, width))]
    if has_labels:
        fields.append(('label', 'u1', (height, width)))
    return np.dtype(fields)


def save_dataset(dataset, filename):
    """Write `dataset` to `filename`.

    The file consists of the magic bytes ``ODBD``, a ``u32`` version, a
    ``u32`` header length, a JSON header with the keys `domain_id`, `split`,
    `C`, `H`, `W`, `count`, `has_labels`, followed by `count` records of
    little-endian ``f32`` image planes, each followed by a ``u8`` label plane
    if `has_labels` is true.
    """
    header = dict(
        domain_id=dataset.domain_id,
        split=dataset.split,
        C=dataset.num_classes,
        H=dataset.height,
        W=dataset.width,
        count=len(dataset),
        has_labels=dataset.has_labels,
    )
    records = np.empty(
        len(dataset),
        dtype=_record_dtype(dataset.height, dataset.width, dataset.has_labels),
    )
    records['image'] = dataset.images
    if dataset.has_labels:
        records['label'] = dataset._labels
    write_container(filename, DATASET_MAGIC, header, records.tobytes())


def load_dataset(filename, config=None):
    """Read a :class:`Dataset` written by :func:`save_dataset`.

    Args:
        filename (str): Name of the file
        config (None or GeneratorConfig): If given, check that the number of
            classes, the image size, and the number of scenes in the file match
            the configuration.

    Raises:
        FileFormatError: If the file is corrupt, truncated, or of an unknown
            version
        DataError: If the file does not match `config`
    """
    header, payload, offset = read_container(
        filename,
        DATASET_MAGIC,
        required_keys=(
            'domain_id', 'split', 'C', 'H', 'W', 'count', 'has_labels',
        ),
    )
    for key in ('C', 'H', 'W', 'count'):
        if not isinstance(header[key], int) or header[key] < 1:
            raise FileFormatError(
                "invalid header value %s=%r" % (key, header[key]), offset=12
            )
    if header['split'] not in _SPLITS:
        raise FileFormatError(
            "invalid header value split=%r" % header['split'], offset=12
        )
    n_classes, height, width = header['C'], header['H'], header['W']
    count, has_labels = header['count'], bool(header['has_labels'])
    dtype = _record_dtype(height, width, has_labels)
    check_payload_size(payload, count * dtype.itemsize, offset)
    records = np.frombuffer(payload, dtype=dtype, count=count)
    images = records['image'].astype(np.float64)
    labels = None
    if has_labels:
        labels = records['label'].copy()
        bad = np.nonzero((labels >= n_classes).reshape(count, -1).any(axis=1))
        if len(bad[0]) > 0:
            i = int(bad[0][0])
            raise FileFormatError(
                "record %d contains a label outside [0, %d)" % (i, n_classes),
                offset=offset + i * dtype.itemsize + dtype.fields['label'][1],
            )
    if config is not None:
        expected = dict(C=config.num_classes, H=config.height, W=config.width)
        if header['split'] == 'train':
            expected['count'] = config.train_size
        else:
            expected['count'] = config.val_size
        for (key, val) in expected.items():
            if header[key] != val:
                raise DataError(
                    "%s: header field %s=%d does not match configuration "
                    "value %d" % (filename, key, header[key], val)
                )
    return Dataset(
        header['domain_id'], header['split'], images, labels, n_classes
    )
