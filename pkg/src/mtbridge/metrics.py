"""Segmentation metrics: confusion matrices, IoU, and mIoU reports.

Example:

    >>> cm = ConfusionMatrix(2)
    >>> gt = numpy.array([[0, 0], [1, 1]])
    >>> pred = numpy.array([[0, 1], [1, 1]])
    >>> cm = accumulate(cm, pred, gt)
    >>> cm.counts.tolist()
    [[1, 1], [0, 2]]
    >>> report = miou(cm, 'city_a')
    >>> print("%.4f" % report.miou)
    0.5833
"""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import IGNORE_INDEX
from .exceptions import ContractError, ShapeError
from .scenes import class_names


__all__ = [
    'ConfusionMatrix',
    'EvalReport',
    'accumulate',
    'miou',
    'average_over_targets',
    'write_reports_json',
    'write_class_csv',
    'write_summary_csv',
]


class ConfusionMatrix:
    """Pixel counts of (ground truth, prediction) pairs.

    Rows of :attr:`counts` are indexed by the ground truth class, columns by
    the predicted class.

    Args:
        num_classes (int): Number of classes `C`
        counts (None or numpy.ndarray): Initial counts, shape ``(C, C)``
        ignored (int): Initial number of ignored pixels

    Attributes:
        counts (numpy.ndarray): Integer array of shape ``(C, C)``
        ignored (int): Number of pixels skipped because their ground truth is
            the ignore value
    """

    def __init__(self, num_classes, counts=None, ignored=0):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((self.num_classes, self.num_classes), np.int64)
        self.counts = np.array(counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ShapeError(
                "counts must have shape (%d, %d), not %s"
                % (self.num_classes, self.num_classes, self.counts.shape)
            )
        self.ignored = int(ignored)

    def __repr__(self):
        return "ConfusionMatrix(%d, total=%d, ignored=%d)" % (
            self.num_classes,
            self.total,
            self.ignored,
        )

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ShapeError(
                "cannot add confusion matrices for %d and %d classes"
                % (self.num_classes, other.num_classes)
            )
        return ConfusionMatrix(
            self.num_classes,
            self.counts + other.counts,
            self.ignored + other.ignored,
        )

    @property
    def total(self):
        """int: Number of counted (non-ignored) pixels"""
        return int(self.counts.sum())

    @property
    def pixels_evaluated(self):
        """int: Number of counted plus ignored pixels"""
        return self.total + self.ignored

    def accumulate(self, pred, gt, ignore_index=IGNORE_INDEX):
        """Add the pixels of one (prediction, ground truth) pair in place.

        Raises:
            ShapeError: If `pred` and `gt` have different shapes
            IndexError: If a class index is outside ``[0, C)``
        """
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(
                "prediction shape %s does not match ground truth shape %s"
                % (pred.shape, gt.shape)
            )
        valid = gt != ignore_index
        g = gt[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        for (name, values) in (('ground truth', g), ('prediction', p)):
            if values.size > 0 and (
                values.min() < 0 or values.max() >= self.num_classes
            ):
                raise IndexError(
                    "%s contains class indices outside [0, %d)"
                    % (name, self.num_classes)
                )
        c = self.num_classes
        self.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
        self.ignored += int(gt.size - g.size)
        return self

    def iou(self):
        """Per-class IoU and presence flags.

        Returns:
            tuple: ``(iou, present)``. Classes that appear in neither the
            ground truth nor the prediction have ``present=False`` and an IoU
            of 0.
        """
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        present = union > 0
        iou = np.zeros(self.num_classes)
        iou[present] = tp[present] / union[present]
        return iou, present

    def pixel_accuracy(self):
        """Fraction of counted pixels that are predicted correctly."""
        if self.total == 0:
            raise ContractError("pixel accuracy of an empty confusion matrix")
        return float(np.trace(self.counts) / self.total)

    def class_accuracy(self):
        """Mean over ground-truth classes of the per-class recall."""
        gt_counts = self.counts.sum(axis=1)
        seen = gt_counts > 0
        if not np.any(seen):
            raise ContractError("class accuracy of an empty confusion matrix")
        recall = np.diag(self.counts)[seen] / gt_counts[seen]
        return float(np.mean(recall))


def accumulate(cm, pred, gt, ignore_index=IGNORE_INDEX):
    """Add the pixels of `pred` and `gt` to `cm` and return it.

    This is the functional form of :meth:`ConfusionMatrix.accumulate`.
    """
    return cm.accumulate(pred, gt, ignore_index=ignore_index)


@dataclass
class EvalReport:
    """Evaluation of a model on a single domain.

    Attributes:
        domain_id (str): Name of the evaluated domain
        per_class_iou (list[float]): IoU for every class (0 for classes absent
            from both ground truth and prediction)
        present (list[bool]): Whether a class contributes to :attr:`miou`
        miou (float): Mean IoU over the present classes
        pixel_accuracy (float): Fraction of correctly predicted pixels
        mean_class_accuracy (float): Mean per-class recall
        avg_miou (None or float): Average mIoU over all evaluated target
            domains, filled in by :func:`average_over_targets`
    """

    domain_id: str
    per_class_iou: list
    present: list
    miou: float
    pixel_accuracy: float
    mean_class_accuracy: float
    avg_miou: float = None
    class_names: list = field(default_factory=list)

    def to_dict(self):
        """Dict of all values (JSON-serializable)."""
        return asdict(self)


def miou(cm, domain_id=''):
    """Compute the :class:`EvalReport` for a confusion matrix.

    The IoU of class `c` is ``TP / (TP + FP + FN)``. Classes with an empty
    union are excluded from the mean.

    Raises:
        ContractError: If `cm` does not contain any counted pixels
    """
    if cm.total == 0:
        raise ContractError(
            "cannot compute the mIoU of an all-zero confusion matrix"
        )
    iou, present = cm.iou()
    return EvalReport(
        domain_id=str(domain_id),
        per_class_iou=[float(v) for v in iou],
        present=[bool(v) for v in present],
        miou=float(np.mean(iou[present])),
        pixel_accuracy=cm.pixel_accuracy(),
        mean_class_accuracy=cm.class_accuracy(),
        class_names=class_names(cm.num_classes),
    )


def average_over_targets(reports):
    """Unweighted mean of the per-domain mIoU.

    Args:
        reports (list): :class:`EvalReport` instances or plain numbers. The
            :attr:`~EvalReport.avg_miou` of every report is set to the
            result.

    Raises:
        ContractError: If `reports` is empty

    Example:

        >>> print("%.1f" % average_over_targets([75.8, 71.2]))
        73.5
    """
    reports = list(reports)
    if len(reports) == 0:
        raise ContractError("cannot average over zero target domains")
    values = [
        r.miou if isinstance(r, EvalReport) else float(r) for r in reports
    ]
    avg = float(np.mean(values))
    for r in reports:
        if isinstance(r, EvalReport):
            r.avg_miou = avg
    return avg


def write_reports_json(reports, filename):
    """Write a list of :class:`EvalReport` instances as a JSON document."""
    data = dict(
        reports=[r.to_dict() for r in reports],
        avg_miou=average_over_targets(reports),
    )
    with open(filename, 'w') as out_fh:
        json.dump(data, out_fh, indent=2)


def _pct(value):
    return "%.2f" % (100.0 * value)


def write_class_csv(reports, filename):
    """Write per-class IoU rows in percent, one row per domain.

    The columns are the domain, the class names, and the mIoU; a final
    ``Avg.`` row holds the average mIoU over all rows. Classes that are
    absent from a domain are written as ``n/a``.
    """
    names = reports[0].class_names or class_names(len(reports[0].present))
    avg = average_over_targets(reports)
    with open(filename, 'w', newline='') as out_fh:
        writer = csv.writer(out_fh)
        writer.writerow(['domain'] + list(names) + ['mIoU'])
        for r in reports:
            cells = [
                _pct(v) if p else 'n/a'
                for (v, p) in zip(r.per_class_iou, r.present)
            ]
            writer.writerow([r.domain_id] + cells + [_pct(r.miou)])
        writer.writerow(['Avg.'] + [''] * len(names) + [_pct(avg)])


def write_summary_csv(rows, domain_ids, filename, extra_columns=()):
    """Write one row per run with per-domain mIoU and ``Avg.`` columns.

    Args:
        rows (list[dict]): Every row has a ``'label'``, a ``'miou'`` mapping
            of domain ids to mIoU values (missing domains are written as
            ``n/a``), an ``'avg'`` value, and optionally values for the
            `extra_columns`
        domain_ids (list[str]): Domain column order
        filename (str): Output file
        extra_columns (tuple[str]): Names of additional columns
    """
    with open(filename, 'w', newline='') as out_fh:
        writer = csv.writer(out_fh)
        writer.writerow(
            ['run'] + list(domain_ids) + ['Avg.'] + list(extra_columns)
        )
        for row in rows:
            cells = [
                _pct(row['miou'][d]) if d in row['miou'] else 'n/a'
                for d in domain_ids
            ]
            extras = [
                _pct(row[col]) if row.get(col) is not None else 'n/a'
                for col in extra_columns
            ]
            writer.writerow(
                [row['label']] + cells + [_pct(row['avg'])] + extras
            )
