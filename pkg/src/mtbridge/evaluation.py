"""Evaluation of a model on labeled validation splits."""
import logging
import os
from collections.abc import Mapping

from .exceptions import DataError
from .metrics import ConfusionMatrix, average_over_targets, miou
from .parallelization import serial_map
from .segnet import ParamSet, load_checkpoint, predict


__all__ = ['evaluate']


def _image_confusion(sample, names, arrays, num_classes):
    image, label = sample
    params = ParamSet(zip(names, arrays), trainable=False)
    pred, _ = predict(params, image)
    return ConfusionMatrix(num_classes).accumulate(pred, label)


def evaluate(params, datasets, parallel_map=None, config=None):
    """Evaluate a model on every dataset.

    Args:
        params (ParamSet or str): The model parameters (usually those of the
            teacher), or the name of a checkpoint file
        datasets (dict or list): Map of domain ids to labeled
            :class:`.Dataset` instances, or a list of datasets
        parallel_map (None or callable): Function to evaluate the per-image
            confusion matrices (see :mod:`mtbridge.parallelization`). The
            matrices are summed in dataset order.
        config (None or SegNetConfig): If `params` is a checkpoint, the
            configuration it must match

    Returns:
        list[EvalReport]: One report per dataset, with
        :attr:`~.EvalReport.avg_miou` set to the average over all datasets

    Raises:
        DataError: If a dataset has no labels or does not match the model
    """
    logger = logging.getLogger('mtbridge')
    if isinstance(params, (str, os.PathLike)):
        params, _, _ = load_checkpoint(params, config=config)
    if parallel_map is None:
        parallel_map = serial_map
    if isinstance(datasets, Mapping):
        datasets = list(datasets.values())
    num_classes = params.shapes[-1][0]
    in_channels = params.shapes[0][1]
    reports = []
    for dataset in datasets:
        if not dataset.has_labels:
            raise DataError("%r has no labels for evaluation" % dataset)
        if dataset.num_classes != num_classes:
            raise DataError(
                "model predicts %d classes, %r has %d"
                % (num_classes, dataset, dataset.num_classes)
            )
        if dataset.images.shape[1] != in_channels:
            raise DataError(
                "model expects %d input channels, %r has %d"
                % (in_channels, dataset, dataset.images.shape[1])
            )
        samples = [
            (dataset.image(i), dataset.label(i)) for i in range(len(dataset))
        ]
        matrices = parallel_map(
            _image_confusion,
            samples,
            task_args=(params.names, params.arrays, num_classes),
        )
        cm = ConfusionMatrix(num_classes)
        for m in matrices:
            cm = cm + m
        report = miou(cm, dataset.domain_id)
        logger.info(
            "Evaluated %s/%s: mIoU %.4f",
            dataset.domain_id,
            dataset.split,
            report.miou,
        )
        reports.append(report)
    if len(reports) > 0:
        average_over_targets(reports)
    return reports
