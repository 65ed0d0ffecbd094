"""SVG charts of the target mIoU over the course of training runs.

The charts are rendered from the ``eval`` events of one or more event logs
(see :class:`.EventLog`), so that runs with different toggles can be
compared, e.g. with and without the Fisher-weighted EMA.
"""
import logging
import os
from collections import OrderedDict

import matplotlib
from matplotlib.figure import Figure

from .exceptions import ContractError
from .result import read_events


__all__ = ['eval_series', 'plot_series', 'emit_plots']

AVERAGE = 'average'

_RC_PARAMS = {
    'svg.fonttype': 'none',
    'svg.hashsalt': 'mtbridge',
    'font.size': 9,
    'axes.grid': True,
    'grid.alpha': 0.3,
}


def eval_series(events):
    """Extract the mIoU time series from the ``eval`` events of a run.

    Returns:
        tuple: ``(iterations, series)`` where `series` is an ordered dict of
        target domain ids (and ``'average'``) to lists of mIoU values, one for
        every entry of `iterations`
    """
    evals = [e for e in events if e['event'] == 'eval']
    iterations = [e['iteration'] for e in evals]
    series = OrderedDict()
    for e in evals:
        for domain_id in e['miou']:
            series.setdefault(domain_id, [])
    for domain_id in series:
        series[domain_id] = [e['miou'].get(domain_id) for e in evals]
    series[AVERAGE] = [e['avg_miou'] for e in evals]
    return iterations, series


def plot_series(curves, title, ylabel="mIoU"):
    """Line chart of one or more curves.

    Args:
        curves (dict): Map of labels to ``(x, y)`` tuples. None values in `y`
            are left out.
        title (str): Title of the chart
        ylabel (str): Label of the y-axis

    Returns:
        matplotlib.figure.Figure: The figure. Every line has the gid
        ``'curve-<label>'``, so that it can be found in the SVG output.
    """
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    for (label, (x, y)) in curves.items():
        points = [(xi, yi) for (xi, yi) in zip(x, y) if yi is not None]
        (line,) = ax.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            marker='o',
            markersize=3,
            label=label,
        )
        line.set_gid('curve-%s' % label)
    ax.set_title(title)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.legend(loc='best', frameon=False)
    fig.tight_layout()
    return fig


def _load(events):
    if isinstance(events, (str, os.PathLike)):
        return read_events(events)
    return list(events)


def emit_plots(runs, out_dir):
    """Write one SVG chart per target domain, plus one of the average.

    Args:
        runs (dict): Map of run labels to the events of the run, or to the
            name of a JSON-lines event log
        out_dir (str): Output directory (created if necessary)

    Returns:
        list[str]: The names of the written files, ``miou_<domain>.svg`` for
        every domain and ``miou_average.svg``

    Raises:
        ContractError: If a run has fewer than two evaluations
    """
    logger = logging.getLogger('mtbridge')
    if len(runs) == 0:
        raise ContractError("no runs to plot")
    all_series = OrderedDict()
    for (label, events) in runs.items():
        iterations, series = eval_series(_load(events))
        if len(iterations) < 2:
            raise ContractError(
                "run %r has %d evaluation(s); at least 2 are needed for a "
                "plot" % (label, len(iterations))
            )
        all_series[label] = (iterations, series)
    domain_ids = []
    for (_, series) in all_series.values():
        for domain_id in series:
            if domain_id != AVERAGE and domain_id not in domain_ids:
                domain_ids.append(domain_id)
    os.makedirs(out_dir, exist_ok=True)
    filenames = []
    with matplotlib.rc_context(_RC_PARAMS):
        for domain_id in domain_ids + [AVERAGE]:
            curves = OrderedDict(
                (label, (iterations, series[domain_id]))
                for (label, (iterations, series)) in all_series.items()
                if domain_id in series
            )
            if domain_id == AVERAGE:
                title = "average target mIoU"
            else:
                title = "mIoU on %s" % domain_id
            fig = plot_series(curves, title)
            filename = os.path.join(out_dir, "miou_%s.svg" % domain_id)
            fig.savefig(filename, format='svg', metadata={'Date': None})
            filenames.append(filename)
            logger.info("Wrote %s", filename)
    return filenames
