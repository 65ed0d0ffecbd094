"""Runners for comparative experiments.

Every runner trains several models with :func:`.train` on one shared
:class:`.Benchmark`, averages the final per-domain mIoU of the teacher over
the given seeds, and returns one row per configuration. A row is a dict with
the keys

* ``'label'``: the name of the configuration,
* ``'miou'``: a dict of target domain ids to seed-averaged mIoU,
* ``'avg'``: the average of ``'miou'`` over the domains,
* ``'seed_avgs'``: the average mIoU of every seed, in order of `seeds`,

plus runner-specific entries. The rows can be written with
:func:`.write_summary_csv`.
"""
import itertools
import logging
import os

import numpy as np

from .config import Toggles
from .evaluation import evaluate
from .exceptions import ConfigError
from .metrics import write_summary_csv
from .result import EventLog
from .scenes import build_benchmark
from .train import train


__all__ = [
    'ABLATION_ROWS',
    'ablate',
    'order_study',
    'individual_models',
    'combination_study',
    'forgetting_drops',
    'evaluate',
]


ABLATION_ROWS = (
    ('baseline', Toggles.all_off()),
    (
        '+cyclic',
        Toggles(cyclic_domains=True, fisher_ema=False, context_mix=False),
    ),
    (
        '+cyclic+fisher_ema',
        Toggles(cyclic_domains=True, fisher_ema=True, context_mix=False),
    ),
    (
        '+cyclic+fisher_ema+context_mix',
        Toggles(cyclic_domains=True, fisher_ema=True, context_mix=True),
    ),
)
"""Labels and toggles of the ablation, each row adding one component"""


def _benchmark(config, benchmark, parallel_map):
    if benchmark is None:
        return build_benchmark(config.generator, parallel_map=parallel_map)
    return benchmark


def _event_log(event_log_dir, label, seed):
    if event_log_dir is None:
        return None
    os.makedirs(event_log_dir, exist_ok=True)
    return EventLog(
        os.path.join(event_log_dir, "%s_seed%d.jsonl" % (label, seed))
    )


def _run_row(
    label,
    config,
    benchmark,
    seeds,
    targets=None,
    event_log_dir=None,
    parallel_map=None,
):
    """Train `config` once per seed and average the final reports."""
    logger = logging.getLogger('mtbridge')
    per_seed = []
    for seed in seeds:
        logger.info("Running %s with seed %d", label, seed)
        event_log = _event_log(event_log_dir, label, seed)
        try:
            result = train(
                config.replace(seed=seed),
                benchmark,
                targets=targets,
                event_log=event_log,
                parallel_map=parallel_map,
            )
        finally:
            if event_log is not None:
                event_log.close()
        per_seed.append({r.domain_id: r.miou for r in result.final_reports})
    return _average_row(label, per_seed)


def _average_row(label, per_seed):
    domain_ids = list(per_seed[0])
    miou = {
        d: float(np.mean([values[d] for values in per_seed]))
        for d in domain_ids
    }
    return {
        'label': label,
        'miou': miou,
        'avg': float(np.mean(list(miou.values()))),
        'seed_avgs': [float(np.mean(list(v.values()))) for v in per_seed],
    }


def _write(rows, domain_ids, out_csv, extra_columns=()):
    if out_csv is not None:
        write_summary_csv(rows, domain_ids, out_csv, extra_columns)
        logging.getLogger('mtbridge').info("Wrote %s", out_csv)


def ablate(
    config,
    seeds=(0,),
    benchmark=None,
    out_csv=None,
    event_log_dir=None,
    parallel_map=None,
):
    """Run the configurations of :obj:`ABLATION_ROWS`.

    The runs differ only in their toggles; the settings of
    ``config.toggles`` for the unsupervised loss and the confidence weighting
    are kept in every row.

    Args:
        config (ExperimentConfig): The base configuration
        seeds (tuple[int]): The seeds of every row
        benchmark (None or Benchmark): The shared benchmark. If None, it is
            generated from ``config.generator``.
        out_csv (None or str): If given, CSV file for the rows
        event_log_dir (None or str): If given, directory for the event log of
            every run, as ``<label>_seed<seed>.jsonl``
        parallel_map (None or callable): See :func:`.train`

    Returns:
        list[dict]: One row per entry of :obj:`ABLATION_ROWS`, with an
        additional ``'toggles'`` entry
    """
    config.validate()
    benchmark = _benchmark(config, benchmark, parallel_map)
    rows = []
    for (label, toggles) in ABLATION_ROWS:
        row_toggles = Toggles(
            cyclic_domains=toggles.cyclic_domains,
            fisher_ema=toggles.fisher_ema,
            context_mix=toggles.context_mix,
            unsup_loss=config.toggles.unsup_loss,
            conf_weighting=config.toggles.conf_weighting,
        )
        row = _run_row(
            label,
            config.replace(toggles=row_toggles),
            benchmark,
            seeds,
            event_log_dir=event_log_dir,
            parallel_map=parallel_map,
        )
        row['toggles'] = row_toggles
        rows.append(row)
    _write(rows, benchmark.target_ids, out_csv)
    return rows


def _order_label(order):
    return '->'.join(order)


def order_study(
    config,
    permutations=None,
    seeds=(0,),
    benchmark=None,
    out_csv=None,
    event_log_dir=None,
    parallel_map=None,
):
    """Train with every given visiting order of the target domains.

    Args:
        config (ExperimentConfig): The base configuration. The cyclic domain
            selection is switched on for all runs.
        permutations (None or list[list[str]]): The orders to compare. If
            None, all permutations of the target domains.
        seeds, benchmark, out_csv, event_log_dir, parallel_map: As for
            :func:`ablate`

    Returns:
        list[dict]: One row per order, with additional entries ``'order'``
        and ``'max_gap'`` (the largest difference between the ``'avg'`` of
        any two rows, the same for all rows)

    Raises:
        ConfigError: If there are fewer than two target domains, or a
            permutation is invalid
    """
    config.validate()
    benchmark = _benchmark(config, benchmark, parallel_map)
    target_ids = benchmark.target_ids
    if len(target_ids) < 2:
        raise ConfigError(
            "an order study requires at least 2 target domains, not %d"
            % len(target_ids)
        )
    if permutations is None:
        permutations = list(itertools.permutations(target_ids))
    permutations = [list(p) for p in permutations]
    for perm in permutations:
        if sorted(perm) != sorted(target_ids):
            raise ConfigError(
                "%s is not a permutation of the target domains %s"
                % (perm, target_ids)
            )
    toggles = Toggles(**vars(config.toggles))
    toggles.cyclic_domains = True
    rows = []
    for perm in permutations:
        row = _run_row(
            _order_label(perm),
            config.replace(domain_order=perm, toggles=toggles),
            benchmark,
            seeds,
            event_log_dir=event_log_dir,
            parallel_map=parallel_map,
        )
        row['order'] = perm
        rows.append(row)
    avgs = [row['avg'] for row in rows]
    max_gap = float(max(avgs) - min(avgs))
    for row in rows:
        row['max_gap'] = max_gap
    _write(rows, target_ids, out_csv, extra_columns=('max_gap',))
    return rows


def individual_models(
    config,
    seeds=(0,),
    benchmark=None,
    out_csv=None,
    event_log_dir=None,
    parallel_map=None,
):
    """Train a separate model for every target domain.

    Each model is adapted to a single target domain and evaluated on that
    domain only. The result is a single row that combines the per-domain
    mIoU of all models.

    Args:
        config, seeds, benchmark, out_csv, event_log_dir, parallel_map: As
            for :func:`ablate`

    Returns:
        list[dict]: A list with one row, labeled ``'individual'``
    """
    config.validate()
    benchmark = _benchmark(config, benchmark, parallel_map)
    single = config.replace(domain_order=None)
    per_domain = {}
    for domain_id in benchmark.target_ids:
        row = _run_row(
            'individual_%s' % domain_id,
            single,
            benchmark,
            seeds,
            targets=[domain_id],
            event_log_dir=event_log_dir,
            parallel_map=parallel_map,
        )
        per_domain[domain_id] = row
    miou = {d: row['miou'][d] for (d, row) in per_domain.items()}
    rows = [
        {
            'label': 'individual',
            'miou': miou,
            'avg': float(np.mean(list(miou.values()))),
            'seed_avgs': [
                float(np.mean(values))
                for values in zip(
                    *[row['seed_avgs'] for row in per_domain.values()]
                )
            ],
        }
    ]
    _write(rows, benchmark.target_ids, out_csv)
    return rows


def combination_study(
    config,
    seeds=(0,),
    benchmark=None,
    out_csv=None,
    event_log_dir=None,
    parallel_map=None,
):
    """Train on every subset of at least two target domains.

    Args:
        config, seeds, benchmark, out_csv, event_log_dir, parallel_map: As
            for :func:`ablate`

    Returns:
        list[dict]: One row per subset (in order of increasing size), with
        an additional ``'targets'`` entry. Domains outside of the subset are
        missing from ``'miou'``.

    Raises:
        ConfigError: If there are fewer than three target domains
    """
    config.validate()
    benchmark = _benchmark(config, benchmark, parallel_map)
    target_ids = benchmark.target_ids
    if len(target_ids) < 3:
        raise ConfigError(
            "a combination study requires at least 3 target domains, not %d"
            % len(target_ids)
        )
    subset_config = config.replace(domain_order=None)
    rows = []
    for size in range(2, len(target_ids) + 1):
        for subset in itertools.combinations(target_ids, size):
            row = _run_row(
                '+'.join(subset),
                subset_config,
                benchmark,
                seeds,
                targets=list(subset),
                event_log_dir=event_log_dir,
                parallel_map=parallel_map,
            )
            row['targets'] = list(subset)
            rows.append(row)
    _write(rows, target_ids, out_csv)
    return rows


def forgetting_drops(events):
    """Loss in mIoU of a target domain while training on the next one.

    For every ``domain_switch`` event, compare the mIoU of the domain that was
    just completed in the last evaluation up to the switch with its mIoU in
    the last evaluation up to the following switch (or the end of the run).

    Args:
        events (list[dict]): The events of a run (see :class:`.EventLog`)

    Returns:
        list[dict]: For every switch with evaluations on both sides, a dict
        with ``'iteration'`` (of the switch), ``'domain'``, ``'before'``,
        ``'after'``, and ``'drop'`` (``before - after``)

    Example:

        >>> events = [
        ...     {'event': 'eval', 'iteration': 10, 'miou': {'a': 0.6}},
        ...     {'event': 'domain_switch', 'iteration': 10, 'from': 'a',
        ...      'to': 'b', 'epoch': 1},
        ...     {'event': 'eval', 'iteration': 20, 'miou': {'a': 0.5}},
        ... ]
        >>> [round(d['drop'], 6) for d in forgetting_drops(events)]
        [0.1]
    """
    evals = [e for e in events if e['event'] == 'eval']
    switches = [e for e in events if e['event'] == 'domain_switch']
    boundaries = [s['iteration'] for s in switches[1:]] + [float('inf')]

    def last_eval_until(iteration, lower=None):
        found = None
        for e in evals:
            if e['iteration'] <= iteration and (
                lower is None or e['iteration'] > lower
            ):
                found = e
        return found

    drops = []
    for (switch, boundary) in zip(switches, boundaries):
        domain = switch['from']
        before = last_eval_until(switch['iteration'])
        after = last_eval_until(boundary, lower=switch['iteration'])
        if before is None or after is None:
            continue
        if domain not in before['miou'] or domain not in after['miou']:
            continue
        drops.append(
            {
                'iteration': switch['iteration'],
                'domain': domain,
                'before': before['miou'][domain],
                'after': after['miou'][domain],
                'drop': before['miou'][domain] - after['miou'][domain],
            }
        )
    return drops
