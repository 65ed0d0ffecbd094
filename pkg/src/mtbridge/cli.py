"""Command line interface ``mtbridge``.

Exit codes: 0 on success, 1 for an invalid configuration or invocation, 2 for
missing, corrupt, or incongruent data, 3 if training produced a non-finite
loss.
"""
import logging
import os

import click

from .config import ExperimentConfig, apply_overrides, load_config
from .convergence import (
    Or,
    avg_miou_above,
    delta_below,
    dump_result,
    value_below,
)
from .evaluation import evaluate
from .exceptions import (
    ConfigError,
    ContractError,
    DataError,
    NumericalError,
    ShapeError,
)
from .experiments import ablate, order_study
from .info_hooks import print_table
from .metrics import write_class_csv, write_reports_json
from .plotting import emit_plots
from .scenes import Benchmark, build_benchmark
from .segnet import load_checkpoint
from .train import train


__all__ = ['main']

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (NumericalError, EXIT_NUMERICAL),
    (DataError, EXIT_DATA),
    (ShapeError, EXIT_DATA),
    (ContractError, EXIT_DATA),
    (OSError, EXIT_DATA),
    (IndexError, EXIT_DATA),
)


class _ExitCodeGroup(click.Group):
    """Group that turns package exceptions into exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as exc_info:
            exc_info.show()
            ctx.exit(EXIT_CONFIG)
        except click.exceptions.Exit:
            raise
        except tuple(cls for (cls, _) in _EXIT_CODES) as exc_info:
            click.echo("Error: %s" % exc_info, err=True)
            for (cls, code) in _EXIT_CODES:
                if isinstance(exc_info, cls):
                    ctx.exit(code)


def _get_config(config_file, preset, overrides):
    if config_file is not None:
        config = load_config(config_file)
    elif preset == 'desk':
        config = ExperimentConfig.desk()
    else:
        config = ExperimentConfig()
    return apply_overrides(config, overrides).validate()


def _config_options(func):
    func = click.option(
        '--set',
        'overrides',
        multiple=True,
        metavar='PATH=VALUE',
        help="Override a configuration value, e.g. 'optim.base_lr=0.01'",
    )(func)
    func = click.option(
        '--preset',
        type=click.Choice(['desk', 'full']),
        default='desk',
        show_default=True,
        help="Base configuration if no --config is given",
    )(func)
    func = click.option(
        '--config',
        'config_file',
        type=click.Path(dir_okay=False),
        help="JSON configuration file",
    )(func)
    return func


def _data_option(func):
    return click.option(
        '--data',
        'data_dir',
        type=click.Path(file_okay=False),
        help="Directory written by 'mtbridge gen'. If not given, the "
        "benchmark is generated from the configuration.",
    )(func)


def _get_benchmark(config, data_dir):
    if data_dir is None:
        return build_benchmark(config.generator)
    if not os.path.isdir(data_dir):
        raise DataError("no such data directory: %s" % data_dir)
    return Benchmark.load(data_dir, config=config.generator)


def _check_convergence(stop_loss, stop_delta, stop_miou, dump, dump_every):
    checks = []
    if dump is not None:
        checks.append(dump_result(dump, every=dump_every))
    if stop_loss is not None:
        checks.append(value_below(stop_loss, name='loss'))
    if stop_delta is not None:
        checks.append(delta_below(stop_delta, name='Δloss'))
    if stop_miou is not None:
        checks.append(avg_miou_above(stop_miou))
    if len(checks) == 0:
        return None
    return Or(*checks)


def _parse_seeds(text):
    try:
        seeds = tuple(int(s) for s in text.split(','))
    except ValueError:
        raise ConfigError("invalid seeds %r" % text)
    if any(seed < 0 for seed in seeds):
        raise ConfigError("seeds must be >= 0, not %r" % text)
    return seeds


def _echo_rows(rows):
    for row in rows:
        cells = " ".join(
            "%s=%.2f" % (d, 100 * v) for (d, v) in row['miou'].items()
        )
        click.echo(
            "%-32s %s Avg.=%.2f" % (row['label'], cells, 100 * row['avg'])
        )


@click.group(cls=_ExitCodeGroup)
@click.help_option('--help', '-h')
@click.option('--verbose', '-v', is_flag=True, help="Log run milestones")
@click.option('--debug', is_flag=True, help="Log debug messages")
def main(verbose, debug):
    """Multi-target domain adaptation on synthetic scene benchmarks."""
    level = logging.WARNING
    if verbose:
        level = logging.INFO
    if debug:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format='%(levelname)s %(name)s: %(message)s'
    )


@main.command()
@_config_options
@click.argument('out_dir', type=click.Path(file_okay=False))
def gen(config_file, preset, overrides, out_dir):
    """Generate the benchmark and write its datasets to OUT_DIR."""
    config = _get_config(config_file, preset, overrides)
    benchmark = build_benchmark(config.generator)
    for filename in benchmark.save(out_dir):
        click.echo(filename)


@main.command(name='train')
@_config_options
@_data_option
@click.option(
    '--target',
    'targets',
    multiple=True,
    help="Train only on this target domain (may be repeated)",
)
@click.option('--events', type=click.Path(dir_okay=False), help="Event log")
@click.option(
    '--checkpoint',
    type=click.Path(dir_okay=False),
    help="File for the final teacher parameters",
)
@click.option(
    '--bridge-dump',
    type=click.Path(file_okay=False),
    help="Directory for images of sample bridges",
)
@click.option(
    '--table/--no-table',
    default=True,
    show_default=True,
    help="Print the losses of every iteration",
)
@click.option(
    '--stop-loss',
    type=float,
    help="Stop once the total loss drops below this value",
)
@click.option(
    '--stop-delta',
    type=float,
    help="Stop once the total loss changes by less than this value between "
    "two iterations",
)
@click.option(
    '--stop-miou',
    type=float,
    help="Stop once the average target mIoU of an evaluation exceeds this "
    "value",
)
@click.option(
    '--dump',
    type=click.Path(dir_okay=False),
    help="File for intermediate results, may contain '{iter}', e.g. "
    "'run_{iter:06d}.dump'",
)
@click.option(
    '--dump-every',
    type=click.IntRange(min=1),
    default=10,
    show_default=True,
    help="Iterations between intermediate results",
)
def train_cmd(
    config_file,
    preset,
    overrides,
    data_dir,
    targets,
    events,
    checkpoint,
    bridge_dump,
    table,
    stop_loss,
    stop_delta,
    stop_miou,
    dump,
    dump_every,
):
    """Train a student/teacher pair."""
    config = _get_config(config_file, preset, overrides)
    benchmark = _get_benchmark(config, data_dir)
    if len(targets) > 0 and config.domain_order is not None:
        raise ConfigError("--target cannot be combined with domain_order")
    result = train(
        config,
        benchmark,
        targets=list(targets) if len(targets) > 0 else None,
        info_hook=print_table() if table else None,
        check_convergence=_check_convergence(
            stop_loss, stop_delta, stop_miou, dump, dump_every
        ),
        event_log=events,
        checkpoint=checkpoint,
        bridge_dump_dir=bridge_dump,
    )
    click.echo(str(result))


@main.command(name='eval')
@_config_options
@_data_option
@click.argument('checkpoint', type=click.Path(dir_okay=False))
@click.option(
    '--split',
    type=click.Choice(['val', 'train']),
    default='val',
    show_default=True,
    help="Split of the target domains to evaluate on",
)
@click.option('--json', 'json_file', type=click.Path(dir_okay=False))
@click.option('--csv', 'csv_file', type=click.Path(dir_okay=False))
def eval_cmd(
    config_file, preset, overrides, data_dir, checkpoint, split, json_file,
    csv_file,
):
    """Evaluate the model in CHECKPOINT on every target domain."""
    config = _get_config(config_file, preset, overrides)
    benchmark = _get_benchmark(config, data_dir)
    if split == 'val':
        datasets = benchmark.target_val
    else:
        datasets = benchmark.target_train
    params, _, _ = load_checkpoint(
        checkpoint, config=config.model, max_iter=config.optim.max_iter
    )
    reports = evaluate(params, datasets)
    for report in reports:
        click.echo("%-16s mIoU %.2f" % (report.domain_id, 100 * report.miou))
    click.echo("%-16s mIoU %.2f" % ("Avg.", 100 * reports[0].avg_miou))
    if json_file is not None:
        write_reports_json(reports, json_file)
    if csv_file is not None:
        write_class_csv(reports, csv_file)


@main.command(name='ablate')
@_config_options
@_data_option
@click.option('--seeds', default='0', show_default=True, help="e.g. '0,1,2'")
@click.option('--out', type=click.Path(dir_okay=False), help="CSV file")
@click.option(
    '--events-dir',
    type=click.Path(file_okay=False),
    help="Directory for the event logs of all runs",
)
def ablate_cmd(
    config_file, preset, overrides, data_dir, seeds, out, events_dir
):
    """Compare the method with components switched on one by one."""
    config = _get_config(config_file, preset, overrides)
    rows = ablate(
        config,
        seeds=_parse_seeds(seeds),
        benchmark=_get_benchmark(config, data_dir),
        out_csv=out,
        event_log_dir=events_dir,
    )
    _echo_rows(rows)


@main.command(name='order-study')
@_config_options
@_data_option
@click.option(
    '--order',
    'orders',
    multiple=True,
    help="Comma-separated domain order (may be repeated). Defaults to all "
    "permutations.",
)
@click.option('--seeds', default='0', show_default=True, help="e.g. '0,1,2'")
@click.option('--out', type=click.Path(dir_okay=False), help="CSV file")
@click.option(
    '--events-dir',
    type=click.Path(file_okay=False),
    help="Directory for the event logs of all runs",
)
def order_study_cmd(
    config_file, preset, overrides, data_dir, orders, seeds, out, events_dir
):
    """Compare different visiting orders of the target domains."""
    config = _get_config(config_file, preset, overrides)
    permutations = None
    if len(orders) > 0:
        permutations = [order.split(',') for order in orders]
    rows = order_study(
        config,
        permutations=permutations,
        seeds=_parse_seeds(seeds),
        benchmark=_get_benchmark(config, data_dir),
        out_csv=out,
        event_log_dir=events_dir,
    )
    _echo_rows(rows)
    click.echo("max gap: %.2f" % (100 * rows[0]['max_gap']))


@main.command(name='plot')
@click.argument(
    'event_logs', nargs=-1, required=True, metavar='[LABEL=]EVENTS...'
)
@click.option(
    '--out',
    'out_dir',
    type=click.Path(file_okay=False),
    default='plots',
    show_default=True,
)
def plot_cmd(event_logs, out_dir):
    """Plot the target mIoU over the iterations of one or more runs."""
    runs = {}
    for arg in event_logs:
        label, sep, path = arg.partition('=')
        if sep != '=':
            path = arg
            label = os.path.splitext(os.path.basename(arg))[0]
        runs[label] = path
    for filename in emit_plots(runs, out_dir):
        click.echo(filename)
