"""Tests of the mtbridge command line interface"""
import csv
import json
import logging
import os

import pytest
from click.testing import CliRunner

from mtbridge import cli
from mtbridge.config import save_config
from mtbridge.exceptions import NumericalError
from mtbridge.result import RunResult, read_events
from mtbridge.segnet import load_checkpoint
from test_scenes import tiny_generator_config  # noqa: F401
from test_train import tiny_config  # noqa: F401


@pytest.fixture
def config_file(tiny_config, tmpdir):  # noqa: F811
    """JSON file with the configuration of a short run"""
    filename = str(tmpdir.join('config.json'))
    save_config(tiny_config, filename)
    return filename


@pytest.fixture
def data_dir(config_file, tmpdir):
    """Directory with the benchmark written by 'mtbridge gen'"""
    out_dir = str(tmpdir.join('data'))
    result = CliRunner().invoke(
        cli.main, ['gen', '--config', config_file, out_dir]
    )
    assert result.exit_code == 0, result.output
    return out_dir


def test_help():
    """Test that all subcommands are listed"""
    result = CliRunner().invoke(cli.main, ['--help'])
    assert result.exit_code == 0
    for cmd in ('gen', 'train', 'eval', 'ablate', 'order-study', 'plot'):
        assert cmd in result.output


def test_gen(data_dir):
    """Test writing the benchmark"""
    files = os.listdir(data_dir)
    assert len(files) > 0
    assert any('city_a' in f for f in files)


def test_train_and_eval(config_file, data_dir, tmpdir):
    """Test a training run followed by the evaluation of its checkpoint"""
    events = str(tmpdir.join('run.jsonl'))
    checkpoint = str(tmpdir.join('teacher.odbc'))
    runner = CliRunner()
    result = runner.invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--data', data_dir,
            '--events', events,
            '--checkpoint', checkpoint,
            '--no-table',
        ],
    )
    assert result.exit_code == 0, result.output
    assert "Training Run Result" in result.output
    assert "Reached 6 iterations" in result.output
    assert read_events(events)[-1]['event'] == 'run_finished'
    _, _, iteration = load_checkpoint(checkpoint)
    assert iteration == 6

    json_file = str(tmpdir.join('reports.json'))
    csv_file = str(tmpdir.join('classes.csv'))
    result = runner.invoke(
        cli.main,
        [
            'eval',
            '--config', config_file,
            '--data', data_dir,
            checkpoint,
            '--json', json_file,
            '--csv', csv_file,
        ],
    )
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert [line.split()[0] for line in lines] == ['city_a', 'city_b', 'Avg.']
    assert os.path.isfile(json_file)
    with open(json_file) as in_fh:
        json.load(in_fh)
    with open(csv_file, newline='') as in_fh:
        rows = list(csv.reader(in_fh))
    assert rows[0][0] == 'domain'
    assert rows[-1][0] == 'Avg.'


def test_train_with_overrides(config_file):
    """Test a run on a generated benchmark with command line overrides"""
    result = CliRunner().invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--set', 'optim.max_iter=2',
            '--target', 'city_b',
            '--no-table',
        ],
    )
    assert result.exit_code == 0, result.output
    assert "Reached 2 iterations" in result.output


@pytest.mark.parametrize(
    'args',
    [
        ['train', '--set', 'optim.nope=1'],
        ['train', '--set', 'batch_size=0'],
        ['train', '--preset', 'nope'],
        ['gen', '--set', 'generator.num_targets=0', 'out'],
        ['ablate', '--seeds', 'a,b'],
        ['ablate', '--seeds', '-1'],
    ],
)
def test_invalid_config(args):
    """Test the exit code for an invalid configuration or invocation"""
    result = CliRunner().invoke(cli.main, args)
    assert result.exit_code == cli.EXIT_CONFIG


def test_target_with_domain_order(config_file):
    """Test that --target cannot be combined with a domain order"""
    result = CliRunner().invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--set', 'domain_order=["city_b", "city_a"]',
            '--target', 'city_a',
        ],
    )
    assert result.exit_code == cli.EXIT_CONFIG
    assert "--target cannot be combined" in result.output


def test_missing_data(config_file, tmpdir):
    """Test the exit code for missing or corrupt data"""
    runner = CliRunner()
    missing = str(tmpdir.join('missing'))
    result = runner.invoke(
        cli.main, ['train', '--config', config_file, '--data', missing]
    )
    assert result.exit_code == cli.EXIT_DATA
    assert "no such data directory" in result.output
    empty = str(tmpdir.mkdir('empty'))
    result = runner.invoke(
        cli.main, ['train', '--config', config_file, '--data', empty]
    )
    assert result.exit_code == cli.EXIT_DATA
    corrupt = tmpdir.join('corrupt.odbc')
    corrupt.write('not a checkpoint')
    result = runner.invoke(
        cli.main, ['eval', '--config', config_file, str(corrupt)]
    )
    assert result.exit_code == cli.EXIT_DATA


def test_non_finite_loss(config_file, monkeypatch):
    """Test the exit code for a non-finite loss"""

    def diverging_train(*args, **kwargs):
        raise NumericalError("non-finite loss in iteration 1")

    monkeypatch.setattr(cli, 'train', diverging_train)
    result = CliRunner().invoke(
        cli.main, ['train', '--config', config_file, '--no-table']
    )
    assert result.exit_code == cli.EXIT_NUMERICAL
    assert "non-finite loss" in result.output


def test_ablate(config_file, data_dir, tmpdir):
    """Test the ablation command"""
    out = str(tmpdir.join('ablation.csv'))
    events_dir = str(tmpdir.join('events'))
    result = CliRunner().invoke(
        cli.main,
        [
            'ablate',
            '--config', config_file,
            '--data', data_dir,
            '--set', 'optim.max_iter=2',
            '--set', 'eval_every=0',
            '--out', out,
            '--events-dir', events_dir,
        ],
    )
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert [line.split()[0] for line in lines] == [
        'baseline',
        '+cyclic',
        '+cyclic+fisher_ema',
        '+cyclic+fisher_ema+context_mix',
    ]
    assert all('Avg.=' in line for line in lines)
    assert os.path.isfile(out)
    assert len(os.listdir(events_dir)) == 4


def test_order_study(config_file, data_dir):
    """Test the order study command with an explicit order"""
    result = CliRunner().invoke(
        cli.main,
        [
            'order-study',
            '--config', config_file,
            '--data', data_dir,
            '--set', 'optim.max_iter=2',
            '--order', 'city_b,city_a',
        ],
    )
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0].startswith('city_b->city_a')
    assert lines[-1] == "max gap: 0.00"
    result = CliRunner().invoke(
        cli.main,
        [
            'order-study',
            '--config', config_file,
            '--data', data_dir,
            '--order', 'city_b,city_x',
        ],
    )
    assert result.exit_code == cli.EXIT_CONFIG


def test_plot(config_file, tmpdir):
    """Test plotting the event logs of two runs"""
    runner = CliRunner()
    events = []
    for name in ('fisher', 'plain'):
        filename = str(tmpdir.join('%s.jsonl' % name))
        args = [
            'train', '--config', config_file, '--events', filename,
            '--no-table',
        ]
        if name == 'plain':
            args += ['--set', 'toggles.fisher_ema=false']
        result = runner.invoke(cli.main, args)
        assert result.exit_code == 0, result.output
        events.append(filename)
    out_dir = str(tmpdir.join('plots'))
    result = runner.invoke(
        cli.main,
        ['plot', events[0], 'no_fisher=%s' % events[1], '--out', out_dir],
    )
    assert result.exit_code == 0, result.output
    assert sorted(os.listdir(out_dir)) == [
        'miou_average.svg',
        'miou_city_a.svg',
        'miou_city_b.svg',
    ]
    result = runner.invoke(
        cli.main, ['plot', str(tmpdir.join('missing.jsonl'))]
    )
    assert result.exit_code == cli.EXIT_DATA


def test_train_stop_and_dump(config_file, tmpdir):
    """Test stopping a run early while dumping intermediate results"""
    dump = str(tmpdir.join('run_{iter:06d}.dump'))
    result = CliRunner().invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--stop-miou=-1',
            '--dump', dump,
            '--dump-every', '2',
            '--no-table',
        ],
    )
    assert result.exit_code == 0, result.output
    # the first evaluation happens in iteration 3
    assert "Reached convergence: Avg. mIoU > -1.0" in result.output
    assert sorted(os.listdir(str(tmpdir))) == [
        'config.json',
        'run_000002.dump',
    ]
    dumped = RunResult.load(str(tmpdir.join('run_000002.dump')))
    assert dumped.iters == [1, 2]


@pytest.mark.parametrize(
    'option, message, n_iters',
    [
        ('--stop-loss=1e9', "loss < 1000000000.0", 1),
        ('--stop-delta=1e9', "Δloss < 1000000000.0", 2),
    ],
)
def test_train_stop_on_loss(config_file, option, message, n_iters):
    """Test stopping a run on the value or the change of the loss"""
    result = CliRunner().invoke(
        cli.main, ['train', '--config', config_file, option, '--no-table']
    )
    assert result.exit_code == 0, result.output
    assert "Reached convergence: %s" % message in result.output
    assert "Number of iterations: %d" % n_iters in result.output


def test_eval_checks_configuration(config_file, data_dir, tmpdir, caplog):
    """Test that a checkpoint and a data directory must match the
    configuration"""
    runner = CliRunner()
    checkpoint = str(tmpdir.join('teacher.odbc'))
    result = runner.invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--data', data_dir,
            '--checkpoint', checkpoint,
            '--no-table',
        ],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        cli.main,
        [
            'eval',
            '--config', config_file,
            '--set', 'model.channels=[4, 4, 3]',
            checkpoint,
        ],
    )
    assert result.exit_code == cli.EXIT_DATA
    assert "different model configuration" in result.output
    with caplog.at_level(logging.WARNING, logger='mtbridge'):
        result = runner.invoke(
            cli.main,
            [
                'eval',
                '--config', config_file,
                '--set', 'optim.max_iter=2',
                '--data', data_dir,
                checkpoint,
            ],
        )
    assert result.exit_code == 0, result.output
    assert "more than max_iter=2" in caplog.text
    result = runner.invoke(
        cli.main,
        [
            'train',
            '--config', config_file,
            '--set', 'generator.train_size=5',
            '--data', data_dir,
        ],
    )
    assert result.exit_code == cli.EXIT_DATA
    assert "does not match configuration" in result.output


def test_label_index_error(config_file, monkeypatch):
    """Test the exit code for class indices outside the label space"""

    def bad_labels(*args, **kwargs):
        raise IndexError("label contains class indices outside [0, 3)")

    monkeypatch.setattr(cli, 'train', bad_labels)
    result = CliRunner().invoke(
        cli.main, ['train', '--config', config_file, '--no-table']
    )
    assert result.exit_code == cli.EXIT_DATA
    assert "outside [0, 3)" in result.output
