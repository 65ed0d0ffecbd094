"""Tests of mtbridge.convergence"""
import glom
import pytest

from mtbridge.convergence import (
    Or,
    avg_miou_above,
    delta_below,
    dump_result,
    value_below,
)
from mtbridge.exceptions import ConfigError
from mtbridge.metrics import EvalReport
from mtbridge.result import RunResult


def _result(totals, avg_mious=()):
    result = RunResult()
    result.iters = list(range(1, len(totals) + 1))
    result.losses = [{'total': v} for v in totals]
    for (i, value) in enumerate(avg_mious):
        report = EvalReport('city_a', [value], [True], value, value, value)
        result.eval_reports.append((i + 1, [report]))
    return result


def test_or_returns_first_message(tmpdir):
    """Test that the first stopping criterion wins and that a dump before it
    still happens"""
    filename = str(tmpdir.join('run.dump'))
    check_convergence = Or(
        dump_result(filename, every=2),
        value_below('1.0', name='loss'),
        avg_miou_above('0.5'),
    )
    assert check_convergence(_result([3.0])) is None
    assert check_convergence(_result([3.0, 0.5], [0.9])) == 'loss < 1.0'
    assert RunResult.load(filename).iters == [1, 2]
    assert check_convergence(_result([3.0, 2.0, 2.0], [0.9])) == (
        'Avg. mIoU > 0.5'
    )


def test_delta_below_specs():
    """Test the change of custom values, and that invalid specs are
    reported"""
    check_convergence = delta_below(
        '0.1',
        spec1=('info_vals', glom.T[-1]),
        spec0=('info_vals', glom.T[-2]),
        absolute_value=False,
        name='Δinfo',
    )
    result = _result([1.0])
    result.info_vals = [1.0]
    assert check_convergence(result) is None
    result.info_vals.append(3.0)
    assert check_convergence(result) is None
    # a large decrease passes without the absolute value
    result.info_vals.append(0.0)
    assert check_convergence(result) == 'Δinfo < 0.1'
    invalid = delta_below('0.1', spec1='nope', spec0='nope')
    with pytest.raises(glom.GlomError):
        invalid(result)


def test_dump_result_every():
    with pytest.raises(ConfigError):
        dump_result('run.dump', every=-1)
