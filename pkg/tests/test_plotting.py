"""Tests of mtbridge.plotting"""
import os
import xml.etree.ElementTree as ET

import pytest

from mtbridge.exceptions import ContractError
from mtbridge.plotting import emit_plots, eval_series, plot_series
from mtbridge.result import EventLog


SVG = '{http://www.w3.org/2000/svg}'


def _eval_events(values):
    """Eval events for (iteration, miou_a, miou_b) tuples"""
    events = []
    for (iteration, a, b) in values:
        events.append({'event': 'iteration', 'iteration': iteration})
        events.append(
            {
                'event': 'eval',
                'iteration': iteration,
                'miou': {'city_a': a, 'city_b': b},
                'avg_miou': (a + b) / 2,
            }
        )
    return events


def _curve_group(filename, label):
    root = ET.parse(filename).getroot()
    for group in root.iter(SVG + 'g'):
        if group.get('id') == 'curve-%s' % label:
            return group
    return None


def test_eval_series():
    """Test the extraction of the mIoU time series"""
    events = _eval_events([(10, 0.2, 0.4), (20, 0.3, 0.5)])
    events[-1]['miou']['city_c'] = 0.1
    iterations, series = eval_series(events)
    assert iterations == [10, 20]
    assert list(series) == ['city_a', 'city_b', 'city_c', 'average']
    assert series['city_a'] == [0.2, 0.3]
    assert series['city_c'] == [None, 0.1]
    assert series['average'] == pytest.approx([0.3, 0.4])


def test_plot_series():
    """Test that every curve is drawn, without missing values, within the
    axis limits"""
    fig = plot_series(
        {'a': ([1, 2, 3], [0.1, None, 0.9]), 'b': ([1, 2], [0.5, 0.6])},
        title="test",
    )
    (ax,) = fig.axes
    lines = {line.get_gid(): line for line in ax.get_lines()}
    assert set(lines) == {'curve-a', 'curve-b'}
    assert list(lines['curve-a'].get_xdata()) == [1, 3]
    assert list(lines['curve-a'].get_ydata()) == [0.1, 0.9]
    ymin, ymax = ax.get_ylim()
    assert ymin <= 0.1 and ymax >= 0.9
    xmin, xmax = ax.get_xlim()
    assert xmin <= 1 and xmax >= 3
    assert ax.get_title() == "test"
    assert ax.get_ylabel() == "mIoU"


def test_emit_plots(tmpdir):
    """Test the SVG charts of two runs"""
    events_file = str(tmpdir.join('fisher.jsonl'))
    with EventLog(events_file) as event_log:
        for event in _eval_events([(5, 0.1, 0.2), (10, 0.3, 0.3)]):
            event_log.append(event)
    runs = {
        'fisher': events_file,
        'plain': _eval_events([(5, 0.1, 0.1), (10, 0.2, 0.2), (15, 0.4, 0.3)]),
    }
    out_dir = str(tmpdir.join('plots'))
    filenames = emit_plots(runs, out_dir)
    assert [os.path.basename(f) for f in filenames] == [
        'miou_city_a.svg',
        'miou_city_b.svg',
        'miou_average.svg',
    ]
    for filename in filenames:
        assert os.path.isfile(filename)
        fisher = _curve_group(filename, 'fisher')
        plain = _curve_group(filename, 'plain')
        assert fisher is not None
        assert plain is not None
        # one marker per evaluation
        assert len(list(fisher.iter(SVG + 'use'))) == 2
        assert len(list(plain.iter(SVG + 'use'))) == 3


def test_emit_plots_is_reproducible(tmpdir):
    """Test that the same events give byte-identical files"""
    runs = {'run': _eval_events([(5, 0.1, 0.2), (10, 0.3, 0.3)])}
    content = []
    for name in ('a', 'b'):
        filenames = emit_plots(runs, str(tmpdir.join(name)))
        with open(filenames[-1], 'rb') as in_fh:
            content.append(in_fh.read())
    assert content[0] == content[1]


def test_emit_plots_invalid(tmpdir):
    """Test that runs without enough evaluations are rejected"""
    with pytest.raises(ContractError) as exc_info:
        emit_plots({}, str(tmpdir))
    assert 'no runs' in str(exc_info.value)
    runs = {
        'good': _eval_events([(5, 0.1, 0.2), (10, 0.3, 0.3)]),
        'short': _eval_events([(5, 0.1, 0.2)]),
    }
    with pytest.raises(ContractError) as exc_info:
        emit_plots(runs, str(tmpdir))
    assert "'short' has 1 evaluation(s)" in str(exc_info.value)
