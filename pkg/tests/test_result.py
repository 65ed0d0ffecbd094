"""Tests of mtbridge.result"""
import json
import logging

import numpy as np
import pytest

from mtbridge.exceptions import ContractError, DataError
from mtbridge.result import EventLog, RunResult, read_events
from mtbridge.segnet import SegNetConfig, clone_params, init_params
from mtbridge.train import train
from test_scenes import tiny_benchmark, tiny_generator_config  # noqa: F401
from test_train import tiny_config  # noqa: F401


def test_dump_load(tiny_config, tiny_benchmark, tmpdir):  # noqa: F811
    """Test load/dump of RunResult"""
    result = train(tiny_config, tiny_benchmark, limit_thread_pool=False)
    dumpfile = str(tmpdir.join('run.dump'))
    result.dump(dumpfile)
    result2 = RunResult.load(dumpfile)
    assert result2.iters == result.iters
    assert result2.losses == result.losses
    assert result2.events == result.events
    assert result2.message == result.message
    assert result2.config == result.config
    assert np.array_equal(result2.teacher.flat(), result.teacher.flat())
    assert np.array_equal(result2.student.flat(), result.student.flat())
    assert result2.final_avg_miou == result.final_avg_miou
    assert str(result2) == str(result)


def test_serialization_broken(tmpdir, caplog):
    """Test the log messages for inconsistent dump files"""
    result = RunResult()
    result.student = init_params(SegNetConfig(channels=(2,), num_classes=2))
    other = init_params(SegNetConfig(channels=(3,), num_classes=3))
    result.teacher = clone_params(other, trainable=False)
    result.iters = [1, 2]
    result.losses = [{'total': 1.0}]
    dumpfile = str(tmpdir.join('broken.dump'))
    result.dump(dumpfile)
    with caplog.at_level(logging.WARNING):
        RunResult.load(dumpfile)
    assert "incongruent" in caplog.text
    assert "losses are incomplete (1 losses for 2 iterations)" in caplog.text


def test_empty_result():
    """Test the string representation of a result without any iterations"""
    result = RunResult()
    assert result.final_reports == []
    assert result.final_avg_miou is None
    text = str(result)
    assert "Started at n/a" in text
    assert "Final average target mIoU: n/a" in text


def test_event_log(tmpdir):
    """Test writing and reading an event log"""
    filename = str(tmpdir.join('events.jsonl'))
    with EventLog(filename) as event_log:
        event_log.append({'event': 'iteration', 'loss': np.float64(0.5)}, 1)
        event_log.append(
            {
                'event': 'eval',
                'iteration': 1,
                'classes': frozenset([2, 0]),
                'hist': np.array([0.25, 0.75]),
                'count': np.int64(3),
            }
        )
        event_log.append({'event': 'iteration'}, iteration=2)
        assert event_log.last_iteration == 2
        assert len(event_log.of_kind('iteration')) == 2
        with pytest.raises(ContractError):
            event_log.append({'event': 'iteration'}, iteration=1)
        with pytest.raises(ContractError):
            event_log.append({'iteration': 3})
        with pytest.raises(ContractError):
            event_log.append({'event': 'iteration'})
    assert len(event_log) == 3
    events = read_events(filename)
    assert events == [
        {'event': 'iteration', 'iteration': 1, 'loss': 0.5},
        {
            'event': 'eval',
            'iteration': 1,
            'classes': [0, 2],
            'hist': [0.25, 0.75],
            'count': 3,
        },
        {'event': 'iteration', 'iteration': 2},
    ]


def test_in_memory_event_log():
    """Test an event log without a file"""
    event_log = EventLog()
    assert event_log.last_iteration == 0
    event = event_log.append({'event': 'note'}, iteration=np.int64(4))
    assert event == {'event': 'note', 'iteration': 4}
    assert event_log.events == [event]
    event_log.close()


def test_read_invalid_events(tmpdir):
    """Test that malformed event files are rejected"""
    filename = tmpdir.join('events.jsonl')
    filename.write('{"event": "iteration", "iteration": 1}\n\n{"event": \n')
    with pytest.raises(DataError) as exc_info:
        read_events(str(filename))
    assert ':3: invalid event' in str(exc_info.value)
    filename.write(json.dumps([1, 2]) + "\n")
    with pytest.raises(DataError):
        read_events(str(filename))
    filename.write(json.dumps({'iteration': 1}) + "\n")
    with pytest.raises(DataError):
        read_events(str(filename))
