"""Module defining the :class:`RunResult` object that is returned by
:func:`.train`, and the :class:`EventLog` of a training run.
"""
import datetime
import json
import logging
import pickle
import time
from textwrap import dedent

import numpy as np

from .exceptions import ContractError, DataError


__all__ = ['RunResult', 'EventLog', 'read_events']


class RunResult:
    """Result of a training run with :func:`.train`.

    Attributes:
        config (ExperimentConfig): The configuration of the run
        iters (list[int]): Iteration numbers, starting at 1
        iter_seconds (list[int]): For each iteration, the number of seconds
            spent in that iteration
        info_vals (list): For each iteration, the return value of `info_hook`,
            or None
        losses (list[dict]): For each iteration, the loss terms ('sup',
            'brg', 'unsup', 'total')
        events (list[dict]): All events written to the :class:`EventLog`
        eval_reports (list[tuple]): For every evaluation, a tuple
            ``(iteration, reports)`` where `reports` is a list of
            :class:`.EvalReport` instances, one per target domain
        student (ParamSet): The final student parameters
        teacher (ParamSet): The final teacher parameters
        start_local_time (time.struct_time): Time stamp of when the training
            started
        end_local_time (time.struct_time): Time stamp of when the training
            ended
        message (str): Description of why :func:`.train` completed, e.g.,
            "Reached 2000 iterations"
    """

    time_fmt = "%Y-%m-%d %H:%M:%S"
    """Format used in :attr:`start_local_time_str` and
    :attr:`end_local_time_str`
    """

    def __init__(self):
        self.config = None
        self.iters = []
        self.iter_seconds = []
        self.info_vals = []
        self.losses = []
        self.events = []
        self.eval_reports = []
        self.student = None
        self.teacher = None
        self.start_local_time = None
        self.end_local_time = None
        self.message = ''

    def __str__(self):
        if self.start_local_time is None or self.end_local_time is None:
            time_delta = 'n/a'
        else:
            time_delta = str(
                datetime.timedelta(
                    seconds=time.mktime(self.end_local_time)
                    - time.mktime(self.start_local_time)
                )
            )
        final = self.final_avg_miou
        return dedent(
            r'''
        Training Run Result
        -------------------
        - Started at {start_local_time}
        - Number of iterations: {n_iters}
        - Number of evaluations: {n_evals}
        - Final average target mIoU: {final}
        - Reason for termination: {message}
        - Ended at {end_local_time} ({time_delta})
        '''.format(
                start_local_time=self.start_local_time_str,
                n_iters=len(self.iters),
                n_evals=len(self.eval_reports),
                final='n/a' if final is None else "%.4f" % final,
                message=self.message,
                end_local_time=self.end_local_time_str,
                time_delta=time_delta,
            )
        ).strip()

    def __repr__(self):
        return self.__str__()

    @property
    def start_local_time_str(self):
        """The :attr:`start_local_time` attribute formatted as a string"""
        if self.start_local_time is not None:
            return time.strftime(self.time_fmt, self.start_local_time)
        else:
            return 'n/a'

    @property
    def end_local_time_str(self):
        """The :attr:`end_local_time` attribute formatted as a string"""
        if self.end_local_time is not None:
            return time.strftime(self.time_fmt, self.end_local_time)
        else:
            return 'n/a'

    @property
    def final_reports(self):
        """list[EvalReport]: The reports of the last evaluation (empty list
        if there was no evaluation)"""
        if len(self.eval_reports) == 0:
            return []
        return self.eval_reports[-1][1]

    @property
    def final_avg_miou(self):
        """None or float: Average target mIoU of the last evaluation"""
        reports = self.final_reports
        if len(reports) == 0:
            return None
        return float(np.mean([r.miou for r in reports]))

    @classmethod
    def load(cls, filename):
        """Construct :class:`RunResult` object from a :meth:`dump` file

        Args:
            filename (str): The file from which to load the
                :class:`RunResult`. Must be in the format created by
                :meth:`dump`.

        Returns:
            RunResult: The :class:`RunResult` instance loaded from `filename`
        """
        logger = logging.getLogger('mtbridge')
        with open(filename, 'rb') as dump_fh:
            result = pickle.load(dump_fh)
        if result.student is not None and result.teacher is not None:
            if not result.student.is_congruent(result.teacher):
                logger.error(
                    "RunResult.teacher is incongruent with RunResult.student"
                )
        if len(result.iters) != len(result.losses):
            logger.warning(
                "RunResult.losses are incomplete (%d losses for %d "
                "iterations)",
                len(result.losses),
                len(result.iters),
            )
        return result

    def dump(self, filename):
        """Dump the :class:`RunResult` to a binary :mod:`pickle` file.

        The original :class:`RunResult` object can be restored from the
        resulting file using :meth:`load`.

        Args:
            filename (str): Name of file to which to dump the
                :class:`RunResult`.
        """
        with open(filename, 'wb') as dump_fh:
            pickle.dump(self, dump_fh)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError("%r is not JSON serializable" % (value,))


class EventLog:
    """Append-only log of the events of a training run, as JSON lines.

    Every event is a dict with an 'event' kind and an 'iteration'. The
    iterations of consecutive events must not decrease.

    Args:
        path (None or str): If given, name of a file to which every event is
            written as one line of JSON (overwriting an existing file). If
            None, the events are only kept in memory.

    Attributes:
        events (list[dict]): All events, in order
    """

    def __init__(self, path=None):
        self.path = path
        self.events = []
        self._fh = None
        if path is not None:
            self._fh = open(path, 'w')

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __len__(self):
        return len(self.events)

    def __repr__(self):
        return "EventLog(%r, %d events)" % (self.path, len(self.events))

    @property
    def last_iteration(self):
        """int: Iteration of the most recent event (0 if there is none)"""
        if len(self.events) == 0:
            return 0
        return self.events[-1]['iteration']

    def append(self, event, iteration=None):
        """Append `event`.

        Args:
            event (dict): The event. Must have an 'event' key.
            iteration (None or int): If given, stored as the event's
                'iteration'. Otherwise, the event must already contain it.

        Returns:
            dict: The appended event

        Raises:
            ContractError: If the event has no kind or no iteration, or if the
                iteration is smaller than that of the previous event
        """
        event = dict(event)
        if iteration is not None:
            event['iteration'] = int(iteration)
        if 'event' not in event or 'iteration' not in event:
            raise ContractError(
                "every event requires an 'event' kind and an 'iteration'"
            )
        if event['iteration'] < self.last_iteration:
            raise ContractError(
                "event iteration %d precedes the previous iteration %d"
                % (event['iteration'], self.last_iteration)
            )
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(
                json.dumps(event, sort_keys=True, default=_json_default)
            )
            self._fh.write("\n")
            self._fh.flush()
        return event

    def of_kind(self, kind):
        """List of all events of the given kind."""
        return [e for e in self.events if e['event'] == kind]

    def close(self):
        """Close the underlying file (if any)."""
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_events(path):
    """Read all events from a JSON-lines file written by :class:`EventLog`.

    Raises:
        DataError: If a line is not a valid JSON object
    """
    events = []
    with open(path) as in_fh:
        for (lineno, line) in enumerate(in_fh, start=1):
            if line.strip() == '':
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc_info:
                raise DataError(
                    "%s:%d: invalid event: %s" % (path, lineno, exc_info)
                )
            if not isinstance(event, dict) or 'event' not in event:
                raise DataError("%s:%d: invalid event" % (path, lineno))
            events.append(event)
    return events
