"""Stopping criteria for the `check_convergence` argument of :func:`.train`

After every iteration, :func:`.train` passes the :class:`.RunResult` of the
run so far to `check_convergence`. At that point, the result already holds
the losses of the iteration, the return value of the `info_hook`, and the
reports of an evaluation that happened in the iteration. The criterion must
only read the result; changes to the run belong in
`modify_params_after_iter`.

A criterion returns None to let the run continue. Any other value stops the
run, and a string is appended to :attr:`.RunResult.message`. The criteria in
this module extract the value they check with a :func:`~glom.glom` spec (or
any callable that takes the :class:`.RunResult`). By default, that is the
total loss of the last iteration. Several criteria are combined with
:func:`Or`. The command line options ``--stop-loss``, ``--stop-delta``,
``--stop-miou``, and ``--dump`` of ``mtbridge train`` are built from them.

:func:`dump_result` never stops a run on its own: it writes the
:class:`.RunResult` to disk every so many iterations.
"""
import operator

import glom

from .exceptions import ConfigError


__all__ = [
    'TOTAL_LOSS',
    'Or',
    'value_below',
    'value_above',
    'delta_below',
    'avg_miou_above',
    'dump_result',
]

TOTAL_LOSS = ('losses', glom.T[-1], 'total')
"""glom spec for the total loss of the most recent iteration"""

_PREVIOUS_TOTAL_LOSS = ('losses', glom.T[-2], 'total')

_MISSING = (AttributeError, KeyError, IndexError, glom.GlomError)


def Or(*funcs):
    """Combine `check_convergence` criteria.

    The combined criterion calls the criteria in order and returns the first
    value that is true in a Boolean context, or None. Criteria after a
    stopping one are not called, so a :func:`dump_result` belongs at the
    front.
    """

    def check_convergence(result):
        for func in funcs:
            msg = func(result)
            if msg:
                return msg
        return None

    return check_convergence


def _extract(result, spec, kwargs):
    if callable(spec) and not isinstance(spec, type(glom.T)):
        return spec(result)
    return glom.glom(result, spec, **kwargs)


def _threshold(limit, spec, name, compare, symbol, kwargs):
    # `limit` may be a string so that the message shows it as given
    threshold = float(limit)
    if name is None:
        name = str(spec)

    def check_convergence(result):
        try:
            value = _extract(result, spec, kwargs)
        except _MISSING:
            return None
        if value is not None and compare(value, threshold):
            return "%s %s %s" % (name, symbol, limit)
        return None

    return check_convergence


def value_below(limit, spec=TOTAL_LOSS, name=None, **kwargs):
    """Criterion that stops once a value drops below `limit`.

    Args:
        limit (float or str): The threshold
        spec: glom spec for the value in the :class:`.RunResult`, or a
            callable that receives the :class:`.RunResult`. Defaults to
            :obj:`TOTAL_LOSS`.
        name (None or str): Name of the value in the message. Defaults to
            ``str(spec)``.
        **kwargs: Passed to :func:`~glom.glom`

    As long as the value cannot be extracted (e.g. before the first
    iteration), the criterion returns None.

    Example:

        >>> check_convergence = value_below('0.05', name='loss')
        >>> r = mtbridge.result.RunResult()
        >>> check_convergence(r)  # no losses yet
        >>> r.losses.append({'total': 0.2})
        >>> check_convergence(r)  # still above
        >>> r.losses.append({'total': 0.01})
        >>> check_convergence(r)
        'loss < 0.05'
    """
    return _threshold(limit, spec, name, operator.lt, '<', kwargs)


def value_above(limit, spec=TOTAL_LOSS, name=None, **kwargs):
    """Criterion that stops once a value exceeds `limit`.

    See :func:`value_below` for the arguments.

    Example:

        >>> check_convergence = value_above(
        ...     '0.9', spec=lambda r: r.info_vals[-1], name='score'
        ... )
        >>> r = mtbridge.result.RunResult()
        >>> r.info_vals.append(0.5)
        >>> check_convergence(r)  # below the limit
        >>> r.info_vals.append(0.95)
        >>> check_convergence(r)
        'score > 0.9'
    """
    return _threshold(limit, spec, name, operator.gt, '>', kwargs)


def delta_below(
    limit,
    spec1=TOTAL_LOSS,
    spec0=_PREVIOUS_TOTAL_LOSS,
    absolute_value=True,
    name=None,
    **kwargs
):
    """Criterion that stops once the change between two values is smaller
    than `limit`.

    Args:
        limit (float or str): The threshold for ``v1 - v0``
        spec1: glom spec (or callable) for the newer value `v1`. Defaults to
            the total loss of the last iteration.
        spec0: glom spec (or callable) for the older value `v0`. Defaults to
            the total loss of the iteration before.
        absolute_value (bool): Whether to compare ``|v1 - v0|`` instead of
            the signed difference
        name (None or str): Name of the change in the message
        **kwargs: Passed to :func:`~glom.glom`

    While only one of the two values is available, the criterion returns
    None. If neither is, the error of the extraction is raised, since the
    specs are then most likely wrong.

    Example:

        >>> check_convergence = delta_below('1e-3', name='Δloss')
        >>> r = mtbridge.result.RunResult()
        >>> r.losses.append({'total': 0.9})
        >>> check_convergence(r)  # only one iteration
        >>> r.losses.append({'total': 0.5})
        >>> check_convergence(r)
        >>> r.losses.append({'total': 0.5001})
        >>> check_convergence(r)
        'Δloss < 1e-3'
    """
    threshold = float(limit)
    if name is None:
        name = "Δ(%s,%s)" % (spec1, spec0)

    def check_convergence(result):
        values = []
        errors = []
        for spec in (spec1, spec0):
            try:
                values.append(_extract(result, spec, kwargs))
            except _MISSING as exc_info:
                values.append(None)
                errors.append(exc_info)
        if len(errors) == 2:
            raise errors[0]
        if len(errors) == 1:
            return None
        delta = values[0] - values[1]
        if absolute_value:
            delta = abs(delta)
        if delta < threshold:
            return "%s < %s" % (name, limit)
        return None

    return check_convergence


def avg_miou_above(limit):
    """Criterion that stops once the most recent evaluation has an average
    target mIoU above `limit`.

    Example:

        >>> from mtbridge.metrics import EvalReport
        >>> check_convergence = avg_miou_above('0.8')
        >>> r = mtbridge.result.RunResult()
        >>> check_convergence(r)  # no evaluation yet
        >>> report = EvalReport('city_a', [0.9], [True], 0.9, 0.9, 0.9)
        >>> r.eval_reports.append((100, [report]))
        >>> check_convergence(r)
        'Avg. mIoU > 0.8'
    """
    return value_above(
        limit, spec=lambda r: r.final_avg_miou, name='Avg. mIoU'
    )


def dump_result(filename, every=10):
    """Criterion that writes the :class:`.RunResult` to `filename` in every
    iteration that is a multiple of `every`.

    The dump (see :meth:`.RunResult.dump`) keeps the state of a long run in
    case it is interrupted. `filename` may contain an ``{iter}`` field that
    is filled in with :meth:`str.format`, e.g. ``'run_{iter:06d}.dump'``;
    otherwise every dump overwrites the previous one. A dump that cannot be
    written stops the run.

    Raises:
        ConfigError: If `every` is not positive

    Example:

        >>> check_convergence = dump_result('run_{iter:06d}.dump', every=500)
    """
    every = int(every)
    if every <= 0:
        raise ConfigError("every must be > 0, not %r" % every)

    def check_convergence(result):
        iteration = result.iters[-1]
        if iteration % every != 0:
            return None
        outfile = filename.format(iter=iteration)
        try:
            result.dump(outfile)
        except OSError as exc_info:
            return "Could not store %s: %s" % (outfile, exc_info)
        return None

    return check_convergence
