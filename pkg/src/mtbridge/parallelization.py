r"""Support routines for running independent per-sample work in parallel.

Three parts of an experiment consist of many independent tasks:

1. Generating the scenes of a synthetic benchmark
   (:func:`.build_benchmark`). Every scene has its own fixed seed.

2. Evaluating a model on a validation split (:func:`.evaluation.evaluate`):
   one confusion matrix per image, summed afterwards.

3. Accumulating the Fisher information of the teacher model
   (:func:`.fisher_ema.compute_fisher`): one squared gradient per image,
   summed afterwards.

All of these routines take a `parallel_map` argument. If not given,
:func:`serial_map` is used. Any alternative "map" must have the same interface
as :func:`serial_map`, and must return the results in the order of the input
values. Since the results are always reduced in that order, parallel execution
yields bit-identical results to serial execution.

The training loop itself is strictly sequential: every iteration depends on
the parameters produced by the previous one.

On Linux, subprocesses are "forked" and inherit the data of the parent process
without any explicit inter-process communication. On other platforms, most
notably Windows and macOS, subprocesses are "spawned" instead, and all data
must be transferred by :mod:`pickle`. The third-party :mod:`loky` library
provides an alternative implementation that can serialize a wider range of
objects. You may use :func:`set_parallelization` to choose between the two.
"""
import contextlib
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from functools import partial

from threadpoolctl import threadpool_limits


try:

    import loky
    from loky import get_reusable_executor as LokyReusableExecutor

    _HAS_LOKY = True

except ImportError:

    _HAS_LOKY = False

USE_LOKY = False
"""Whether to use :mod:`loky` instead of :mod:`multiprocessing`.

Set by :func:`set_parallelization`.
"""

USE_THREADPOOL_LIMITS = True
"""Whether to limit the number of low-level BLAS/OpenMP threads.

When using multi-process parallelization, *nested parallelization* must be
avoided: low-level numerical routines in :mod:`numpy` should not be allowed
to use multiple threads inside the worker processes. This would lead to
over-subscribing CPUs.

If True, threadpoolctl_ is used to eliminate any nested threads. The training
loop in :func:`.train` also uses this value as the default for its
`limit_thread_pool` argument; single-threaded BLAS makes floating point
reductions independent of the machine load.

Set by :func:`set_parallelization`.

.. _threadpoolctl: https://github.com/joblib/threadpoolctl
"""


__all__ = ['set_parallelization', 'parallel_map', 'serial_map']


@contextlib.contextmanager
def _no_threadpool_limits(*args, **kwargs):  # pragma: nocover
    """No-op replacement for :func:`threadpool_limits`."""
    yield None


def set_parallelization(
    use_loky=False,
    start_method=None,
    loky_pickler=None,
    use_threadpool_limits=True,
):  # pragma: nocover
    """Configure multi-process parallelization.

    Args:
        use_loky (bool): Value for :obj:`USE_LOKY`.
        start_method (None or str): One of 'fork', 'spawn', and 'forkserver',
            see :func:`multiprocessing.set_start_method`. If ``use_loky=True``,
            also 'loky' and 'loky_int_main', see :mod:`loky`. If None, a
            platform-dependent default is used.
        loky_pickler (None or str): Serialization module to use for
            :mod:`loky`. One of 'cloudpickle', 'pickle'.
        use_threadpool_limits (bool): Value for :obj:`USE_THREADPOOL_LIMITS`.

    Raises:
        ImportError: if ``use_loky=True`` but :mod:`loky` is not installed.
        ValueError: if `start_method` is invalid

    Warning:
        This function should only be called once per script, at its very
        beginning.
    """
    global USE_LOKY
    global USE_THREADPOOL_LIMITS
    start_methods = ['fork', 'spawn', 'forkserver']
    if use_loky:
        start_methods.extend(['loky', 'loky_int_main'])
    if start_method is not None:
        if start_method not in start_methods:
            raise ValueError("start_method not in %s" % str(start_methods))
    USE_THREADPOOL_LIMITS = bool(use_threadpool_limits)
    if use_loky:
        if not _HAS_LOKY:
            raise ImportError("The loky library is not installed.")
        USE_LOKY = True
        loky.backend.context.set_start_method(start_method)
        if loky_pickler is not None:
            loky.set_loky_pickler(loky_pickler)
    else:
        USE_LOKY = False
        if start_method is not None:
            multiprocessing.set_start_method(start_method, force=True)


def serial_map(task, values, task_args=None, task_kwargs=None, **kwargs):
    """Map function `task` onto `values`, in serial.

    Calls ``task(value, *task_args, **task_kwargs)`` for every value.

    Args:
        task (callable): The function to apply
        values (list): The values to map over
        task_args (None or tuple): Additional positional arguments
        task_kwargs (None or dict): Additional keyword arguments
        **kwargs: Ignored (for interface compatibility with
            :func:`parallel_map`, e.g. `num_cpus`)

    Returns:
        list: The results, in the order of `values`

    Example:

        >>> serial_map(pow, [1, 2, 3], task_args=(2,))
        [1, 4, 9]
    """
    if task_args is None:
        task_args = ()
    if task_kwargs is None:
        task_kwargs = {}
    return [task(value, *task_args, **task_kwargs) for value in values]


def parallel_map(
    task, values, task_args=None, task_kwargs=None, num_cpus=None
):
    """Map function `task` onto `values`, in parallel.

    The interface is identical to :func:`serial_map`, with the additional
    `num_cpus` argument (defaults to all CPUs). The backend is either
    :mod:`multiprocessing` or :mod:`loky` (see :func:`set_parallelization`).
    Low-level threads inside the worker processes are eliminated according to
    :obj:`USE_THREADPOOL_LIMITS`. The `task` must be picklable, i.e., defined
    at the top level of a module.
    """
    if task_args is None:
        task_args = ()
    if task_kwargs is None:
        task_kwargs = {}

    if num_cpus is None:
        num_cpus = multiprocessing.cpu_count()

    if USE_LOKY:
        Executor = LokyReusableExecutor
        if USE_THREADPOOL_LIMITS:
            Executor = partial(
                LokyReusableExecutor,
                initializer=_process_threadpool_limits_initializer,
            )
    else:
        Executor = ProcessPoolExecutor

    _threadpool_limits = _no_threadpool_limits
    if USE_THREADPOOL_LIMITS:
        _threadpool_limits = threadpool_limits

    with _threadpool_limits(limits=1):
        with Executor(max_workers=num_cpus) as executor:
            jobs = []
            for value in values:
                args = (value,) + tuple(task_args)
                jobs.append(executor.submit(task, *args, **task_kwargs))
            res = [job.result() for job in jobs]

    return res


def _process_threadpool_limits_initializer():
    """Initializer for settings threadpool limits.

    This is an initializer for :mod:`loky` Executors that deactivates threads
    in the spawned sub-processes.
    """
    import numpy  # noqa: F401  (required for loky's autodetection)
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=1)
