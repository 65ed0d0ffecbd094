r"""The training loop for multi-target domain adaptation.

Every iteration of :func:`train`

1. samples a batch of labeled source scenes and a batch of unlabeled scenes
   from the active target domain,
2. generates pseudo-labels for the target scenes with the teacher model,
3. builds a bridge for every (source, target) pair by pasting half of the
   source classes into the target scene (:func:`.cgmix` or :func:`.classmix`),
4. updates the student by one SGD step on the supervised source loss plus
   the bridging loss (plus, optionally, the unsupervised target loss), and
5. updates the teacher as a moving average of the student, with a plain EMA
   (:func:`.ema_update`) or Fisher-weighted coefficients
   (:class:`.FisherEMA`).

An *epoch* is one full pass over the training split of the active target
domain. After each epoch, the :class:`.DomainSelector` activates the next
target domain, and the Fisher information of the teacher on the domain that
was just completed is recomputed.
"""
import logging
import os
import time

import numpy as np
import threadpoolctl

from .autodiff import Tape, backward, poly_lr, scale, sgd_step
from .domain_selector import DomainSelector
from .evaluation import evaluate
from .exceptions import ConfigError, DataError, NumericalError
from .fisher_ema import FisherEMA
from .info_hooks import chain
from .mean_teacher import (
    TeacherStudent,
    bridging_loss,
    confidence_weights,
    ema_update,
    pseudo_label,
    supervised_loss,
    unsupervised_loss,
)
from .mixing import cgmix, classmix, dump_bridge_triptych, select_classes
from .parallelization import USE_THREADPOOL_LIMITS
from .result import EventLog, RunResult
from .scenes import build_benchmark
from .segnet import init_params, save_checkpoint


__all__ = ['train', 'MERGED_DOMAIN']

MERGED_DOMAIN = 'merged'
"""Domain id reported while training on all target domains at once"""


class _EpochSampler:
    """Batches of ``(domain_id, index)`` items, one shuffled pass per epoch.

    The last batch of an epoch may be smaller than `batch_size`.
    """

    def __init__(self, items, batch_size, rng):
        self.items = list(items)
        self.batch_size = batch_size
        self.rng = rng
        self._order = []
        self._pos = 0

    def next_batch(self):
        """Return ``(batch, epoch_done)``."""
        if self._pos == 0:
            self._order = [
                self.items[i] for i in self.rng.permutation(len(self.items))
            ]
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += len(batch)
        epoch_done = self._pos >= len(self._order)
        if epoch_done:
            self._pos = 0
        return batch, epoch_done


class _WraparoundSampler:
    """Indices into a dataset, reshuffled whenever all have been used."""

    def __init__(self, size, rng):
        self.size = size
        self.rng = rng
        self._order = rng.permutation(size)
        self._pos = 0

    def take(self, count):
        indices = []
        while len(indices) < count:
            if self._pos == self.size:
                self._order = self.rng.permutation(self.size)
                self._pos = 0
            indices.append(int(self._order[self._pos]))
            self._pos += 1
        return indices


def _domain_order(config, benchmark):
    if config.domain_order is None:
        return benchmark.target_ids
    # restricted to the targets of the benchmark
    order = [d for d in config.domain_order if d in benchmark.target_ids]
    if sorted(order) != sorted(benchmark.target_ids):
        raise ConfigError(
            "domain_order %s is not a permutation of the target domains %s"
            % (order, benchmark.target_ids)
        )
    return order


def _check_finite(value, name, iteration):
    if not np.isfinite(value):
        raise NumericalError(
            "non-finite %s loss (%r) in iteration %d"
            % (name, value, iteration)
        )


def _merged_images(benchmark):
    return np.concatenate(
        [benchmark.target_train[d].images for d in benchmark.target_ids]
    )


def train(
    config,
    benchmark=None,
    *,
    targets=None,
    info_hook=None,
    modify_params_after_iter=None,
    check_convergence=None,
    event_log=None,
    checkpoint=None,
    parallel_map=None,
    limit_thread_pool=None,
    bridge_dump_dir=None
):
    """Train a student/teacher pair on a source domain and `K` target domains.

    Args:
        config (ExperimentConfig): The configuration of the run
        benchmark (None or Benchmark): The datasets. If None, a benchmark is
            generated from ``config.generator``.
        targets (None or list[str]): If given, train only on these target
            domains of the benchmark
        info_hook (None or callable): Function that is called after each
            iteration with keyword arguments (see :func:`.print_table`). Its
            return value is stored in :attr:`.RunResult.info_vals`.
        modify_params_after_iter (None or callable): Function that is called
            after each iteration, immediately before `info_hook`, with the
            same arguments. It may modify the student/teacher `pair` or the
            optimizer `state`.
        check_convergence (None or callable): Function that receives the
            :class:`.RunResult` after each iteration and returns a message if
            training should stop. See :mod:`mtbridge.convergence`.
        event_log (None, str, or EventLog): Where to write the events of the
            run. A string is the name of a JSON-lines file.
        checkpoint (None or str): If given, file to which the final teacher
            parameters are written (see :func:`.save_checkpoint`)
        parallel_map (None or callable): Map function for the generation of
            the benchmark, the Fisher information and the evaluation
        limit_thread_pool (None or bool): If True, limit low-level BLAS
            threads to one for the duration of the run. Defaults to
            :obj:`.parallelization.USE_THREADPOOL_LIMITS`.
        bridge_dump_dir (None or str): If given, write the first bridge of
            the first iteration and of every evaluation iteration to this
            directory, as a PGM image of the source, target, and bridge
            label maps

    Returns:
        RunResult: The result of the run, including the final student and
        teacher parameters

    Raises:
        ConfigError: If `config` is invalid
        DataError: If the benchmark does not match the model
        NumericalError: If a loss becomes non-finite
    """
    logger = logging.getLogger('mtbridge')

    # Initialization
    config.validate()
    logger.info("Initializing training run with seed %d", config.seed)
    thread_pool_limiter = None
    if limit_thread_pool is None:
        limit_thread_pool = USE_THREADPOOL_LIMITS
    if limit_thread_pool:
        logger.debug("Setting threadpoolctl.threadpool_limits")
        thread_pool_limiter = threadpoolctl.threadpool_limits(limits=1)
    owns_event_log = False
    try:
        if modify_params_after_iter is not None:
            if info_hook is None:
                info_hook = modify_params_after_iter
            else:
                info_hook = chain(modify_params_after_iter, info_hook)
        if benchmark is None:
            benchmark = build_benchmark(
                config.generator, parallel_map=parallel_map
            )
        if targets is not None:
            benchmark = benchmark.restricted_to(targets)
        if benchmark.num_classes != config.model.num_classes:
            raise DataError(
                "the benchmark has %d classes, the model predicts %d"
                % (benchmark.num_classes, config.model.num_classes)
            )
        if event_log is None or isinstance(event_log, (str, os.PathLike)):
            event_log = EventLog(event_log)
            owns_event_log = True
        if bridge_dump_dir is not None:
            os.makedirs(bridge_dump_dir, exist_ok=True)

        toggles = config.toggles
        order = _domain_order(config, benchmark)
        num_classes = benchmark.num_classes
        rng = np.random.default_rng([config.seed, 1])
        student = init_params(config.model, seed=config.seed)
        pair = TeacherStudent(student, alpha=config.ema_alpha)
        state = config.optim.state()
        max_iter = config.optim.max_iter
        source = benchmark.source_train

        fisher = None
        if toggles.fisher_ema:
            fisher = FisherEMA(
                lambda1=config.lambda1,
                lambda2=config.lambda2,
                scope=config.fisher_norm_scope,
                max_samples=config.fisher_max_samples,
                parallel_map=parallel_map,
            )
        selector = DomainSelector(order)
        if toggles.cyclic_domains:
            samplers = {
                d: _EpochSampler(
                    [(d, i) for i in range(len(benchmark.target_train[d]))],
                    config.batch_size,
                    rng,
                )
                for d in order
            }
        else:
            merged = [
                (d, i)
                for d in order
                for i in range(len(benchmark.target_train[d]))
            ]
            samplers = {
                MERGED_DOMAIN: _EpochSampler(merged, config.batch_size, rng)
            }
        source_sampler = _WraparoundSampler(len(source), rng)

        result = RunResult()
        result.config = config
        result.start_local_time = time.localtime()
        result.student = pair.student
        result.teacher = pair.teacher
        info_hook_static_args = dict(
            pair=pair,
            state=state,
            selector=selector,
            benchmark=benchmark,
            config=config,
            event_log=event_log,
            domain_ids=list(order) + [MERGED_DOMAIN],
            max_iter=max_iter,
        )
        epochs = 0

        def run_eval(iteration):
            reports = evaluate(
                pair.teacher,
                [benchmark.target_val[d] for d in order],
                parallel_map=parallel_map,
            )
            result.eval_reports.append((iteration, reports))
            event_log.append(
                {
                    'event': 'eval',
                    'model': 'teacher',
                    'miou': {r.domain_id: r.miou for r in reports},
                    'pixel_accuracy': {
                        r.domain_id: r.pixel_accuracy for r in reports
                    },
                    'avg_miou': reports[0].avg_miou,
                },
                iteration=iteration,
            )
            logger.info(
                "Evaluation after iteration %d: average target mIoU %.4f",
                iteration,
                reports[0].avg_miou,
            )

        logger.info(
            "Training on %d target domain(s) %s for %d iterations",
            len(order),
            order,
            max_iter,
        )
        iteration = 0
        for iteration in range(1, max_iter + 1):

            tic = time.time()
            if toggles.cyclic_domains:
                domain_id = selector.current_domain
            else:
                domain_id = MERGED_DOMAIN
            target_batch, epoch_done = samplers[domain_id].next_batch()
            source_batch = source_sampler.take(len(target_batch))
            lr = poly_lr(iteration - 1, state)
            n_batch = len(target_batch)
            terms = {'sup': 0.0, 'brg': 0.0, 'unsup': 0.0}
            chosen = []
            for (k, (i_s, (d_t, i_t))) in enumerate(
                zip(source_batch, target_batch)
            ):
                x_s, y_s = source.image(i_s), source.label(i_s)
                x_t = benchmark.target_train[d_t].image(i_t)
                pseudo = pseudo_label(pair.teacher, x_t)
                classes = select_classes(y_s, rng)
                if toggles.context_mix:
                    bridge = cgmix(
                        x_s,
                        y_s,
                        x_t,
                        pseudo.label,
                        classes,
                        n_aug=config.n_aug,
                        sigma=config.mix_sigma,
                        radius=config.mix_radius,
                        rng=rng,
                        num_classes=num_classes,
                        include_identity=config.include_identity,
                    )
                    chosen.append(bridge.chosen_candidate)
                else:
                    bridge = classmix(x_s, y_s, x_t, pseudo.label, classes)
                weights = None
                if toggles.conf_weighting:
                    weights = confidence_weights(
                        bridge.mask, pseudo.confidence, config.conf_threshold
                    )
                if bridge_dump_dir is not None and k == 0:
                    if iteration == 1 or (
                        config.eval_every > 0
                        and iteration % config.eval_every == 0
                    ):
                        dump_bridge_triptych(
                            os.path.join(
                                bridge_dump_dir, "bridge_%06d.pgm" % iteration
                            ),
                            y_s,
                            pseudo.label,
                            bridge,
                            num_classes,
                        )
                with Tape():
                    l_sup = supervised_loss(pair.student, x_s, y_s)
                    l_brg = bridging_loss(pair.student, bridge, weights)
                    sample_loss = l_sup + l_brg
                    _check_finite(l_sup.item(), 'supervised', iteration)
                    _check_finite(l_brg.item(), 'bridging', iteration)
                    terms['sup'] += l_sup.item() / n_batch
                    terms['brg'] += l_brg.item() / n_batch
                    if toggles.unsup_loss:
                        l_unsup = unsupervised_loss(pair.student, x_t, pseudo)
                        _check_finite(
                            l_unsup.item(), 'unsupervised', iteration
                        )
                        terms['unsup'] += l_unsup.item() / n_batch
                        sample_loss = sample_loss + l_unsup
                    backward(scale(sample_loss, 1.0 / n_batch))
            sgd_step(pair.student, state, lr)
            if fisher is None:
                ema_update(pair)
            else:
                fisher.update(pair)
            losses = {
                'sup': terms['sup'],
                'brg': terms['brg'],
                'unsup': terms['unsup'] if toggles.unsup_loss else None,
            }
            losses['total'] = terms['sup'] + terms['brg'] + terms['unsup']
            event = {
                'event': 'iteration',
                'domain': domain_id,
                'lr': lr,
                'batch': n_batch,
                'loss_sup': losses['sup'],
                'loss_brg': losses['brg'],
                'loss_unsup': losses['unsup'],
                'loss_total': losses['total'],
            }
            if toggles.context_mix:
                event['chosen_candidates'] = chosen
            event_log.append(event, iteration=iteration)
            logger.debug(
                "Iteration %d on %s: loss %.6f", iteration, domain_id,
                losses['total'],
            )

            if epoch_done:
                epochs += 1
                if toggles.cyclic_domains:
                    switch = selector.on_epoch_complete()
                    event_log.append(switch, iteration=iteration)
                    logger.info(
                        "Completed epoch %d on %s; switching to %s",
                        switch['epoch'],
                        switch['from'],
                        switch['to'],
                    )
                    completed = switch['from']
                    completed_images = benchmark.target_train[completed]
                else:
                    event_log.append(
                        {'event': 'epoch_complete', 'epoch': epochs},
                        iteration=iteration,
                    )
                    logger.info("Completed epoch %d on merged targets", epochs)
                    completed = MERGED_DOMAIN
                    completed_images = _merged_images(benchmark)
                if fisher is not None:
                    fisher_event = fisher.refresh(
                        pair.teacher, completed_images, completed
                    )
                    event_log.append(fisher_event, iteration=iteration)

            evaluated = False
            if config.eval_every > 0 and iteration % config.eval_every == 0:
                run_eval(iteration)
                evaluated = True

            toc = time.time()

            # Display information about iteration
            info = None
            if info_hook is not None:
                info = info_hook(
                    iteration=iteration,
                    domain_id=domain_id,
                    losses=losses,
                    lr=lr,
                    start_time=tic,
                    stop_time=toc,
                    info_vals=result.info_vals,
                    shared_data={},
                    **info_hook_static_args,
                )
            # Update `result` with info from finished iteration
            result.iters.append(iteration)
            result.iter_seconds.append(int(toc - tic))
            result.losses.append(losses)
            if info is not None:
                result.info_vals.append(info)

            # Convergence check
            msg = None
            if check_convergence is not None:
                msg = check_convergence(result)
            if iteration >= info_hook_static_args['max_iter']:
                result.message = "Reached %d iterations" % iteration
                break
            if bool(msg) is True:
                result.message = "Reached convergence"
                if isinstance(msg, str):
                    result.message += ": " + msg
                break

        # Finalize
        if not evaluated:
            run_eval(iteration)
        event_log.append(
            {
                'event': 'run_finished',
                'message': result.message,
                'epochs': epochs,
                'teacher_updates': pair.teacher_updates,
                'avg_miou': result.final_avg_miou,
            },
            iteration=iteration,
        )
        result.events = list(event_log.events)
        if checkpoint is not None:
            save_checkpoint(checkpoint, pair.teacher, config.model, iteration)
            logger.info("Wrote teacher checkpoint %s", checkpoint)
        result.end_local_time = time.localtime()
        logger.info("Finished training run: %s", result.message)
    finally:
        if owns_event_log:
            event_log.close()
        if thread_pool_limiter is not None:
            logger.debug("Unsetting threadpoolctl.threadpool_limits")
            thread_pool_limiter.unregister()
    return result
