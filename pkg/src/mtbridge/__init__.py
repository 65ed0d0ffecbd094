"""The main function exposed here is :func:`.train`.

It adapts a small segmentation network from a labeled source domain to
several unlabeled target domains at once, with a student/teacher pair of
models. The target domains are visited one per epoch
(:class:`.DomainSelector`), the teacher follows the student with
Fisher-weighted moving-average coefficients (:class:`.FisherEMA`), and the
student learns from bridges that paste source classes into target scenes at
the most plausible location (:func:`.cgmix`).

The submodules contain the building blocks: a small reverse-mode autodiff
engine, a generator for synthetic benchmarks of labeled scenes, the network,
the mixing routines, metrics, and runners for comparative experiments.
"""
# fmt: off

__version__ = '0.1.0+dev'

# expose submodules for easy import
from . import (
    autodiff,
    config,
    convergence,
    domain_selector,
    evaluation,
    exceptions,
    experiments,
    fileformat,
    fisher_ema,
    info_hooks,
    mean_teacher,
    metrics,
    mixing,
    parallelization,
    plotting,
    result,
    scenes,
    segnet,
)
# expose primary classes/functions
from .config import ExperimentConfig
from .evaluation import evaluate
from .result import RunResult
from .scenes import build_benchmark
from .train import train


__all__ = [
    'ExperimentConfig',
    'RunResult',
    'build_benchmark',
    'evaluate',
    'train',
]
