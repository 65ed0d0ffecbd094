"""Configuration of an experiment.

An :class:`ExperimentConfig` is a tree of dataclasses. It can be stored as
JSON (:func:`save_config`, :func:`load_config`), and modified with dotted
overrides like ``optim.base_lr=0.01`` (:func:`apply_overrides`).

The defaults of :class:`ExperimentConfig` are the hyper-parameters of the
full-scale method (learning rate 2.5e-4, batch size 4, clipping bounds 0.99
and 0.9999 for the Fisher-weighted EMA, 10 placement candidates). These are
tuned for a large pre-trained backbone; :meth:`ExperimentConfig.desk` returns
a configuration that lets the small network of :mod:`mtbridge.segnet` learn
from scratch within minutes on a desktop CPU.

Example:

    >>> config = ExperimentConfig.desk()
    >>> config = apply_overrides(config, ['optim.base_lr=0.02', 'seed=3'])
    >>> config.optim.base_lr, config.seed
    (0.02, 3)
"""
import copy
import json
from dataclasses import asdict, dataclass, field, fields

import glom

from .autodiff import OptimState
from .exceptions import ConfigError
from .fisher_ema import NORM_SCOPES
from .scenes import GeneratorConfig
from .segnet import SegNetConfig


__all__ = [
    'OptimConfig',
    'Toggles',
    'ExperimentConfig',
    'load_config',
    'save_config',
    'apply_overrides',
]


@dataclass
class OptimConfig:
    """Optimizer settings.

    Attributes:
        base_lr (float): Initial learning rate
        momentum (float): SGD momentum
        weight_decay (float): L2 weight decay
        power (float): Exponent of the polynomial learning rate decay
        max_iter (int): Number of training iterations
    """

    base_lr: float = 2.5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    max_iter: int = 20000

    def validate(self):
        """Raise :exc:`.ConfigError` for invalid values."""
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0, not %r" % self.base_lr)
        if not 0 <= self.momentum <= 1:
            raise ConfigError(
                "momentum must be in [0, 1], not %r" % self.momentum
            )
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.power <= 0:
            raise ConfigError("power must be > 0, not %r" % self.power)
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1, not %r" % self.max_iter)

    def state(self):
        """A fresh :class:`.OptimState` with these settings."""
        return OptimState(
            base_lr=self.base_lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            power=self.power,
            max_iter=self.max_iter,
        )


@dataclass
class Toggles:
    """Switches for the components of the training method.

    With all switches off, the target domains are merged into a single
    domain, bridges are built by plain class mixing, and the teacher is
    updated with a plain EMA.

    Attributes:
        cyclic_domains (bool): Visit one target domain per epoch, in cyclic
            order. If False, all target domains are merged.
        fisher_ema (bool): Use Fisher-weighted EMA coefficients for the
            teacher after every domain switch
        context_mix (bool): Choose the placement of the pasted source classes
            by context similarity (:func:`.cgmix`) instead of
            :func:`.classmix`
        unsup_loss (bool): Add the unsupervised loss of the student on the raw
            target scenes against the teacher's pseudo-labels
        conf_weighting (bool): Weight the pseudo-labeled pixels of the
            bridging loss by the teacher's confidence
    """

    cyclic_domains: bool = True
    fisher_ema: bool = True
    context_mix: bool = True
    unsup_loss: bool = False
    conf_weighting: bool = False

    @classmethod
    def all_off(cls):
        """The toggles of the data-combination baseline."""
        return cls(
            cyclic_domains=False,
            fisher_ema=False,
            context_mix=False,
            unsup_loss=False,
            conf_weighting=False,
        )


_SECTIONS = {
    'generator': GeneratorConfig,
    'model': SegNetConfig,
    'optim': OptimConfig,
    'toggles': Toggles,
}


@dataclass
class ExperimentConfig:
    """Complete configuration of a training run.

    Attributes:
        generator (GeneratorConfig): The synthetic benchmark
        model (SegNetConfig): The network architecture
        optim (OptimConfig): The optimizer
        toggles (Toggles): The components of the method
        batch_size (int): Number of source and target scenes per iteration
        lambda1 (float): Lower bound for the Fisher-weighted EMA coefficients
        lambda2 (float): Upper bound for the Fisher-weighted EMA coefficients
        n_aug (int): Number of placement candidates for context-guided mixing
        ema_alpha (float): Coefficient of the plain EMA teacher update
        fisher_max_samples (None or int): Cap on the number of scenes for the
            Fisher information (None for the full training split)
        fisher_norm_scope (str): 'tensor' or 'global', see
            :func:`.normalize_clip`
        mix_sigma (float): Standard deviation of the neighbor ring kernel
        mix_radius (int): Half-width of the neighbor ring kernel
        include_identity (bool): Whether the untransformed source scene is
            one of the placement candidates
        conf_threshold (float): Threshold for the confidence weighting
        seed (int): Seed for model initialization and all sampling
        eval_every (int): Evaluate on the target validation splits every so
            many iterations (0 for only at the end)
        domain_order (None or list[str]): Order in which the target domains
            are visited. Defaults to the order of the benchmark.
    """

    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: SegNetConfig = field(default_factory=SegNetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    toggles: Toggles = field(default_factory=Toggles)
    batch_size: int = 4
    lambda1: float = 0.99
    lambda2: float = 0.9999
    n_aug: int = 10
    ema_alpha: float = 0.999
    fisher_max_samples: int = 256
    fisher_norm_scope: str = 'tensor'
    mix_sigma: float = 1.0
    mix_radius: int = 2
    include_identity: bool = False
    conf_threshold: float = 0.968
    seed: int = 0
    eval_every: int = 1000
    domain_order: list = None

    @classmethod
    def desk(cls):
        """Configuration for a run of a few minutes on a desktop CPU."""
        return cls(
            generator=GeneratorConfig(
                height=32, width=32, train_size=40, val_size=20
            ),
            model=SegNetConfig(channels=(12, 24, 24, 7)),
            optim=OptimConfig(base_lr=0.01, max_iter=1500),
            fisher_max_samples=32,
            eval_every=250,
        )

    def validate(self):
        """Raise :exc:`.ConfigError` for an invalid configuration."""
        self.generator.validate()
        self.model.validate()
        self.optim.validate()
        if self.model.num_classes != self.generator.num_classes:
            raise ConfigError(
                "model.num_classes=%d does not match generator.num_classes=%d"
                % (self.model.num_classes, self.generator.num_classes)
            )
        if self.model.in_channels != 3:
            raise ConfigError("the scenes are RGB images (in_channels=3)")
        if self.batch_size < 1:
            raise ConfigError(
                "batch_size must be >= 1, not %r" % self.batch_size
            )
        if not 0 <= self.lambda1 <= self.lambda2 <= 1:
            raise ConfigError(
                "lambdas must satisfy 0 <= lambda1 <= lambda2 <= 1, not "
                "lambda1=%r, lambda2=%r" % (self.lambda1, self.lambda2)
            )
        if self.n_aug < 1:
            raise ConfigError("n_aug must be >= 1, not %r" % self.n_aug)
        if not 0 <= self.ema_alpha <= 1:
            raise ConfigError(
                "ema_alpha must be in [0, 1], not %r" % self.ema_alpha
            )
        if self.fisher_max_samples is not None and self.fisher_max_samples < 1:
            raise ConfigError("fisher_max_samples must be >= 1 or None")
        if self.fisher_norm_scope not in NORM_SCOPES:
            raise ConfigError(
                "fisher_norm_scope must be one of %s, not %r"
                % (NORM_SCOPES, self.fisher_norm_scope)
            )
        if self.mix_sigma <= 0:
            raise ConfigError("mix_sigma must be > 0")
        if int(self.mix_radius) != self.mix_radius or self.mix_radius < 1:
            raise ConfigError("mix_radius must be an integer >= 1")
        if not 0 <= self.conf_threshold <= 1:
            raise ConfigError("conf_threshold must be in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0, not %r" % self.seed)
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        if self.domain_order is not None:
            order = list(self.domain_order)
            if len(set(order)) != len(order):
                raise ConfigError("duplicate domains in domain_order")
            if len(order) != self.generator.num_targets:
                raise ConfigError(
                    "domain_order %s must list all %d target domains"
                    % (order, self.generator.num_targets)
                )
        return self

    def replace(self, **kwargs):
        """Deep copy with the given top-level attributes replaced."""
        new = copy.deepcopy(self)
        for (name, value) in kwargs.items():
            if name not in _field_names(type(self)):
                raise ConfigError("unknown configuration key %r" % name)
            setattr(new, name, copy.deepcopy(value))
        return new

    def to_dict(self):
        """Nested dict of all values (JSON-serializable)."""
        data = asdict(self)
        data['model'] = self.model.to_dict()
        if self.domain_order is not None:
            data['domain_order'] = list(self.domain_order)
        return data

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict`. Missing keys take default values.

        Raises:
            ConfigError: For unknown keys or invalid values
        """
        data = dict(data)
        _check_keys(cls, data, '')
        kwargs = {}
        for (name, value) in data.items():
            if name in _SECTIONS:
                section_cls = _SECTIONS[name]
                if isinstance(value, section_cls):
                    kwargs[name] = copy.deepcopy(value)
                    continue
                if not isinstance(value, dict):
                    raise ConfigError("section %r must be an object" % name)
                _check_keys(section_cls, value, name + '.')
                if section_cls is SegNetConfig:
                    kwargs[name] = SegNetConfig.from_dict(value)
                else:
                    kwargs[name] = section_cls(**value)
            else:
                kwargs[name] = value
        if kwargs.get('domain_order') is not None:
            kwargs['domain_order'] = [str(d) for d in kwargs['domain_order']]
        return cls(**kwargs).validate()


def _field_names(dataclass_type):
    return [f.name for f in fields(dataclass_type)]


def _check_keys(dataclass_type, data, prefix):
    known = _field_names(dataclass_type)
    unknown = sorted(key for key in data if key not in known)
    if len(unknown) > 0:
        raise ConfigError(
            "unknown configuration key(s): %s"
            % ", ".join(prefix + key for key in unknown)
        )


def load_config(filename):
    """Read an :class:`ExperimentConfig` from a JSON file.

    Raises:
        ConfigError: If the file is not valid JSON or the configuration is
            invalid
    """
    try:
        with open(filename) as in_fh:
            data = json.load(in_fh)
    except json.JSONDecodeError as exc_info:
        raise ConfigError("%s is not valid JSON: %s" % (filename, exc_info))
    if not isinstance(data, dict):
        raise ConfigError("%s must contain a JSON object" % filename)
    return ExperimentConfig.from_dict(data)


def save_config(config, filename):
    """Write `config` to `filename` as JSON."""
    with open(filename, 'w') as out_fh:
        json.dump(config.to_dict(), out_fh, indent=2, sort_keys=True)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Apply dotted ``path=value`` overrides to `config`.

    Values are parsed as JSON if possible (``0.01``, ``true``, ``[1, 2]``,
    ``null``), and used as plain strings otherwise.

    Args:
        config (ExperimentConfig): The base configuration (not modified)
        overrides (list[str]): The overrides

    Returns:
        ExperimentConfig: The modified configuration

    Raises:
        ConfigError: If an override is malformed or names an unknown key
    """
    data = config.to_dict()
    for override in overrides:
        path, sep, text = override.partition('=')
        path = path.strip()
        if sep != '=' or path == '':
            raise ConfigError(
                "override %r must have the form 'path=value'" % override
            )
        try:
            glom.assign(data, path, _parse_value(text.strip()))
        except glom.GlomError as exc_info:
            raise ConfigError(
                "cannot apply override %r: %s" % (override, exc_info)
            )
    return ExperimentConfig.from_dict(data)
