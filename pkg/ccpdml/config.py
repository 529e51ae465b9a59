"""
config.py — Experiment configuration for ccpdml

Experiments are described by flat text files of ``key = value`` lines with
dotted section keys::

    # CCP on 10 synthetic classes
    extends = synth
    mode = ccp
    ccp.lambda = 2e-4
    ccp.proxies_per_class = 4
    loss.kind = contrastive_c1
    loss.margin = 0.5

``#`` starts a comment. ``extends = <preset>`` layers the file over one of
the packaged presets (see :mod:`ccpdml.loads`). Every value is validated
before any computation; failures raise :class:`~ccpdml.errors.ConfigError`
naming the offending key.

Features provided:

- Typed configuration sections (DataConfig, NetworkConfig, OptimizerConfig,
  SamplerSettings, CCPSettings, EvalConfig) and the ExperimentConfig tree
- Parsing from text, files, presets and dotted-key mappings
  (parse_text, load_config, config_from_items)
- Canonical dotted-key mapping and text dump (config_items, dump_config)
- Dataset-dependent checks run before training (check_dataset)
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .loads import load_preset
from .losses import LossSpec

log = logging.getLogger(__name__)

MODES = ("baseline_proxy", "ccp", "sample_based")
SOURCES = ("synth", "mnist")
PRESET_PREFIX = "preset:"


def _require(ok, key, message):
    if not ok:
        raise ConfigError(message, key=key)


# ================================================================
# Sections
# ================================================================

@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    mnist_dir: str = ""
    n_classes: int = 10
    per_class: int = 60
    test_per_class: int = 30
    input_dim: int = 16
    spread: float = 0.25
    val_fraction: float = 1.0 / 3.0
    max_eval_samples: int = 2000
    augment: bool = False

    def __post_init__(self):
        _require(self.source in SOURCES, "data.source", f"must be one of {SOURCES}, got {self.source!r}")
        _require(self.source != "mnist" or self.mnist_dir, "data.mnist_dir", "required when data.source = mnist")
        _require(self.n_classes >= 2, "data.n_classes", f"must be at least 2, got {self.n_classes}")
        _require(self.per_class >= 2, "data.per_class", f"must be at least 2, got {self.per_class}")
        _require(self.test_per_class >= 0, "data.test_per_class", "must be non-negative")
        _require(self.input_dim >= 1, "data.input_dim", "must be positive")
        _require(self.spread >= 0, "data.spread", "must be non-negative")
        _require(0.0 < self.val_fraction < 1.0, "data.val_fraction", "must lie in (0, 1)")
        _require(self.max_eval_samples >= 2, "data.max_eval_samples", "must be at least 2")
        _require(not self.augment, "data.augment", "augmentation is not available for flat inputs")


@dataclass(frozen=True)
class NetworkConfig:
    hidden: tuple = (64, 64)
    embedding_dim: int = 2

    def __post_init__(self):
        _require(all(h >= 1 for h in self.hidden), "net.hidden", "layer widths must be positive")
        _require(self.embedding_dim >= 1, "net.embedding_dim", "must be positive")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        _require(self.lr > 0, "optim.lr", f"must be positive, got {self.lr}")
        _require(0 < self.beta1 < 1, "optim.beta1", "must lie in (0, 1)")
        _require(0 < self.beta2 < 1, "optim.beta2", "must lie in (0, 1)")
        _require(self.eps > 0, "optim.eps", "must be positive")
        _require(self.weight_decay >= 0, "optim.weight_decay", "must be non-negative")

    def adam_hyper(self, weight_decay=None):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay if weight_decay is None else weight_decay}


@dataclass(frozen=True)
class SamplerSettings:
    batch_size: int = 32
    samples_per_class: int = 4

    def __post_init__(self):
        _require(self.samples_per_class >= 1, "sampler.samples_per_class", "must be positive")
        _require(self.batch_size % self.samples_per_class == 0 and self.batch_size >= self.samples_per_class,
                 "sampler.batch_size", f"must be a positive multiple of samples_per_class, got {self.batch_size}")


@dataclass(frozen=True)
class CCPSettings:
    lam: float = 2e-4
    proxies_per_class: int = 4
    pool_budget: int = 16
    eval_every: int = 25
    inner_patience: int = 3
    global_patience: int = 60
    max_projections: int = 100
    max_steps: int = 3000
    proximal: bool = True

    def __post_init__(self):
        _require(self.lam >= 0, "ccp.lambda", f"must be non-negative, got {self.lam}")
        _require(self.proxies_per_class >= 1, "ccp.proxies_per_class", "must be at least 1")
        _require(self.pool_budget >= self.proxies_per_class, "ccp.pool_budget",
                 f"must be at least proxies_per_class = {self.proxies_per_class}, got {self.pool_budget}")
        for name in ("eval_every", "inner_patience", "global_patience", "max_projections", "max_steps"):
            _require(getattr(self, name) >= 1, f"ccp.{name}", "must be at least 1")


@dataclass(frozen=True)
class EvalConfig:
    alpha: float = 0.1
    beta: float = 0.5
    chunk_size: int = 512
    n_jobs: int = 1

    def __post_init__(self):
        _require(self.alpha >= 0, "eval.alpha", "must be non-negative")
        _require(self.beta > 0, "eval.beta", "must be positive")
        _require(self.chunk_size >= 1, "eval.chunk_size", "must be positive")
        _require(self.n_jobs >= 1, "eval.n_jobs", "must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, validated description of one run."""

    seed: int = 0
    mode: str = "ccp"
    out_dir: str = "runs/ccpdml"
    data: DataConfig = field(default_factory=DataConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossSpec = field(default_factory=lambda: LossSpec("contrastive_c1"))
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    ccp: CCPSettings = field(default_factory=CCPSettings)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        _require(self.mode in MODES, "mode", f"must be one of {MODES}, got {self.mode!r}")
        _require(self.seed >= 0, "seed", "must be non-negative")
        _require(self.sampler.batch_size // self.sampler.samples_per_class <= self.data.n_classes,
                 "sampler.batch_size", f"needs more than the {self.data.n_classes} available classes")
        if self.data.source == "synth":
            n_val = int(np.floor(self.data.per_class * self.data.val_fraction + 0.5))
            n_train = self.data.per_class - n_val
            _require(1 <= n_val < self.data.per_class, "data.val_fraction",
                     f"leaves {n_val} of {self.data.per_class} samples per class for validation")
            _require(self.mode == "baseline_proxy" or n_train >= self.ccp.pool_budget, "ccp.pool_budget",
                     f"{self.ccp.pool_budget} exceeds the {n_train} training samples per class")
            _require(n_train >= self.sampler.samples_per_class, "sampler.samples_per_class",
                     f"{self.sampler.samples_per_class} exceeds the {n_train} training samples per class")


_SECTIONS = {
    "data": ("data", DataConfig),
    "net": ("net", NetworkConfig),
    "optim": ("optim", OptimizerConfig),
    "sampler": ("sampler", SamplerSettings),
    "ccp": ("ccp", CCPSettings),
    "eval": ("evaluation", EvalConfig),
}
_TOP_LEVEL = ("seed", "mode", "out_dir")
# key spelling -> field name
_ALIASES = {"lambda": "lam"}


# ================================================================
# Parsing
# ================================================================

def _parse_value(key, raw, default):
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {type(default).__name__}", key=key) from None
    return text


def parse_text(text, source="<string>"):
    """
    Split configuration text into a ``{dotted key: raw string}`` mapping.

    Raises
    ------
    ConfigError
        On a line without ``=`` or a key given twice.
    """
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in items:
            raise ConfigError(f"{source}:{lineno}: duplicate key", key=key)
        items[key] = value.strip()
    return items


def _resolve_extends(items, source, seen=()):
    name = items.pop("extends", None)
    if name is None:
        return items
    if name in seen:
        raise ConfigError(f"{source}: preset cycle through {name!r}", key="extends")
    base = _resolve_extends(parse_text(load_preset(name), f"preset:{name}"), f"preset:{name}", seen + (name,))
    return _layer(base, items)


def _layer(base, items):
    # a new loss kind discards the parameters of the inherited one
    if "loss.kind" in items:
        base = {k: v for k, v in base.items() if not k.startswith("loss.")}
    merged = dict(base)
    merged.update(items)
    return merged


def config_from_items(items):
    """
    Build an :class:`ExperimentConfig` from a dotted-key mapping.

    Values may be strings or plain scalars, so both parsed text and the
    ``config`` echo of a run summary are accepted.
    """
    items = dict(items)
    items.pop("extends", None)
    top, sections, loss = {}, {name: {} for name in _SECTIONS}, {}
    for key, raw in items.items():
        if key in _TOP_LEVEL:
            top[key] = _parse_value(key, raw, getattr(ExperimentConfig, key))
            continue
        section, _, name = key.partition(".")
        if section == "loss" and name:
            loss[name] = raw if name == "kind" else _parse_float(key, raw)
            continue
        if section not in _SECTIONS or not name:
            raise ConfigError("unknown key", key=key)
        cls = _SECTIONS[section][1]
        attr = _ALIASES.get(name, name)
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        if attr not in defaults or name in _ALIASES.values():
            raise ConfigError("unknown key", key=key)
        sections[section][attr] = _parse_value(key, raw, defaults[attr])

    built = {}
    for section, (attr, cls) in _SECTIONS.items():
        built[attr] = cls(**sections[section])
    try:
        loss_spec = LossSpec.from_items(loss) if loss else LossSpec("contrastive_c1")
    except ValueError as exc:
        raise ConfigError(str(exc), key="loss") from None
    return ExperimentConfig(loss=loss_spec, **top, **built)


def _parse_float(key, raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {raw!r} as float", key=key) from None


def load_config(spec, overrides=None):
    """
    Load a configuration file or packaged preset.

    Parameters
    ----------
    spec : str or os.PathLike
        A file path, or ``"preset:<name>"``.
    overrides : dict, optional
        Dotted keys applied last (e.g. ``{"seed": 3}``).

    Returns
    -------
    ExperimentConfig
    """
    spec = os.fspath(spec)
    if spec.startswith(PRESET_PREFIX):
        items = {"extends": spec[len(PRESET_PREFIX):]}
        source = spec
    else:
        try:
            with open(spec, encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"configuration file {spec} does not exist") from None
        items = parse_text(text, spec)
        source = spec
    items = _resolve_extends(items, source)
    items = _layer(items, {k: v for k, v in (overrides or {}).items() if v is not None})
    config = config_from_items(items)
    log.debug("configuration %s resolved to %d keys", source, len(items))
    return config


# ================================================================
# Output
# ================================================================

def _plain(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return value


def config_items(config):
    """Canonical ``{dotted key: scalar}`` mapping of ``config``; re-parses to an equal config."""
    items = {key: getattr(config, key) for key in _TOP_LEVEL}
    for section, (attr, _) in _SECTIONS.items():
        spelled = {v: k for k, v in _ALIASES.items()}
        for f in dataclasses.fields(getattr(config, attr)):
            items[f"{section}.{spelled.get(f.name, f.name)}"] = _plain(getattr(getattr(config, attr), f.name))
    for name, value in config.loss.to_items().items():
        items[f"loss.{name}"] = value
    return items


def dump_config(config):
    """Configuration text that :func:`load_config` reads back to an equal config."""
    return "".join(f"{key} = {value}\n" for key, value in config_items(config).items())


def check_dataset(config, dataset):
    """
    Checks that need the loaded dataset.

    Raises
    ------
    ConfigError
        If a class has fewer training samples than the pool budget or the
        per-class batch quota.
    """
    counts = np.bincount(dataset.labels[dataset.train_idx], minlength=dataset.n_classes)
    smallest = int(counts.min())
    if config.mode != "baseline_proxy" and smallest < config.ccp.pool_budget:
        raise ConfigError(f"class {int(counts.argmin())} has {smallest} training samples, "
                          f"fewer than the pool budget {config.ccp.pool_budget}", key="ccp.pool_budget")
    if smallest < config.sampler.samples_per_class:
        raise ConfigError(f"class {int(counts.argmin())} has {smallest} training samples, "
                          f"fewer than {config.sampler.samples_per_class} per batch", key="sampler.samples_per_class")
