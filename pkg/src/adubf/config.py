"""
Experiment configuration: a flat, sectioned ``key = value`` file with the
sections ``[layout]``, ``[model]``, ``[training]`` and ``[sweep]``.  Unknown
sections or keys are errors.  Any key can be overridden from the environment
as ``ADUBF_<SECTION>_<KEY>`` (upper case), e.g. ``ADUBF_TRAINING_EPOCHS=2``.
"""

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .channel import LayoutConfig
from .errors import ConfigError
from .model import ModelConfig
from .nn import AnnealSchedule

__all__ = ["TrainingConfig", "SweepConfig", "ExperimentConfig", "load_config",
           "parse_config", "ENV_PREFIX", "AXES", "SCHEMES"]

ENV_PREFIX = "ADUBF_"
AXES = ("bits", "users", "antennas")
SCHEMES = ("adu", "adu-novib", "rvq", "perfect")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha_0: float = 1.0
    alpha_rate: float = 0.1
    alpha_max: float = 20.0
    seed: int = 0
    train_samples: int = 20000
    test_samples: int = 500
    data_seed: int = 1
    test_seed: int = 2
    rvq_seed: int = 3
    eval_batch: int = 250

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("need epochs >= 1 and batch_size >= 2")
        if self.train_samples < 1 or self.test_samples < 1:
            raise ConfigError("sample counts must be positive")
        if self.batch_size > self.train_samples:
            raise ConfigError("batch_size exceeds the number of training samples")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    @property
    def schedule(self):
        return AnnealSchedule(self.alpha_0, self.alpha_rate, self.alpha_max)


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "bits"
    grid: tuple = (4, 8, 12)
    schemes: tuple = SCHEMES

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {AXES}")
        if not self.grid:
            raise ConfigError("sweep grid must be non-empty")
        bad = set(self.schemes) - set(SCHEMES)
        if bad or not self.schemes:
            raise ConfigError(f"unknown schemes {sorted(bad)}")


@dataclass(frozen=True)
class ExperimentConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    vib: bool = True
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def gamma(self):
        """Effective VIB weight (zero when VIB is switched off)."""
        return self.model.gamma if self.vib else 0.0

    def for_scheme(self, scheme):
        if scheme == "adu-novib":
            return replace(self, vib=False)
        if scheme == "adu":
            return replace(self, vib=True)
        return self

    def at(self, axis, value):
        """Copy with one sweep-axis value applied."""
        value = int(value)
        if axis == "bits":
            return replace(self, model=replace(self.model, B=value))
        if axis == "users":
            return replace(self, layout=replace(self.layout, K=value))
        if axis == "antennas":
            return replace(self, layout=replace(self.layout, Nt=value))
        raise ConfigError(f"unknown sweep axis {axis!r}")


def _as_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _as_tuple(typ):
    def conv(s):
        parts = [p.strip() for p in s.split(",") if p.strip()]
        return tuple(typ(p) for p in parts)
    return conv


def _typed(cls, overrides):
    conv = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        conv[f.name] = {"int": int, "float": float, "str": str, "bool": _as_bool}.get(t)
    conv.update(overrides)
    return conv


_SECTIONS = {
    "layout": _typed(LayoutConfig, {}),
    "model": dict(_typed(ModelConfig, {"encoder_widths": _as_tuple(int),
                                       "preproc_widths": _as_tuple(int)}),
                  vib=_as_bool),
    "training": _typed(TrainingConfig, {}),
    "sweep": _typed(SweepConfig, {"grid": _as_tuple(int), "schemes": _as_tuple(str)}),
}


def parse_config(text="", env=None):
    """Parse config text plus ``ADUBF_*`` environment overrides."""
    cp = configparser.ConfigParser(interpolation=None, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = {sec: {} for sec in _SECTIONS}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, val in cp.items(sec):
            raw[sec][key] = val
    for name, val in (env or {}).items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        sec, _, key = rest.partition("_")
        if sec not in _SECTIONS:
            raise ConfigError(f"environment override {name} names unknown section")
        raw[sec][key] = val
    parsed = {}
    for sec, items in raw.items():
        conv = _SECTIONS[sec]
        canon = {k.lower(): k for k in conv}
        parsed[sec] = {}
        for key, val in items.items():
            name = canon.get(key.lower())
            if name is None or conv[name] is None:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                parsed[sec][name] = conv[name](val)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    vib = parsed["model"].pop("vib", True)
    return ExperimentConfig(
        layout=LayoutConfig(**parsed["layout"]),
        model=ModelConfig(**parsed["model"]),
        vib=vib,
        training=TrainingConfig(**parsed["training"]),
        sweep=SweepConfig(**parsed["sweep"]),
    )


def load_config(path=None, env=None):
    env = os.environ if env is None else env
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, env)
