"""Run configuration: nested frozen dataclasses with strict JSON round-trip."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .graph import PropagationConfig
from .synth import SynthTaskConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    patch: tuple = (4, 4)
    channels: int = 64
    backbone_depth: int = 0
    encoder_layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    activation: str = "gelu"
    dropout: float = 0.0
    ln_eps: float = 1e-5
    alpha: float = 0.1
    k_prop: int = 10
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        if len(self.patch) != 2 or min(self.patch) < 1:
            raise ConfigError("patch must be two positive integers")
        if not 0 <= self.backbone_depth <= 2:
            raise ConfigError("backbone_depth must be 0, 1 or 2")
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        if self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be positive")


@dataclass(frozen=True)
class AblationConfig:
    use_te: bool = True
    use_if_fc: bool = True
    use_tat: bool = True


ABLATION_ROWS = {
    "B": AblationConfig(False, False, False),
    "B+TE": AblationConfig(True, False, False),
    "B+TE+IF-FC": AblationConfig(True, True, False),
    "B+TE+TAT": AblationConfig(True, False, True),
    "FULL": AblationConfig(True, True, True),
}


@dataclass(frozen=True)
class OptimConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    epochs: int = 60
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_max < 0 or self.lr_min < 0:
            raise ConfigError("learning rates must be >= 0")


@dataclass(frozen=True)
class DataConfig:
    synth: SynthTaskConfig = field(default_factory=SynthTaskConfig)
    path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    run_id: str = "run"
    seed: int = 0
    out_dir: str = "runs/run"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        s, m = self.data.synth, self.model
        if s.height % m.patch[0] or s.width % m.patch[1]:
            raise ConfigError(f"{s.height}x{s.width} frames not divisible by patch {m.patch}")
        if self.ablation.use_te and m.channels % m.heads:
            raise ConfigError(f"channels {m.channels} not divisible by heads {m.heads}")

    # -- derived sub-configs --------------------------------------------
    @property
    def grid(self):
        s, (ph, pw) = self.data.synth, self.model.patch
        return s.t_frames, s.height // ph, s.width // pw

    def encoder(self):
        m = self.model
        return EncoderConfig(
            layers=m.encoder_layers if self.ablation.use_te else 0,
            heads=m.heads, model_dim=m.channels, ffn_dim=m.ffn_dim,
            activation=m.activation, dropout=m.dropout, ln_eps=m.ln_eps,
        )

    def propagation(self):
        m, a = self.model, self.ablation
        return PropagationConfig(alpha=m.alpha, k_prop=m.k_prop, use_intra=a.use_if_fc,
                                 use_temp=a.use_tat, stride=m.stride)

    def replace(self, **changes):
        """Return a copy with dotted-path overrides, e.g. ``{"model.ffn_dim": 256}``."""
        return from_dict(_set_paths(to_dict(self), changes))

    def to_json(self):
        return json.dumps(to_dict(self), indent=2, sort_keys=True) + "\n"


def _set_paths(d, changes):
    for path, value in changes.items():
        node = d
        *parents, leaf = path.split(".")
        for key in parents:
            node = node[key]
        if leaf not in node:
            raise ConfigError(f"unknown config key {path!r}")
        node[leaf] = value
    return d


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg):
    return _plain(cfg)


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, f"{path}.{name}" if path else name)
        elif hint is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(raw):
    return _build(RunConfig, raw, "")


def loads(text):
    return from_dict(json.loads(text))


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def save(cfg, path):
    with open(path, "w") as fh:
        fh.write(cfg.to_json())
