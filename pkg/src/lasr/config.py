"""Hyperparameters and the declarative run-config file format.

Config files are INI-style::

    [model]
    enc_layers = 2
    attn_kind = location

    [train]
    lr = 0.003

    [pass.1]
    datasets = clean.jsonl
    epochs = 10
    objective = ce
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Any

ATTN_KINDS = ("content", "multihead", "location")
OBJECTIVES = ("ce", "ce+ctc", "ce+mwer")


@dataclass
class ModelConfig:
    input_dim: int = 240
    vocab_size: int = 200
    enc_layers: int = 5
    compress_after: tuple = (2, 4)
    enc_hidden: int = 256
    dec_layers: int = 2
    dec_hidden: int = 256
    attn_kind: str = "multihead"
    attn_heads: int = 2
    head_size: int = 128
    loc_conv_channels: int = 8
    loc_conv_width: int = 15
    dropout: float = 0.3
    label_smooth: float = 0.1
    joint_lambda: float = 0.8
    mwer_lambda: float = 0.1  # 0.3, 0.1 and 0.01 are the usual choices
    mwer_nbest: int = 4
    ss_start_epoch: int = 20
    ss_rate: float = 0.02
    ss_max: float = 0.3
    beam: int = 10
    max_decode_len: int = 40
    length_norm: bool = False
    init_scale: float = 0.1

    def __post_init__(self):
        self.compress_after = tuple(sorted(int(x) for x in self.compress_after))
        self.validate()

    def validate(self):
        for name in ("dropout", "label_smooth", "joint_lambda", "mwer_lambda", "ss_rate", "ss_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.label_smooth >= 1.0:
            raise ValueError("label_smooth must be < 1")
        if self.attn_heads < 1:
            raise ValueError("attn_heads must be >= 1")
        if self.attn_kind not in ATTN_KINDS:
            raise ValueError(f"attn_kind must be one of {ATTN_KINDS}")
        if self.attn_kind == "content" and self.attn_heads != 1:
            raise ValueError("content attention is single-headed")
        if self.loc_conv_width % 2 != 1:
            raise ValueError("loc_conv_width must be odd")
        if any(not 1 <= c < self.enc_layers for c in self.compress_after):
            raise ValueError("compress_after entries must name a non-final encoder layer")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")

    @property
    def enc_dim(self) -> int:
        return 2 * self.enc_hidden

    @property
    def uses_projection(self) -> bool:
        return self.attn_kind == "multihead" or (self.attn_kind == "location" and self.attn_heads > 1)

    @property
    def context_dim(self) -> int:
        return self.attn_heads * self.head_size if self.uses_projection else self.enc_dim

    @property
    def reduction(self) -> int:
        return 2 ** len(self.compress_after)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["compress_after"] = list(self.compress_after)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 8


@dataclass
class FrontendConfig:
    n_mels: int = 80
    window_ms: float = 20.0
    hop_ms: float = 10.0
    stack: int = 3
    freq_mask: int = 27
    time_mask: int = 100
    masks_per_axis: int = 1
    augment: bool = True


@dataclass
class PassSpec:
    datasets: list
    epochs: int
    objective: str = "ce"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    passes: list = field(default_factory=list)
    seed: int = 42


def _coerce(value: str, default: Any):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


def _update(obj, key: str, value: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if key not in fields:
        raise ValueError(f"unknown config key {type(obj).__name__}.{key}")
    setattr(obj, key, _coerce(value, getattr(obj, key)))


def apply_override(cfg: RunConfig, assignment: str):
    """Apply one ``section.key=value`` override (``seed=7`` for the top level)."""
    key, _, value = assignment.partition("=")
    if not _:
        raise ValueError(f"override must look like key=value, got {assignment!r}")
    key = key.strip()
    if key == "seed":
        cfg.seed = int(value)
        return
    section, _, name = key.partition(".")
    target = {"model": cfg.model, "train": cfg.optim, "optim": cfg.optim,
              "frontend": cfg.frontend}.get(section)
    if target is None or not name:
        raise ValueError(f"unknown config section in {key!r}")
    _update(target, name, value)
    if target is cfg.model:
        cfg.model.__post_init__()


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        if parser.has_option("DEFAULT", "seed"):
            cfg.seed = parser.getint("DEFAULT", "seed")
        for section in parser.sections():
            items = {k: v for k, v in parser.items(section) if k not in parser.defaults()}
            if section == "model":
                for k, v in items.items():
                    _update(cfg.model, k, v)
            elif section in ("train", "optim"):
                for k, v in items.items():
                    if k == "seed":
                        cfg.seed = int(v)
                    else:
                        _update(cfg.optim, k, v)
            elif section == "frontend":
                for k, v in items.items():
                    _update(cfg.frontend, k, v)
            elif section.startswith("pass"):
                cfg.passes.append(PassSpec(
                    datasets=items["datasets"].split(),
                    epochs=int(items["epochs"]),
                    objective=items.get("objective", "ce"),
                ))
            else:
                raise ValueError(f"unknown config section [{section}]")
    for o in overrides:
        apply_override(cfg, o)
    cfg.model.__post_init__()
    return cfg
