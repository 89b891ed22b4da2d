"""Model, training and search configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .exceptions import ConfigError

VARIANTS = ("none", "mem-to-context", "mem-to-output", "prev-trg")
MEMORY_CHOICES = ("none", "src", "trg", "both")
SOURCE_QUERY_CHOICES = ("encoder", "sentence-lm")


@dataclass
class ModelConfig:
    """Dimensions and wiring of the translation model.

    ``variant`` selects how document context enters the decoder;
    ``memories`` selects which external memories are read. ``prev_trg``
    conditions the decoder on the previous sentence's final decoder
    state instead of a target memory (mutually exclusive with target
    memory selection).
    """

    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    align_dim: int = 16
    lm_hidden_dim: int = 32
    doc_hidden_dim: int = 32
    decoder_layers: int = 1
    variant: str = "mem-to-context"
    memories: str = "both"
    prev_trg: bool = False
    source_query: str = "encoder"
    dropout_enc_dec: float = 0.0
    dropout_doc: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("src_vocab_size", "tgt_vocab_size", "embed_dim", "hidden_dim",
                     "align_dim", "lm_hidden_dim", "doc_hidden_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.decoder_layers not in (1, 2):
            raise ConfigError(f"decoder_layers must be 1 or 2, got {self.decoder_layers}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.memories not in MEMORY_CHOICES:
            raise ConfigError(f"unknown memory selection '{self.memories}'")
        if self.source_query not in SOURCE_QUERY_CHOICES:
            raise ConfigError(f"unknown source_query '{self.source_query}'")
        if self.prev_trg and self.memories in ("trg", "both"):
            raise ConfigError("prev_trg is mutually exclusive with target memory selection")
        for name in ("dropout_enc_dec", "dropout_doc"):
            if not (0.0 <= getattr(self, name) < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1)")

    @property
    def use_src_memory(self) -> bool:
        return self.memories in ("src", "both")

    @property
    def use_trg_memory(self) -> bool:
        return self.memories in ("trg", "both")

    @property
    def src_cell_dim(self) -> int:
        return 2 * self.doc_hidden_dim

    @property
    def trg_cell_dim(self) -> int:
        return self.hidden_dim

    @property
    def src_query_dim(self) -> int:
        if self.source_query == "encoder":
            return 2 * self.hidden_dim
        return 2 * self.lm_hidden_dim


@dataclass
class TrainConfig:
    """Stage-wise optimization settings.

    Learning-rate defaults follow the published schedule: stage 1 starts
    at 0.1 and halves after epoch 4; stage 2 starts at 0.08 and decays
    by 0.9 after epoch 1.  ``target_memory`` picks whether the target
    memory cells come from generated or gold translations.
    """

    seed: int = 1
    stage1_epochs: int = 10
    stage2_epochs: int = 15
    lm_epochs: int = 3
    batch_size: int = 4
    clip_norm: float = 5.0
    target_memory: str = "generated"
    stage1_lr: float = 0.1
    stage1_decay: float = 0.5
    stage1_decay_after: int = 4
    stage2_lr: float = 0.08
    stage2_decay: float = 0.9
    stage2_decay_after: int = 1
    lm_lr: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ConfigError("stage epochs must be >= 1")
        if self.lm_epochs < 0:
            raise ConfigError("lm_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("stage1_lr", "stage2_lr", "lm_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.target_memory not in ("generated", "gold"):
            raise ConfigError(f"unknown target_memory '{self.target_memory}'")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")


@dataclass
class SearchConfig:
    beam_size: int = 4
    max_len: int = 20
    mode: str = "beam"  # beam | exhaustive

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.mode not in ("beam", "exhaustive"):
            raise ConfigError(f"unknown search mode '{self.mode}'")


def parse_kv_file(path) -> dict:
    """Parse a 'key = value' config file; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from '{value}'")
    return target_type(value)


def config_from_dict(cls, values: dict, **overrides):
    """Build a config dataclass from string values plus typed overrides."""
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            continue
        ftype = {"int": int, "float": float, "str": str, "bool": bool}.get(known[key], str)
        try:
            kwargs[key] = _coerce(val, ftype)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for '{key}': {val}") from e
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)
