"""Model and training configuration with a ``key=value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

# Table-of-ablations flags, one per removable component.
ABLATION_FLAGS = (
    "no_residual_simplify",
    "layer_norm_instead",
    "no_entity_aware",
    "no_self_attention",
    "no_entity_pools_ffnn",
    "no_bilstm",
)


@dataclass
class ModelConfig:
    # dimensions
    d_word: int = 300
    d_ner: int = 30
    d_pos: int = 30
    d_position: int = 30
    d_h: int = 200
    attn_size: int = 130
    heads: int = 3
    gcn_size: int = 200
    ffnn_size: int = 200
    entity_attn_size: int = 200
    lstm_layers: int = 1
    gcn_layers: int = 2
    position_clip: int = 9
    rel_clip: int = 10
    # pruning distance; None keeps the full tree
    prune_k: int | None = 1
    # regularization / optimization
    dropout: float = 0.5
    beta: float = 1e-3
    lr: float = 0.3
    decay: float = 0.9
    schedule: str = "epoch"
    plateau_patience: int = 1
    epochs: int = 100
    batch_size: int = 10
    grad_clip: float = 5.0
    momentum: float = 0.0
    # "he" or "fan_in"; scale of the random word table when no vectors are loaded
    weight_init: str = "he"
    word_init_scale: float = 1.0
    bn_momentum: float = 0.1
    seed: int = 1
    # ablations
    no_residual_simplify: bool = False
    layer_norm_instead: bool = False
    no_entity_aware: bool = False
    no_self_attention: bool = False
    no_entity_pools_ffnn: bool = False
    no_bilstm: bool = False
    no_residual: bool = False
    mask_pruned_attention: bool = False
    # branch inputs
    attention_input: str = "x"
    position_in_input: bool = False
    negative_label: str = "no_relation"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and f.name not in ("seed", "gcn_layers") and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.gcn_layers < 0:
            raise ConfigError(f"gcn_layers must be >= 0, got {self.gcn_layers}")
        if self.lstm_layers != 1:
            raise ConfigError("only a single BiLSTM layer is supported")
        if self.heads > self.attn_size:
            raise ConfigError(f"{self.heads} heads cannot split attention size {self.attn_size}")
        if self.prune_k is not None and self.prune_k < 0:
            raise ConfigError(f"prune_k must be >= 0 or full, got {self.prune_k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.schedule not in ("epoch", "plateau"):
            raise ConfigError(f"schedule must be 'epoch' or 'plateau', got {self.schedule!r}")
        if self.weight_init not in ("he", "fan_in"):
            raise ConfigError(f"weight_init must be 'he' or 'fan_in', got {self.weight_init!r}")
        if self.word_init_scale <= 0:
            raise ConfigError(f"word_init_scale must be positive, got {self.word_init_scale}")
        if self.attention_input not in ("x", "bilstm"):
            raise ConfigError(f"attention_input must be 'x' or 'bilstm', got {self.attention_input!r}")

    @property
    def head_widths(self) -> list[int]:
        base, extra = divmod(self.attn_size, self.heads)
        return [base + 1 if a < extra else base for a in range(self.heads)]

    @property
    def ablations(self) -> list[str]:
        return [f for f in ABLATION_FLAGS if getattr(self, f)]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_ablations(self, flags) -> "ModelConfig":
        unknown = [f for f in flags if f not in ABLATION_FLAGS and f not in ("no_residual", "mask_pruned_attention")]
        if unknown:
            raise ConfigError(f"unknown ablation flag(s): {', '.join(unknown)}")
        return self.replace(**{f: True for f in flags})

    # ------------------------------------------------------------ text form

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "prune_k" and v is None:
                v = "full"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "ModelConfig | None" = None) -> "ModelConfig":
        values = parse_overrides(
            [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        )
        return (base or cls()).replace(**values)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def parse_overrides(items: list[str]) -> dict:
    """Turn ``key=value`` strings into typed config values."""
    types = {f.name: f.type for f in fields(ModelConfig)}
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"config line {item!r} is not key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, types[key], raw)
    return out


def _coerce(key: str, typ: str, raw: str):
    try:
        if key == "prune_k":
            return None if raw.lower() in ("full", "none") else int(raw)
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
