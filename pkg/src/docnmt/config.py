"""Flat ``key = value`` run configuration shared by every CLI command.

Blank lines and ``#`` comments are ignored. Every key must be known; values
are parsed by the field's type. ``none`` (or an empty value) clears an
optional field.

The three context manipulations can be switched as a group with
``manipulation`` or one at a time with ``segment_embeddings``,
``position_mode`` and ``context_mask``; an individual key wins over the
group switch.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .context import DEFAULT_LIMIT, PositionMode
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

SCOPES = ("none", "small", "large")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class RunConfig:
    # data
    train_source: str | None = None
    train_target: str | None = None
    valid_source: str | None = None
    valid_target: str | None = None
    source_vocab: str | None = None
    target_vocab: str | None = None
    vocab_size: int = 32000
    run_dir: str = "run"
    pretrained: str | None = None

    # context
    context: str = "large"
    max_input: int = DEFAULT_LIMIT
    manipulation: bool = True
    segment_embeddings: bool | None = None
    position_mode: str | None = None
    context_mask: bool | None = None

    # model
    d_model: int = 32
    n_heads: int = 2
    d_ffn: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    max_positions: int = 512
    dropout: float = 0.1
    dtype: str = "float32"
    init_std: float = 0.02

    # training
    max_steps: int = 1000
    tokens_per_batch: int = 3072
    warmup_steps: int = 4000
    lr_scale: float = 1.0
    seed: int = 0
    mlm: bool = False
    mlm_weight: float = 1.0
    mask_rate: float = 0.16
    mask_cap: int = 20
    label_smoothing: float = 0.0
    clip_norm: float = 1.0
    checkpoint_every: int = 0
    log_every: int = 10
    freeze: str = ""
    inject_nan_step: int = 0

    # decoding
    beam: int = 4
    alpha: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.context not in SCOPES:
            raise ConfigError(f"context must be one of {', '.join(SCOPES)}, got {self.context!r}")
        if self.position_mode is not None:
            try:
                PositionMode(self.position_mode)
            except ValueError:
                raise ConfigError(f"unknown position_mode {self.position_mode!r}") from None
        if self.max_input < 2:
            raise ConfigError("max_input must be >= 2")
        if self.max_input > self.max_positions:
            raise ConfigError(f"max_input {self.max_input} exceeds max_positions {self.max_positions}")
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")
        if not 0.0 < self.mask_rate <= 1.0:
            raise ConfigError("mask_rate must be in (0, 1]")
        # surface model/trainer errors now rather than after data loading
        try:
            self.model_config(8, 8)
        except Exception as exc:
            raise ConfigError(str(exc)) from None
        self.train_config()

    # -- resolved settings -----------------------------------------------

    @property
    def use_segment_embeddings(self) -> bool:
        return self.manipulation if self.segment_embeddings is None else self.segment_embeddings

    @property
    def use_context_mask(self) -> bool:
        return self.manipulation if self.context_mask is None else self.context_mask

    @property
    def resolved_position_mode(self) -> PositionMode:
        if self.position_mode is not None:
            return PositionMode(self.position_mode)
        return PositionMode.REVERSED if self.manipulation else PositionMode.SEQUENTIAL

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(
            src_vocab=src_vocab, tgt_vocab=tgt_vocab, d_model=self.d_model, n_heads=self.n_heads,
            d_ffn=self.d_ffn, enc_layers=self.enc_layers, dec_layers=self.dec_layers,
            max_positions=self.max_positions, dropout=self.dropout, position_mode=self.resolved_position_mode,
            use_segment_embeddings=self.use_segment_embeddings, use_context_mask=self.use_context_mask,
            dtype=self.dtype, init_std=self.init_std,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_steps=self.max_steps, tokens_per_batch=self.tokens_per_batch, warmup_steps=self.warmup_steps,
            lr_scale=self.lr_scale, seed=self.seed, mlm_enabled=self.mlm, mlm_weight=self.mlm_weight,
            mask_rate=self.mask_rate, mask_cap=self.mask_cap, label_smoothing=self.label_smoothing,
            clip_norm=self.clip_norm, checkpoint_every=self.checkpoint_every, log_every=self.log_every,
            freeze=tuple(f for f in self.freeze.split(",") if f), inject_nan_step=self.inject_nan_step,
        )

    # -- text form -------------------------------------------------------

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        types = _field_types()
        values = {}
        for key, raw in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse(key, raw, types[key])
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        return cls.from_pairs({**parse_pairs(text), **(overrides or {})})

    @classmethod
    def load(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, overrides)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def _field_types() -> dict[str, object]:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(RunConfig)}


def _parse(key: str, raw: str, tp) -> object:
    args = typing.get_args(tp)
    if type(None) in args:
        if raw.lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return tp(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
