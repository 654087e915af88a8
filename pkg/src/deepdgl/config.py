"""Model, training and data configuration with file/flag resolution.

Config files hold one ``key = value`` per line with ``#`` comments. Keys are
dotted (``model.codebook_size``, ``train.learning_rate``, ``data.stride``) or
one of the short aliases in :data:`ALIASES`. Values are JSON literals; anything
that does not parse as JSON is taken as a bare string.
"""

import json
import logging
import os
import re
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from deepdgl.errors import ConfigFileError, ConfigurationError
from deepdgl.nets import AttentionBlockConfig, ConvStackConfig

logger = logging.getLogger(__name__)

Variant = Literal["full", "conv_transformer", "no_cmc", "global_only", "local_only"]
VARIANTS: tuple[str, ...] = ("full", "conv_transformer", "no_cmc", "global_only", "local_only")

SEED_ENV_VAR = "DEEPDGL_SEED"

ALIASES = {
    "T": "model.input_length",
    "tau": "model.horizon",
    "alpha": "model.alpha",
    "gamma": "model.gamma",
    "temperature": "model.temperature",
    "variant": "model.variant",
    "lr": "train.learning_rate",
    "epochs": "train.epochs",
    "seed": "train.seed",
}

PRESETS: dict[str, dict[str, Any]] = {
    "electricity": {
        "model.input_length": 72,
        "model.horizon": 24,
        "model.codebook_size": 64,
        "model.positives": 8,
        "model.negatives": 32,
        "train.b_h": 32,
        "train.b_v": 64,
        "data.granularity": "1 hour",
    },
    "wiki": {
        "model.input_length": 42,
        "model.horizon": 14,
        "model.codebook_size": 512,
        "model.positives": 4,
        "model.negatives": 8,
        "train.b_h": 8,
        "train.b_v": 512,
        "data.granularity": "1 day",
    },
    "desk": {
        "model.input_length": 24,
        "model.horizon": 8,
        "model.conv_channels": [16, 16, 16, 16],
        "model.encoder_dims": [16, 16, 16],
        "model.decoder_conv_channels": [16, 16, 16, 16],
        "model.decoder_dims": [16, 16, 16, 1],
        "model.codebook_size": 16,
        "model.positives": 4,
        "model.negatives": 8,
        "train.b_h": 32,
        "train.b_v": 16,
    },
}
PRESETS["traffic"] = dict(PRESETS["electricity"])


class ModelConfig(BaseModel):
    """Architecture and loss hyperparameters of one DeepDGL model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_length: int = Field(default=72, ge=1)
    horizon: int = Field(default=24, ge=1)
    conv_kernels: tuple[int, ...] = (5, 3, 3, 3)
    conv_channels: tuple[int, ...] = (64, 64, 64, 64)
    encoder_dims: tuple[int, ...] = (32, 32, 32)
    encoder_heads: tuple[int, ...] = (4, 4, 4)
    decoder_conv_kernels: tuple[int, ...] = (5, 3, 3, 3)
    decoder_conv_channels: tuple[int, ...] = (64, 64, 64, 64)
    decoder_dims: tuple[int, ...] = (32, 32, 32, 1)
    decoder_heads: tuple[int, ...] = (4, 4, 4, 1)
    ffn_ratio: int = Field(default=4, ge=1)
    codebook_size: int = Field(default=64, ge=1)
    context_dim: int = Field(default=16, ge=1)
    alpha: float = Field(default=0.7, ge=0.0)
    gamma: float = Field(default=0.2, ge=0.0)
    temperature: float = Field(default=0.1, gt=0.0)
    positives: int = Field(default=8, ge=1)
    negatives: int = Field(default=32, ge=1)
    hyper_hidden: int = Field(default=64, ge=1)
    hyper_gain: float = Field(default=0.05, gt=0.0)
    discriminator_hidden: int = Field(default=64, ge=1)
    n_covariates: int = Field(default=2, ge=0)
    dead_code_patience: int = Field(default=100, ge=1)
    variant: Variant = "full"

    @model_validator(mode="after")
    def _check_architecture(self) -> "ModelConfig":
        pairs = {
            "conv": (self.conv_kernels, self.conv_channels),
            "encoder": (self.encoder_dims, self.encoder_heads),
            "decoder conv": (self.decoder_conv_kernels, self.decoder_conv_channels),
            "decoder": (self.decoder_dims, self.decoder_heads),
        }
        for name, (first, second) in pairs.items():
            if not first:
                raise ValueError(f"The {name} stack needs at least one layer")
            if len(first) != len(second):
                raise ValueError(
                    f"The {name} stack lists {len(first)} and {len(second)} entries"
                )
        if len(set(self.encoder_dims)) != 1:
            raise ValueError(
                f"Encoder attention blocks must share one width, got {list(self.encoder_dims)}"
            )
        stacks = ((self.encoder_dims, self.encoder_heads), (self.decoder_dims, self.decoder_heads))
        for dims, heads in stacks:
            for d, h in zip(dims, heads):
                if h < 1 or d % h:
                    raise ValueError(f"Block width {d} is not divisible by {h} heads")
        if self.decoder_dims[-1] != 1:
            raise ValueError(
                f"The last decoder block must have width 1, got {self.decoder_dims[-1]}"
            )
        return self

    @property
    def encoder_dim(self) -> int:
        return self.encoder_dims[-1]

    @property
    def uses_global(self) -> bool:
        return self.variant != "local_only"

    @property
    def uses_local(self) -> bool:
        return self.variant in ("full", "no_cmc", "local_only")

    @property
    def uses_vq(self) -> bool:
        return self.variant in ("full", "no_cmc", "global_only")

    @property
    def uses_cmc(self) -> bool:
        return self.variant in ("full", "local_only")

    @property
    def decoder_context_dim(self) -> int:
        if self.uses_global and self.uses_local:
            return 2 * self.encoder_dim
        return self.encoder_dim

    def conv_config(self) -> ConvStackConfig:
        return ConvStackConfig(kernel_sizes=self.conv_kernels, channels=self.conv_channels)

    def decoder_conv_config(self) -> ConvStackConfig:
        return ConvStackConfig(
            kernel_sizes=self.decoder_conv_kernels, channels=self.decoder_conv_channels
        )

    def encoder_block_configs(self) -> list[AttentionBlockConfig]:
        return [
            AttentionBlockConfig(model_dim=d, n_heads=h, ffn_hidden=self.ffn_ratio * d)
            for d, h in zip(self.encoder_dims, self.encoder_heads)
        ]

    def decoder_block_configs(self) -> list[AttentionBlockConfig]:
        return [
            AttentionBlockConfig(
                model_dim=d,
                n_heads=h,
                ffn_hidden=self.ffn_ratio * d,
                masked=True,
                cross=True,
                context_dim=self.decoder_context_dim,
            )
            for d, h in zip(self.decoder_dims, self.decoder_heads)
        ]


class TrainConfig(BaseModel):
    """Optimizer schedule and mini-batch layout."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=1e-3, gt=0.0)
    decay_factor: float = Field(default=0.5, gt=0.0, le=1.0)
    decay_every: int = Field(default=10, ge=1)
    epochs: int = Field(default=60, ge=1)
    b_h: int = Field(default=32, ge=1)
    b_v: int = Field(default=64, ge=1)
    seed: int = 0
    clip_norm: float = Field(default=5.0, gt=0.0)
    dtype: Literal["float32", "float64"] = "float32"


class DataConfig(BaseModel):
    """Where the panel comes from and how it is cut into windows."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    values_path: Optional[str] = None
    covariates_path: Optional[str] = None
    granularity: str = "1 hour"
    stride: int = Field(default=1, ge=1)
    covariate_period: Optional[int] = Field(default=None, ge=2)


Source = Literal["default", "preset", "env", "file", "flag"]


class RunConfig(BaseModel):
    """Resolved configuration plus the origin of every key."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    preset: Optional[str] = None
    provenance: dict[str, Source] = Field(default_factory=dict)

    def flat(self) -> dict[str, Any]:
        """Dotted ``key -> value`` view; tuples become lists."""
        out: dict[str, Any] = {}
        for section in ("model", "train", "data"):
            for key, value in getattr(self, section).model_dump().items():
                out[f"{section}.{key}"] = list(value) if isinstance(value, tuple) else value
        return out

    def dump(self) -> str:
        """Config-file text that resolves back to this configuration."""
        lines = [f"preset = {json.dumps(self.preset)}"] if self.preset else []
        for key, value in self.flat().items():
            origin = self.provenance.get(key, "default")
            lines.append(f"{key} = {json.dumps(value)}  # {origin}")
        return "\n".join(lines) + "\n"


def _sections() -> dict[str, type[BaseModel]]:
    return {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def known_keys() -> set[str]:
    return {
        f"{section}.{name}"
        for section, cls in _sections().items()
        for name in cls.model_fields
    }


def canonical_key(key: str) -> str:
    """Resolve aliases; raises ``KeyError`` for unknown keys."""
    key = ALIASES.get(key, key)
    if key != "preset" and key not in known_keys():
        raise KeyError(key)
    return key


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _strip_comment(value: str) -> str:
    # '#' inside a JSON string belongs to the value
    try:
        json.loads(value)
        return value
    except json.JSONDecodeError:
        return re.sub(r"\s*#.*$", "", value)


def read_config_file(path: Union[str, Path]) -> dict[str, tuple[Any, int]]:
    """Parse a config file into ``canonical key -> (value, line number)``.

    Raises:
        ConfigFileError: malformed line, unknown key, duplicate key.
    """
    entries: dict[str, tuple[Any, int]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigFileError(f"Expected 'key = value', got '{line}'", line=number)
        key, _, value = line.partition("=")
        key, value = key.strip(), _strip_comment(value.strip())
        if not key or not value:
            raise ConfigFileError(
                f"Expected 'key = value', got '{line}'", line=number, key=key or None
            )
        try:
            canonical = canonical_key(key)
        except KeyError:
            raise ConfigFileError(f"Unknown key '{key}'", line=number, key=key) from None
        if canonical in entries:
            raise ConfigFileError(
                f"Key '{key}' already set on line {entries[canonical][1]}", line=number, key=key
            )
        entries[canonical] = (_parse_value(value), number)
    return entries


def parse_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Resolve flags > file > ``DEEPDGL_SEED`` > preset > defaults.

    ``overrides`` holds flag values keyed by dotted name or alias; ``None``
    values are ignored.

    Raises:
        ConfigFileError: malformed line, unknown key, or an out-of-range value
            that came from the file (the error names the line).
        ConfigurationError: unknown preset or flag key, or an out-of-range value
            from any other source.
    """
    environ = os.environ if environ is None else environ
    file_entries = read_config_file(path) if path is not None else {}

    flags: dict[str, Any] = {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        try:
            flags[canonical_key(key)] = value
        except KeyError:
            raise ConfigurationError(f"Unknown key '{key}'") from None

    preset = flags.pop("preset", None)
    if preset is None and "preset" in file_entries:
        preset = file_entries["preset"][0]
    file_entries.pop("preset", None)
    if preset is not None and preset not in PRESETS:
        raise ConfigurationError(
            f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}"
        )

    values: dict[str, Any] = {}
    provenance: dict[str, Source] = {}

    def assign(items: Mapping[str, Any], origin: Source) -> None:
        for key, value in items.items():
            values[key] = value
            provenance[key] = origin

    if preset is not None:
        assign(PRESETS[preset], "preset")
    if SEED_ENV_VAR in environ:
        try:
            assign({"train.seed": int(environ[SEED_ENV_VAR])}, "env")
        except ValueError:
            raise ConfigurationError(
                f"{SEED_ENV_VAR} must be an integer, got '{environ[SEED_ENV_VAR]}'"
            ) from None
    assign({key: value for key, (value, _) in file_entries.items()}, "file")
    assign(flags, "flag")

    sections: dict[str, BaseModel] = {}
    for section, cls in _sections().items():
        prefix = f"{section}."
        fields = {k[len(prefix) :]: v for k, v in values.items() if k.startswith(prefix)}
        try:
            sections[section] = cls(**fields)
        except ValidationError as exc:
            error = exc.errors()[0]
            field = str(error["loc"][0]) if error["loc"] else ""
            dotted = f"{prefix}{field}" if field else section
            message = f"Invalid value for '{dotted}': {error['msg']}"
            if dotted in file_entries and provenance.get(dotted) == "file":
                raise ConfigFileError(message, line=file_entries[dotted][1], key=dotted) from None
            if not field:
                # Cross-field checks do not name a field; blame the first file key of the section
                in_file = [
                    (line, k) for k, (_, line) in file_entries.items() if k.startswith(prefix)
                ]
                if in_file:
                    line, key = min(in_file)
                    raise ConfigFileError(message, line=line, key=key) from None
            raise ConfigurationError(message) from None

    for key in known_keys():
        provenance.setdefault(key, "default")
    run = RunConfig(
        model=sections["model"],
        train=sections["train"],
        data=sections["data"],
        preset=preset,
        provenance=provenance,
    )
    logger.info("Resolved configuration:\n%s", run.dump())
    return run
