"""
Run configuration.

A run is described by a flat ``key = value`` file with dotted sections::

    seed = 7
    data.source = synth
    model.layers = 2
    unlearn.omega_r = 0.6

Precedence, lowest first: defaults, the file, ``--option key=value`` flags,
then the dedicated ``--seed/--threads/--out`` flags. Every key is validated
before any compute and unknown keys are rejected.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Literal

from decouple import RepositoryEnv
from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from attribution.services.scoring import AGGREGATE_MEAN, METHOD_INTERVENTION
from circuits.services.extract import DEFAULT_FRACTION
from curerec import const
from curerec.cache_keys import content_hash
from curerec.exceptions import ConfigurationError
from nanorec.services.config import PROBABILITY_RESTRICTED, ModelConfig, TrainConfig
from ppr.services.push import DEFAULT_ALPHA, DEFAULT_EPS, DEFAULT_TAU
from unlearn.services.config import UnlearnConfig

logger = logging.getLogger(__name__)

SOURCE_SYNTH = "synth"
SOURCE_TSV = "tsv"

LOCATION_KEYS = {"out", "threads", "cache_dir"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    source: Literal["synth", "tsv"] = SOURCE_SYNTH
    path: str = ""
    rating_threshold: int = const.DEFAULT_RATING_THRESHOLD
    header: bool = False
    users: int = Field(200, ge=1)
    items: int = Field(150, ge=1)
    clusters: int = Field(3, ge=1)
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    forget_fraction: float = Field(0.2, gt=0, lt=1)
    deletion_mode: Literal["interaction", "user", "item"] = "interaction"
    max_history: int = Field(const.DEFAULT_MAX_HISTORY, ge=1)

    @field_validator("ratios", mode="before")
    @classmethod
    def _split_ratios(cls, value):
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(","))
        return value

    @model_validator(mode="after")
    def _check_path(self):
        if self.source == SOURCE_TSV and not self.path:
            raise ValueError("data.path is required when data.source = tsv")
        return self


class ModelSection(_Section):
    """Model shape; vocabulary ids come from the rendered split."""

    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    width: int = Field(64, ge=1)
    mlp_width: int = Field(256, ge=1)
    max_seq_len: int = Field(32, ge=2)
    probability: Literal["restricted", "full"] = PROBABILITY_RESTRICTED


class AttributionSection(_Section):
    method: Literal["intervention", "patching"] = METHOD_INTERVENTION
    fraction: float = Field(DEFAULT_FRACTION, gt=0, le=1)
    aggregate: Literal["mean", "max"] = AGGREGATE_MEAN
    per_sample: bool = False
    batch_size: int = Field(64, ge=1)


class PprSection(_Section):
    alpha: float = Field(DEFAULT_ALPHA, gt=0, lt=1)
    eps: float = Field(DEFAULT_EPS, gt=0)
    tau: float = Field(DEFAULT_TAU, ge=0)
    swap_alpha: bool = False


class RunConfig(_Section):
    seed: int = 7
    threads: int = Field(1, ge=1)
    out: str = ""
    cache_dir: str = ""
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainConfig = TrainConfig()
    attribution: AttributionSection = AttributionSection()
    ppr: PprSection = PprSection()
    unlearn: UnlearnConfig = UnlearnConfig()

    @property
    def out_dir(self) -> Path:
        return Path(self.out) if self.out else Path(settings.CURE_RUNS_DIR) / "run"

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(settings.CURE_CACHE_DIR)

    @property
    def unlearn_config(self) -> UnlearnConfig:
        """The unlearning config seeded from the run seed."""
        return self.unlearn.model_copy(update={"seed": self.seed})

    def model_config_for(self, vocab) -> ModelConfig:
        return ModelConfig(
            **self.model.model_dump(),
            vocab_size=len(vocab),
            seed=self.seed,
            yes_id=vocab.yes_id,
            no_id=vocab.no_id,
            pad_id=vocab.pad_id,
        )

    def to_flat(self) -> dict[str, str]:
        return dict(sorted(_flatten(self.model_dump(mode="json")).items()))

    def config_hash(self) -> str:
        """Hash of everything that affects computed results; paths and thread count excluded."""
        return content_hash(self.model_dump(mode="json", exclude=LOCATION_KEYS))

    def write_echo(self, path: str | Path) -> Path:
        """Write the effective config in the same flat format it is read from."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# config hash {self.config_hash()}"]
        lines += [f"{key} = {value}" for key, value in self.to_flat().items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _flatten(payload: Mapping, prefix: str = "") -> dict[str, str]:
    flat = {}
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = _format(value)
    return flat


def _nest(flat: Mapping[str, str]) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"{key}: {'.'.join(parts[:-1])} is a value, not a section")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigurationError(f"{key} is a section, not a value")
        node[parts[-1]] = value
    return nested


def parse_options(options: Iterable[str]) -> dict[str, str]:
    """Parse repeated ``key=value`` flags."""
    parsed = {}
    for option in options:
        if "=" not in option:
            raise ConfigurationError(f"--option expects key=value, got {option!r}")
        key, value = option.split("=", 1)
        parsed[key.strip()] = value.strip()
    return parsed


def _describe(error: ValidationError) -> str:
    messages = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{field}: {item['msg']}")
    return "; ".join(messages)


def load_run_config(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
    *,
    seed: int | None = None,
    threads: int | None = None,
    out: str | Path | None = None,
) -> RunConfig:
    flat: dict[str, str] = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        flat.update(RepositoryEnv(str(path)).data)
    flat.update(overrides or {})
    for key, value in (("seed", seed), ("threads", threads), ("out", out)):
        if value is not None:
            flat[key] = str(value)

    try:
        config = RunConfig.model_validate(_nest(flat))
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run config: {_describe(exc)}") from None
    logger.debug("Loaded run config %s from %s", config.config_hash()[:12], path or "defaults")
    return config
