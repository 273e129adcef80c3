"""Experiment config: one JSON document, schema-checked before any work starts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import benchmark
from .data import SplitSpec
from .encoder import EncoderConfig
from .mixmask import MixConfig
from .synthetic import GenConfig
from .trainer import MODES, TERMS, TrainConfig

Method = Literal["supervised", "no_adaptation", "full", "smum_only", "scpc_only"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSource(_Strict):
    """Either an existing manifest or generator settings (``None`` = benchmark default)."""

    manifest: Optional[str] = None
    generator: Optional[dict[str, Any]] = None

    @model_validator(mode="after")
    def _one_of(self) -> "DataSource":
        if self.manifest is not None and self.generator is not None:
            raise ValueError("give either manifest or generator, not both")
        return self


class TaskSpec(_Strict):
    source: str = "PT1"
    target: str = "PT2"

    @property
    def name(self) -> str:
        return f"{self.source}To{self.target}"


class MixSection(_Strict):
    alpha: float = Field(1.0, gt=0)
    geometry_set: list[Literal["square", "rectangle", "disk"]] = ["square", "rectangle", "disk"]
    mask_ratio_range: tuple[float, float] = (0.1, 0.5)


class EncoderSection(_Strict):
    k_neighbors: int = Field(8, ge=1)
    embed_dim_category: int = Field(8, ge=1)
    layer_widths: list[int] = [32, 32]
    global_dim: int = Field(64, ge=1)
    pooling: Literal["max", "mean"] = "mean"
    category_encoding: Literal["embedding", "onehot"] = "embedding"
    head_hidden: int = Field(32, ge=1)
    context_dim: int = Field(32, ge=1)


class TrainSection(_Strict):
    loss_weights: dict[Literal[TERMS], float] = Field(default_factory=dict)  # type: ignore[valid-type]
    epochs: int = Field(25, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    patience: int = Field(10, ge=1)
    temperature: float = Field(0.1, gt=0)
    context_window: int = Field(4, ge=1)
    max_negatives: Optional[int] = None
    deterministic: bool = True
    train_fraction: float = 0.8
    val_fraction: float = 0.25


class ExperimentConfig(_Strict):
    seed: int = 0
    output_dir: Optional[str] = None
    task: TaskSpec = TaskSpec()
    source: DataSource = DataSource()
    target: DataSource = DataSource()
    subset_size: int = Field(512, ge=16)
    methods: list[Method] = ["full"]
    mix: MixSection = MixSection()
    encoder: EncoderSection = EncoderSection()
    train: TrainSection = TrainSection()
    importance_repeats: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _unique_methods(self) -> "ExperimentConfig":
        if not self.methods or len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must be a nonempty list without repeats")
        return self

    # -- builders for the library dataclasses --

    def gen_config(self, side: Literal["source", "target"]) -> GenConfig:
        src = getattr(self, side)
        if src.manifest is not None:
            raise ConfigError(f"{side} is read from a manifest, not generated")
        default = benchmark.source_config(self.seed) if side == "source" else benchmark.target_config(self.seed)
        d = default.to_dict()
        d.update(src.generator or {})
        d["place_type_id"] = getattr(self.task, side)
        try:
            return GenConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{side}.generator: {exc}") from None

    def split(self) -> SplitSpec:
        return SplitSpec(self.train.train_fraction, self.train.val_fraction, self.seed)

    def mix_config(self) -> MixConfig:
        return MixConfig(self.mix.alpha, tuple(self.mix.geometry_set), tuple(self.mix.mask_ratio_range), self.seed)

    def encoder_config(self, n_categories: int) -> EncoderConfig:
        return EncoderConfig(n_categories=n_categories, **self.encoder.model_dump())

    def train_config(self, method: str) -> TrainConfig:
        t = self.train.model_dump(exclude={"train_fraction", "val_fraction"})
        # unset terms fall back to the benchmark weights
        t["loss_weights"] = {**benchmark.default_train_config(MODES[0], self.seed).loss_weights, **t["loss_weights"]}
        mode = method if method in MODES else "no_adaptation"
        return TrainConfig(mode=mode, seed=self.seed, split=self.split(), **t)


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """``a.b.c=value`` assignments; values parse as JSON when they can."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = _coerce(value)
    return doc


def load_config(path: str | Path | None, overrides: list[str] = (), seed: int | None = None) -> ExperimentConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    doc = apply_overrides(doc, list(overrides))
    if seed is not None:
        doc["seed"] = seed
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(map(str, e['loc'])) or '<root>'}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid config: {problems}") from None
