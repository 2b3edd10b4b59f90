"""Run configuration files (YAML or JSON) for the pipeline and the toy trainer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .gateway import CaptionerEndpoint, GenerationConfig, Protocol, RetryPolicy
from .orchestrator import DROP, KEEP
from .shear import Fallback, ShearPolicy, TokenizerSpec
from .toyclip.synthetic import SyntheticCorpusConfig
from .toyclip.train import TrainConfig, ViewPolicy


def load_mapping(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _build(cls, data: Any, where: str, **conv):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: conv[k](v) if k in conv else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class PoolMember:
    endpoint: CaptionerEndpoint
    generation: GenerationConfig


@dataclass
class RunConfig:
    input: Path
    output_dir: Path
    pool: list[PoolMember]
    shear: ShearPolicy = field(default_factory=ShearPolicy)
    tokenizer: TokenizerSpec = field(default_factory=TokenizerSpec)
    # None keeps shear.max_tokens; "auto" derives T from the input captions
    shear_limit: int | str | None = None
    shards: int = 1
    workers: int = 1
    drop_policy: str = DROP
    seed: int | None = 0
    created_at: str | None = None

    def validate(self) -> None:
        if not self.input.is_file():
            raise ConfigError(f"input annotation file {self.input} does not exist")
        if not self.pool:
            raise ConfigError("pool must list at least one endpoint")
        ids = [m.endpoint.model_id for m in self.pool]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate model_id in pool: {ids}")
        if self.shards < 1 or self.workers < 1:
            raise ConfigError("shards and workers must be >= 1")
        if self.drop_policy not in (DROP, KEEP):
            raise ConfigError(f"drop_policy must be {DROP!r} or {KEEP!r}")
        if self.shear_limit not in (None, "auto") and not (isinstance(self.shear_limit, int) and self.shear_limit >= 1):
            raise ConfigError("shear_limit must be a positive integer or 'auto'")

    def members(self) -> list[tuple[CaptionerEndpoint, GenerationConfig]]:
        """Pool members with the run seed filled into unseeded generation configs."""
        out = []
        for m in self.pool:
            gc = m.generation
            if gc.seed is None and self.seed is not None:
                gc = replace(gc, seed=self.seed)
            out.append((m.endpoint, gc))
        return out


def _pool_member(d: Any, i: int) -> PoolMember:
    where = f"pool[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    d = dict(d)
    generation = _build(GenerationConfig, d.pop("generation", None), f"{where}.generation")
    retry = _build(RetryPolicy, d.pop("retry", None), f"{where}.retry", retryable_statuses=frozenset)
    endpoint = _build(CaptionerEndpoint, d, where, protocol=Protocol)
    return PoolMember(replace(endpoint, retry=retry), generation)


def run_config_from_mapping(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    data = dict(data)
    for key in ("input", "output_dir", "pool"):
        if key not in data:
            raise ConfigError(f"config is missing {key!r}")
    if not isinstance(data["pool"], list):
        raise ConfigError("pool must be a list")
    pool = [_pool_member(d, i) for i, d in enumerate(data.pop("pool"))]
    shear = _build(
        ShearPolicy, data.pop("shear", None), "shear", clause_terminators=frozenset, fallback=Fallback
    )
    tokenizer = _build(TokenizerSpec, data.pop("tokenizer", None), "tokenizer")
    cfg = _build(
        RunConfig,
        {**data, "pool": pool, "shear": shear, "tokenizer": tokenizer},
        "config",
        input=lambda p: _resolve(p, base_dir),
        output_dir=lambda p: _resolve(p, base_dir),
    )
    return cfg


def _resolve(p, base_dir: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base_dir / p


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return run_config_from_mapping(load_mapping(path), path.parent)


@dataclass
class ToyConfig:
    corpus: SyntheticCorpusConfig = field(default_factory=SyntheticCorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    views: ViewPolicy = field(default_factory=ViewPolicy)


def toy_config_from_mapping(data: dict) -> ToyConfig:
    data = dict(data or {})
    unknown = set(data) - {"corpus", "train", "views"}
    if unknown:
        raise ConfigError(f"toy config: unknown keys {sorted(unknown)}")
    try:
        views = ViewPolicy.parse(str(data.get("views", "raw-only")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ToyConfig(
        _build(SyntheticCorpusConfig, data.get("corpus"), "corpus"),
        _build(TrainConfig, data.get("train"), "train"),
        views,
    )


def load_toy_config(path: str | Path | None) -> ToyConfig:
    return toy_config_from_mapping(load_mapping(path)) if path else ToyConfig()
