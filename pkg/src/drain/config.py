"""Experiment configuration files (TOML, ``version = 1``).

A config has top-level ``name``, ``seeds``, ``methods``, ``output_dir`` and
optional ``workers``, plus the sections ``[dataset]`` (with
``[dataset.params]``), ``[schema]``, ``[generator]``, ``[train]`` and
``[baselines]``. See ``configs/moons.toml`` for a complete example.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .baselines import BaselineConfig, BaselineKind
from .data import DatasetSpec
from .generator import GeneratorConfig
from .netgraph import NetSchema, param_count
from .trainer import TrainConfig

CONFIG_VERSION = 1
DRAIN_METHOD = "DRAIN"
KNOWN_METHODS = (DRAIN_METHOD,) + tuple(k.value for k in BaselineKind)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    dataset: DatasetSpec
    schema: NetSchema
    generator: GeneratorConfig
    train: TrainConfig
    baselines: BaselineConfig
    methods: List[str]
    seeds: List[int]
    output_dir: str
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False)
    source_path: Optional[Path] = None

    def train_config(self, seed: int) -> TrainConfig:
        d = self.train.to_dict()
        d["seed"] = seed
        return TrainConfig(**d)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _section(raw: dict, name: str) -> dict:
    if name not in raw or not isinstance(raw[name], dict):
        raise ConfigError(f"missing section [{name}]")
    return dict(raw[name])


def _schema(sec: dict) -> NetSchema:
    try:
        return NetSchema.mlp(
            int(sec["input_dim"]), [int(w) for w in sec.get("hidden", [])], int(sec.get("output_dim", 1)),
            sec.get("hidden_activation", "relu"), sec.get("output_activation", "sigmoid"),
            bool(sec.get("bias", True)), sec.get("generated_suffix_len"),
        )
    except KeyError as exc:
        raise ConfigError(f"[schema] missing key {exc}") from None


def parse_config(raw: dict, source_path: Optional[Path] = None) -> ExperimentConfig:
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r} (expected {CONFIG_VERSION})")
    try:
        ds = _section(raw, "dataset")
        params = dict(ds.get("params", {}))
        if ds.get("source") == "csv" and "path" in params and source_path is not None:
            p = Path(params["path"])
            if not p.is_absolute():
                params["path"] = str((source_path.parent / p).resolve())
        dataset = DatasetSpec(ds["source"], list(ds["train_domains"]), int(ds["test_domain"]), params)
        schema = _schema(_section(raw, "schema"))
        gen = _section(raw, "generator")
        gen.setdefault("target_param_count", param_count(schema))
        generator = GeneratorConfig(**gen)
        train_sec = _section(raw, "train")
        train_sec.setdefault("task", dataset.task)
        train = TrainConfig(**train_sec)
        baselines = BaselineConfig(**raw.get("baselines", {}))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if generator.target_param_count != param_count(schema):
        raise ConfigError(
            f"generator.target_param_count={generator.target_param_count} but schema has {param_count(schema)}"
        )
    if train.task != dataset.task:
        raise ConfigError(f"train.task={train.task!r} does not match dataset task {dataset.task!r}")
    methods = list(raw.get("methods", [DRAIN_METHOD]))
    unknown = [m for m in methods if m not in KNOWN_METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; known: {list(KNOWN_METHODS)}")
    seeds = [int(s) for s in raw.get("seeds", [])]
    if not seeds:
        raise ConfigError("seeds must be a non-empty list")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")), dataset=dataset, schema=schema, generator=generator,
        train=train, baselines=baselines, methods=methods, seeds=seeds,
        output_dir=str(raw.get("output_dir", "runs")), workers=workers, raw=raw, source_path=source_path,
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path)
