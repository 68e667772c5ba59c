"""Time-oblivious reference methods trained directly on the target network.

* Offline: ERM on all training domains pooled.
* LastDomain: ERM on the last training domain only.
* IncFinetune: ERM on the first domain, then fine-tuning on each later
  domain in order with a reduced learning rate.

Initial parameters and the row shuffle come from the run seed, so for a
single training domain Offline and LastDomain coincide exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import DomainDataset
from .netgraph import NetSchema, ParamVector, forward, init_params, prefix_param_count
from .optim import Adam
from .trainer import MetricsSink, TrainConfig, TrainingDivergedError, task_loss


class BaselineKind(str, enum.Enum):
    OFFLINE = "Offline"
    LAST_DOMAIN = "LastDomain"
    INC_FINETUNE = "IncFinetune"


@dataclass(frozen=True)
class BaselineConfig:
    iters: int = 2000
    finetune_iters: int = 500
    finetune_lr_factor: float = 0.1

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.finetune_iters < 0:
            raise ValueError("finetune_iters must be >= 0")
        if not 0 < self.finetune_lr_factor <= 1:
            raise ValueError(f"finetune_lr_factor must be in (0, 1], got {self.finetune_lr_factor}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BaselineModel:
    kind: BaselineKind
    omega: ParamVector
    prefix_params: np.ndarray
    loss_curve: List[float] = field(default_factory=list)


def _init(schema: NetSchema, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    prefix = init_params(schema, rng, "prefix") if prefix_param_count(schema) else np.zeros(0)
    omega = init_params(schema, rng, "generated")
    return {"omega": omega, "prefix": prefix}


def _shuffled(x: np.ndarray, y: np.ndarray, seed: int):
    perm = np.random.default_rng(np.random.SeedSequence([seed, 3])).permutation(len(y))
    return x[perm], y[perm]


def _fit(schema: NetSchema, params: dict, x: np.ndarray, y: np.ndarray, task: str, optimizer: Adam,
         iters: int, lr: float, curve: List[float], phase: int, sink: Optional[MetricsSink]) -> None:
    has_prefix = params["prefix"].size > 0
    trainable = {k: v for k, v in params.items() if k != "prefix" or has_prefix}
    for it in range(iters):
        tape = ad.Tape()
        leaves = {k: tape.var(v) for k, v in trainable.items()}
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss = task_loss(forward(schema, leaves["omega"], leaves.get("prefix"), x), y, task)
        except ad.NonFiniteError:
            raise TrainingDivergedError(phase, it, float("nan")) from None
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDivergedError(phase, it, value)
        curve.append(value)
        if sink is not None:
            sink({"phase": phase, "iter": it, "loss": value})
        grads = ad.backward(loss)
        optimizer.step(trainable, {k: grads[v] for k, v in leaves.items()}, lr=lr)


def _result(kind, schema, params, curve) -> BaselineModel:
    return BaselineModel(kind, ParamVector(params["omega"].copy(), schema.hash()), params["prefix"].copy(), curve)


def train_offline(datasets: Sequence[DomainDataset], schema: NetSchema, cfg: TrainConfig,
                  bcfg: BaselineConfig = BaselineConfig(), sink: Optional[MetricsSink] = None) -> BaselineModel:
    x = np.vstack([d.features for d in datasets])
    y = np.concatenate([d.labels for d in datasets])
    x, y = _shuffled(x, y, cfg.seed)
    params = _init(schema, cfg.seed)
    curve: List[float] = []
    _fit(schema, params, x, y, cfg.task, cfg.make_optimizer(), bcfg.iters, cfg.learning_rate, curve, 0, sink)
    return _result(BaselineKind.OFFLINE, schema, params, curve)


def train_last_domain(datasets: Sequence[DomainDataset], schema: NetSchema, cfg: TrainConfig,
                      bcfg: BaselineConfig = BaselineConfig(), sink: Optional[MetricsSink] = None) -> BaselineModel:
    last = datasets[-1]
    x, y = _shuffled(last.features, last.labels, cfg.seed)
    params = _init(schema, cfg.seed)
    curve: List[float] = []
    _fit(schema, params, x, y, cfg.task, cfg.make_optimizer(), bcfg.iters, cfg.learning_rate, curve, 0, sink)
    return _result(BaselineKind.LAST_DOMAIN, schema, params, curve)


def train_inc_finetune(datasets: Sequence[DomainDataset], schema: NetSchema, cfg: TrainConfig,
                       bcfg: BaselineConfig = BaselineConfig(), sink: Optional[MetricsSink] = None) -> BaselineModel:
    params = _init(schema, cfg.seed)
    optimizer = cfg.make_optimizer()
    curve: List[float] = []
    for phase, ds in enumerate(datasets):
        x, y = _shuffled(ds.features, ds.labels, cfg.seed)
        if phase == 0:
            iters, lr = bcfg.iters, cfg.learning_rate
        else:
            iters, lr = bcfg.finetune_iters, cfg.learning_rate * bcfg.finetune_lr_factor
        _fit(schema, params, x, y, cfg.task, optimizer, iters, lr, curve, phase, sink)
    return _result(BaselineKind.INC_FINETUNE, schema, params, curve)


TRAINERS = {
    BaselineKind.OFFLINE: train_offline,
    BaselineKind.LAST_DOMAIN: train_last_domain,
    BaselineKind.INC_FINETUNE: train_inc_finetune,
}


def train_baseline(kind, datasets, schema, cfg, bcfg=BaselineConfig(), sink=None) -> BaselineModel:
    return TRAINERS[BaselineKind(kind)](datasets, schema, cfg, bcfg, sink)
