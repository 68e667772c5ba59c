"""Sequential training of the generator over a domain sequence, and
parameter prediction for the next, unseen domain."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, IO, List, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import serialize
from .data import DomainDataset
from .generator import (GeneratorConfig, GeneratorState, advance, generate_next, init_state,
                        state_from_bundle)
from .netgraph import NetSchema, ParamVector, forward, init_params, param_count, prefix_param_count
from .optim import Adam

PREFIX_KEY = "prefix"


class TrainingDivergedError(RuntimeError):
    def __init__(self, phase: int, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at phase {phase}, iteration {iteration}")
        self.phase = phase
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    iters_per_domain: int = 300
    seed: int = 0
    task: str = "classification"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iters_per_domain < 1:
            raise ValueError(f"iters_per_domain must be >= 1, got {self.iters_per_domain}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")

    def make_optimizer(self) -> Adam:
        return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


MetricsSink = Callable[[dict], None]


def jsonl_sink(fh: IO[str]) -> MetricsSink:
    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return write


def task_loss(pred: ad.Var, labels: np.ndarray, task: str) -> ad.Var:
    return ad.loss_bce(pred, labels) if task == "classification" else ad.loss_mse(pred, labels)


def _check_dims(schema: NetSchema, dataset: DomainDataset) -> None:
    if dataset.dim != schema.input_dim:
        raise ValueError(
            f"domain {dataset.domain_index} has {dataset.dim} features, schema expects {schema.input_dim}"
        )


@dataclass
class DomainResult:
    omega: np.ndarray
    loss_curve: List[float]


def train_on_domain(state: GeneratorState, prefix_params: np.ndarray, schema: NetSchema,
                    dataset: DomainDataset, cfg: TrainConfig, optimizer: Optional[Adam] = None,
                    sink: Optional[MetricsSink] = None) -> DomainResult:
    """Fit the generator (and prefix layers) to one domain, then commit it.

    ``state.params`` and ``prefix_params`` are updated in place. After the
    last optimizer step the chain is evaluated once more; that output is the
    realized parameter vector pushed into the history window, and the LSTM
    memory it produced becomes the carried memory.
    """
    _check_dims(schema, dataset)
    optimizer = optimizer if optimizer is not None else cfg.make_optimizer()
    phase = state.step_index
    params: Dict[str, np.ndarray] = dict(state.params)
    has_prefix = prefix_params.size > 0
    if has_prefix:
        params[PREFIX_KEY] = prefix_params
    x, y = dataset.features, dataset.labels
    curve: List[float] = []

    def step_loss():
        gen = generate_next(state)
        prefix_var = gen.tape.var(prefix_params) if has_prefix else None
        pred = forward(schema, gen.omega, prefix_var, x)
        loss = task_loss(pred, y, cfg.task)
        return gen, prefix_var, loss

    for it in range(cfg.iters_per_domain):
        try:
            # overflow surfaces as NonFiniteError from the tape; no need for numpy's warning too
            with np.errstate(over="ignore", invalid="ignore"):
                gen, prefix_var, loss = step_loss()
        except ad.NonFiniteError:
            raise TrainingDivergedError(phase, it, float("nan")) from None
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDivergedError(phase, it, value)
        curve.append(value)
        if sink is not None:
            sink({"phase": phase, "iter": it, "loss": value})
        grads = ad.backward(loss)
        g = {k: grads[v] for k, v in gen.leaves.items()}
        if has_prefix:
            g[PREFIX_KEY] = grads[prefix_var]
        optimizer.step(params, g)

    gen = generate_next(state)
    omega = gen.omega.value.copy()
    if not np.all(np.isfinite(omega)):
        raise TrainingDivergedError(phase, cfg.iters_per_domain, float("nan"))
    advance(state, gen, omega)
    return DomainResult(omega, curve)


@dataclass
class TrainedModel:
    generator_state: GeneratorState
    schema: NetSchema
    prefix_params: np.ndarray
    omega_sequence: List[np.ndarray]
    loss_curves: List[List[float]]
    train_config: TrainConfig
    optimizer_steps: int = 0
    domain_indices: List[int] = field(default_factory=list)

    @property
    def num_domains(self) -> int:
        return len(self.omega_sequence)


def new_run(schema: NetSchema, gen_cfg: GeneratorConfig, train_cfg: TrainConfig):
    """Seeded initial generator state and prefix parameters."""
    if gen_cfg.target_param_count != param_count(schema):
        raise ValueError(
            f"generator emits {gen_cfg.target_param_count} parameters, schema needs {param_count(schema)}"
        )
    state = init_state(gen_cfg, train_cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
    prefix = init_params(schema, rng, "prefix") if prefix_param_count(schema) else np.zeros(0)
    return state, prefix


def train_sequence(datasets: Sequence[DomainDataset], schema: NetSchema, gen_cfg: GeneratorConfig,
                   train_cfg: TrainConfig, sink: Optional[MetricsSink] = None) -> TrainedModel:
    """Train on ``datasets`` in order; phase ``s`` only reads ``datasets[s]``."""
    n_domains = len(datasets)
    if n_domains < 1:
        raise ValueError("need at least one training domain")
    state, prefix = new_run(schema, gen_cfg, train_cfg)
    optimizer = train_cfg.make_optimizer()
    omegas, curves, indices = [], [], []
    last_index = None
    for s in range(n_domains):
        ds = datasets[s]
        if last_index is not None and ds.domain_index <= last_index:
            raise ValueError("datasets must be ordered by domain index")
        last_index = ds.domain_index
        result = train_on_domain(state, prefix, schema, ds, train_cfg, optimizer, sink)
        omegas.append(result.omega)
        curves.append(result.loss_curve)
        indices.append(ds.domain_index)
    return TrainedModel(state, schema, prefix, omegas, curves, train_cfg, optimizer.t, indices)


def predict_future(model: TrainedModel) -> ParamVector:
    """Run the generation chain once more from the final memory and last
    realized parameters. No parameters change."""
    gen = generate_next(model.generator_state)
    return ParamVector(gen.omega.value.copy(), model.schema.hash())


def save_model(path: Union[str, Path], model: TrainedModel) -> None:
    st = model.generator_state
    tensors = {f"gen/param/{k}": v for k, v in st.params.items()}
    tensors["gen/z"] = st.z
    for k, (c, h) in enumerate(st.memory):
        tensors[f"gen/memory/{k:03d}/c"] = c
        tensors[f"gen/memory/{k:03d}/h"] = h
    for k, h in enumerate(st.history):
        tensors[f"gen/history/{k:03d}"] = h
    if st.last_omega is not None:
        tensors["gen/last_omega"] = st.last_omega
    tensors["prefix"] = model.prefix_params
    for k, w in enumerate(model.omega_sequence):
        tensors[f"omega/{k:03d}"] = w
    for k, c in enumerate(model.loss_curves):
        tensors[f"loss/{k:03d}"] = np.asarray(c)
    meta = {
        "schema": model.schema.to_dict(),
        "generator": {"config": st.config.to_dict(), "step_index": st.step_index,
                      "history_len": len(st.history)},
        "train_config": model.train_config.to_dict(),
        "optimizer_steps": model.optimizer_steps,
        "domain_indices": model.domain_indices,
        "num_domains": model.num_domains,
    }
    serialize.save(path, "drain_model", meta, tensors)


def load_model(path: Union[str, Path]) -> TrainedModel:
    _, meta, tensors = serialize.load(path, expect_kind="drain_model")
    try:
        state = state_from_bundle(meta["generator"], tensors, prefix="gen/")
        n = meta["num_domains"]
        return TrainedModel(
            state,
            NetSchema.from_dict(meta["schema"]),
            tensors["prefix"],
            [tensors[f"omega/{k:03d}"] for k in range(n)],
            [list(tensors[f"loss/{k:03d}"]) for k in range(n)],
            TrainConfig(**meta["train_config"]),
            meta["optimizer_steps"],
            list(meta["domain_indices"]),
        )
    except (KeyError, TypeError) as exc:
        raise serialize.CheckpointError(f"{path}: incomplete model checkpoint ({exc})") from exc
