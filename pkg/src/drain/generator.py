"""Recurrent generator of target-network parameters.

One generation step chains four learnable pieces:

* ``g0``    initial encoder: noise ``z`` -> starting LSTM memory
* ``eta``   parameter encoder: previous parameter vector -> LSTM input ``a``
* ``theta`` stacked LSTM cells: (memory, ``a``) -> (new memory, latent ``h``)
* ``xi``    decoder: ``h`` -> raw parameter vector

and finally a skip connection that adds ``lam`` times the sum of the last
``tau`` realized parameter vectors. The encoder, decoder and initial encoder
are two-layer MLPs with a tanh hidden layer and a linear output.

For the very first domain there is no previous parameter vector; the LSTM
input is zero and the memory comes from ``g0(z)``, computed on the tape so
``g0`` is trained along with everything else.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from . import serialize
from .netgraph import ParamVector

Memory = List[Tuple[np.ndarray, np.ndarray]]
VarMemory = List[Tuple[ad.Var, ad.Var]]


@dataclass(frozen=True)
class GeneratorConfig:
    target_param_count: int
    latent_dim: int = 16
    lstm_depth: int = 10
    lam: float = 0.1
    tau: int = 3
    encoder_hidden: int = 32
    decoder_hidden: int = 32
    init_hidden: int = 32

    def __post_init__(self):
        if self.target_param_count < 1:
            raise ValueError("target_param_count must be >= 1")
        if self.latent_dim < 1 or self.lstm_depth < 1:
            raise ValueError("latent_dim and lstm_depth must be >= 1")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        for name in ("encoder_hidden", "decoder_hidden", "init_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def skip_enabled(self) -> bool:
        return self.tau > 0

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: GeneratorConfig) -> Dict[str, Tuple[int, ...]]:
    L, N = cfg.latent_dim, cfg.target_param_count
    shapes = {
        "g0.w1": (L, cfg.init_hidden), "g0.b1": (cfg.init_hidden,),
        "g0.w2": (cfg.init_hidden, 2 * cfg.lstm_depth * L), "g0.b2": (2 * cfg.lstm_depth * L,),
        "eta.w1": (N, cfg.encoder_hidden), "eta.b1": (cfg.encoder_hidden,),
        "eta.w2": (cfg.encoder_hidden, L), "eta.b2": (L,),
        "xi.w1": (L, cfg.decoder_hidden), "xi.b1": (cfg.decoder_hidden,),
        "xi.w2": (cfg.decoder_hidden, N), "xi.b2": (N,),
    }
    for k in range(cfg.lstm_depth):
        shapes[f"theta.{k}.w"] = (2 * L, 4 * L)
        shapes[f"theta.{k}.b"] = (4 * L,)
    return shapes


def _fan_in(name: str, shapes: Dict[str, Tuple[int, ...]]) -> int:
    # A bias shares the fan-in of the weight matrix it accompanies.
    if name.endswith(".b1"):
        return shapes[name[:-2] + "w1"][0]
    if name.endswith(".b2"):
        return shapes[name[:-2] + "w2"][0]
    if name.endswith(".b"):
        return shapes[name[:-1] + "w"][0]
    return shapes[name][0]


@dataclass
class GeneratorState:
    config: GeneratorConfig
    params: Dict[str, np.ndarray]
    z: np.ndarray
    memory: Memory
    history: Deque[np.ndarray] = field(default_factory=deque)
    step_index: int = 0
    last_omega: Optional[np.ndarray] = None

    def push_history(self, omega: Union[ParamVector, np.ndarray]) -> None:
        values = omega.values if isinstance(omega, ParamVector) else np.asarray(omega, dtype=np.float64)
        if values.shape != (self.config.target_param_count,):
            raise ValueError(
                f"history entry must have length {self.config.target_param_count}, got {values.shape}"
            )
        self.history.append(values.copy())

    def copy(self) -> "GeneratorState":
        return GeneratorState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.z.copy(),
            [(c.copy(), h.copy()) for c, h in self.memory],
            deque((h.copy() for h in self.history), maxlen=self.config.tau),
            self.step_index,
            None if self.last_omega is None else self.last_omega.copy(),
        )


def init_state(cfg: GeneratorConfig, seed: int) -> GeneratorState:
    """Fresh generator: Uniform(+-1/sqrt(fan_in)) parameters, z ~ N(0, I)."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    params = {}
    for name in sorted(shapes):
        bound = 1.0 / np.sqrt(_fan_in(name, shapes))
        params[name] = rng.uniform(-bound, bound, size=shapes[name])
    z = rng.standard_normal(cfg.latent_dim)
    tape = ad.Tape()
    leaves = {k: tape.constant(v) for k, v in params.items() if k.startswith("g0.")}
    memory = [(c.value, h.value) for c, h in initial_memory(cfg, leaves, tape.constant(z))]
    return GeneratorState(cfg, params, z, memory, deque(maxlen=cfg.tau), 0)


def _mlp2(x: ad.Var, p: Dict[str, ad.Var], prefix: str) -> ad.Var:
    hidden = ad.tanh(ad.matmul(x, p[prefix + "w1"]) + p[prefix + "b1"])
    return ad.matmul(hidden, p[prefix + "w2"]) + p[prefix + "b2"]


def initial_memory(cfg: GeneratorConfig, p: Dict[str, ad.Var], z: ad.Var) -> VarMemory:
    flat = _mlp2(z, p, "g0.")
    L = cfg.latent_dim
    out = []
    for k in range(cfg.lstm_depth):
        base = 2 * k * L
        out.append((ad.slice(flat, base, base + L), ad.slice(flat, base + L, base + 2 * L)))
    return out


def encode(p: Dict[str, ad.Var], omega: ad.Var, cfg: GeneratorConfig) -> ad.Var:
    """Map a parameter vector to an LSTM input of width ``latent_dim``."""
    if omega.value.shape != (cfg.target_param_count,):
        raise ad.ShapeError(
            f"encode: expected parameter vector of length {cfg.target_param_count}, got {omega.value.shape}"
        )
    return _mlp2(omega, p, "eta.")


def lstm_step(p: Dict[str, ad.Var], memory: VarMemory, a: ad.Var, cfg: GeneratorConfig) -> Tuple[VarMemory, ad.Var]:
    L = cfg.latent_dim
    if a.value.shape != (L,):
        raise ad.ShapeError(f"step: expected input of shape ({L},), got {a.value.shape}")
    if len(memory) != cfg.lstm_depth:
        raise ad.ShapeError(f"step: expected {cfg.lstm_depth} memory layers, got {len(memory)}")
    new_memory: VarMemory = []
    x = a
    for k, (c, h) in enumerate(memory):
        z = ad.matmul(ad.concat([x, h]), p[f"theta.{k}.w"]) + p[f"theta.{k}.b"]
        i = ad.sigmoid(ad.slice(z, 0, L))
        f = ad.sigmoid(ad.slice(z, L, 2 * L))
        g = ad.tanh(ad.slice(z, 2 * L, 3 * L))
        o = ad.sigmoid(ad.slice(z, 3 * L, 4 * L))
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        new_memory.append((c_new, h_new))
        x = h_new
    return new_memory, x


def decode(p: Dict[str, ad.Var], h: ad.Var) -> ad.Var:
    return _mlp2(h, p, "xi.")


def skip_combine(raw, history: Sequence[np.ndarray], lam: float, tau: int):
    """``raw + lam * sum(history)`` over the last ``tau`` history entries.

    Accepts a tape ``Var`` (result stays on the tape) or a plain array.
    """
    entries = list(history)
    if len(entries) > tau:
        raise ValueError(f"skip_combine: history holds {len(entries)} entries but tau={tau}")
    n = raw.value.shape[0] if isinstance(raw, ad.Var) else np.asarray(raw).shape[0]
    for e in entries:
        if np.shape(e) != (n,):
            raise ValueError(f"skip_combine: history entry of length {np.shape(e)} vs {n}")
    if tau == 0 or not entries or lam == 0:
        return raw
    total = np.sum(entries, axis=0)
    if isinstance(raw, ad.Var):
        return ad.add(raw, raw.tape.constant(lam * total))
    return np.asarray(raw, dtype=np.float64) + lam * total


@dataclass
class Generation:
    """One generation step recorded on a tape."""

    tape: ad.Tape
    leaves: Dict[str, ad.Var]
    omega: ad.Var
    raw: ad.Var
    memory: VarMemory
    latent: ad.Var


def generate_next(state: GeneratorState, tape: Optional[ad.Tape] = None) -> Generation:
    """Build the chain encode -> step -> decode -> skip on a (new) tape.

    The generator parameters become gradient leaves; the previous parameter
    vector, memory and history enter as constants.
    """
    cfg = state.config
    tape = tape if tape is not None else ad.Tape()
    leaves = {k: tape.var(v) for k, v in state.params.items()}
    if state.step_index == 0:
        memory = initial_memory(cfg, leaves, tape.constant(state.z))
        a = tape.constant(np.zeros(cfg.latent_dim))
    else:
        memory = [(tape.constant(c), tape.constant(h)) for c, h in state.memory]
        a = encode(leaves, tape.constant(state.last_omega), cfg)
    new_memory, latent = lstm_step(leaves, memory, a, cfg)
    raw = decode(leaves, latent)
    omega = skip_combine(raw, state.history, cfg.lam, cfg.tau)
    return Generation(tape, leaves, omega, raw, new_memory, latent)


def advance(state: GeneratorState, gen: Generation, omega: np.ndarray) -> None:
    """Commit a finished domain: store the new memory and the realized parameters."""
    state.memory = [(c.value.copy(), h.value.copy()) for c, h in gen.memory]
    state.last_omega = np.array(omega, dtype=np.float64)
    state.push_history(omega)
    state.step_index += 1


def save_state(path: Union[str, Path], state: GeneratorState) -> None:
    tensors = {f"param/{k}": v for k, v in state.params.items()}
    tensors["z"] = state.z
    for k, (c, h) in enumerate(state.memory):
        tensors[f"memory/{k:03d}/c"] = c
        tensors[f"memory/{k:03d}/h"] = h
    for k, h in enumerate(state.history):
        tensors[f"history/{k:03d}"] = h
    if state.last_omega is not None:
        tensors["last_omega"] = state.last_omega
    meta = {"config": state.config.to_dict(), "step_index": state.step_index,
            "history_len": len(state.history)}
    serialize.save(path, "generator", meta, tensors)


def state_from_bundle(meta: dict, tensors: Dict[str, np.ndarray], prefix: str = "") -> GeneratorState:
    cfg = GeneratorConfig(**meta["config"])
    params = {k[len(prefix) + 6:]: v for k, v in tensors.items() if k.startswith(prefix + "param/")}
    memory = [(tensors[f"{prefix}memory/{k:03d}/c"], tensors[f"{prefix}memory/{k:03d}/h"])
              for k in range(cfg.lstm_depth)]
    history = deque((tensors[f"{prefix}history/{k:03d}"] for k in range(meta["history_len"])), maxlen=cfg.tau)
    return GeneratorState(cfg, params, tensors[prefix + "z"], memory, history, meta["step_index"],
                          tensors.get(prefix + "last_omega"))


def load_state(path: Union[str, Path]) -> GeneratorState:
    _, meta, tensors = serialize.load(path, expect_kind="generator")
    return state_from_bundle(meta, tensors)
