"""Target network with a fixed topology and externally supplied parameters.

The network is a plain MLP. Its parameters live in one flat vector per
segment. Layout, fixed so files stay portable: layers in forward order, and
for each layer the weight matrix of shape ``(fan_in, fan_out)`` in row-major
order followed by the bias (if any).

The trailing ``generated_suffix_len`` layers form the *generated* segment,
whose flat vector is produced by the generator. Any earlier layers form the
*prefix* segment and are ordinary trainable parameters.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "identity": ad.identity}
OUTPUT_ACTIVATIONS = {"sigmoid": ad.sigmoid, "identity": ad.identity}

PARAM_MAGIC = b"DRPV"
_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"
    has_bias: bool = True


@dataclass(frozen=True)
class NetSchema:
    input_dim: int
    layers: Tuple[LayerSpec, ...]
    output_activation: str = "sigmoid"
    generated_suffix_len: Optional[int] = None

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if self.generated_suffix_len is None:
            object.__setattr__(self, "generated_suffix_len", len(layers))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not layers:
            raise ValueError("schema needs at least one layer")
        for spec in layers:
            if spec.width < 1:
                raise ValueError(f"layer width must be >= 1, got {spec.width}")
            if spec.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {spec.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 1 <= self.generated_suffix_len <= len(layers):
            raise ValueError(
                f"generated_suffix_len must be in [1, {len(layers)}], got {self.generated_suffix_len}"
            )

    @classmethod
    def mlp(cls, input_dim: int, hidden: Sequence[int], output_dim: int = 1,
            hidden_activation: str = "relu", output_activation: str = "sigmoid",
            bias: bool = True, generated_suffix_len: Optional[int] = None) -> "NetSchema":
        layers = [LayerSpec(w, hidden_activation, bias) for w in hidden]
        layers.append(LayerSpec(output_dim, "identity", bias))
        return cls(input_dim, tuple(layers), output_activation, generated_suffix_len)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    @property
    def prefix_len(self) -> int:
        return len(self.layers) - self.generated_suffix_len

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetSchema":
        layers = tuple(LayerSpec(**l) for l in d["layers"])
        return cls(d["input_dim"], layers, d.get("output_activation", "sigmoid"),
                   d.get("generated_suffix_len"))

    def hash(self) -> int:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return zlib.crc32(canon.encode("utf-8"))


def layer_shapes(schema: NetSchema) -> List[Tuple[int, int, bool]]:
    """(fan_in, fan_out, has_bias) for every layer in forward order."""
    shapes = []
    fan_in = schema.input_dim
    for spec in schema.layers:
        shapes.append((fan_in, spec.width, spec.has_bias))
        fan_in = spec.width
    return shapes


def _count(shapes) -> int:
    return int(np.sum([i * o + (o if b else 0) for i, o, b in shapes], dtype=np.int64)) if shapes else 0


def param_count(schema: NetSchema) -> int:
    """Number of generated parameters (weights and biases of the suffix layers)."""
    return _count(layer_shapes(schema)[schema.prefix_len:])


def prefix_param_count(schema: NetSchema) -> int:
    return _count(layer_shapes(schema)[:schema.prefix_len])


def _segment(schema: NetSchema, segment: str):
    shapes = layer_shapes(schema)
    if segment == "generated":
        return shapes[schema.prefix_len:]
    if segment == "prefix":
        return shapes[:schema.prefix_len]
    raise ValueError(f"unknown segment {segment!r}")


@dataclass
class ParamVector:
    """Flat parameter vector bound to a schema by hash."""

    values: np.ndarray
    owner_schema_hash: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"ParamVector must be 1-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ParamVector contains NaN or Inf")

    def __len__(self) -> int:
        return self.values.shape[0]


LayerParams = List[Tuple[np.ndarray, Optional[np.ndarray]]]


def flatten(layers: LayerParams, schema: Optional[NetSchema] = None) -> ParamVector:
    chunks = []
    for w, b in layers:
        chunks.append(np.asarray(w, dtype=np.float64).ravel())
        if b is not None:
            chunks.append(np.asarray(b, dtype=np.float64).ravel())
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParamVector(values, schema.hash() if schema is not None else 0)


def unflatten(schema: NetSchema, vector: Union[ParamVector, np.ndarray],
              segment: str = "generated") -> LayerParams:
    values = vector.values if isinstance(vector, ParamVector) else np.asarray(vector, dtype=np.float64)
    shapes = _segment(schema, segment)
    expected = _count(shapes)
    if values.shape != (expected,):
        raise ValueError(f"unflatten: expected length {expected}, got {values.shape[0] if values.ndim else values.shape}")
    out: LayerParams = []
    pos = 0
    for fan_in, fan_out, has_bias in shapes:
        w = values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        pos += fan_in * fan_out
        b = None
        if has_bias:
            b = values[pos:pos + fan_out].copy()
            pos += fan_out
        out.append((w, b))
    return out


def init_params(schema: NetSchema, rng: np.random.Generator, segment: str = "prefix") -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    layers: LayerParams = []
    for fan_in, fan_out, has_bias in _segment(schema, segment):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out) if has_bias else None
        layers.append((w, b))
    return flatten(layers).values


def _split_var(schema: NetSchema, vec: Optional[ad.Var], segment: str):
    shapes = _segment(schema, segment)
    expected = _count(shapes)
    if not shapes:
        return []
    if vec is None or vec.value.shape != (expected,):
        got = None if vec is None else vec.value.shape
        raise ad.ShapeError(f"forward: {segment} parameters must have shape ({expected},), got {got}")
    out = []
    pos = 0
    for fan_in, fan_out, has_bias in shapes:
        w = ad.reshape(ad.slice(vec, pos, pos + fan_in * fan_out), (fan_in, fan_out))
        pos += fan_in * fan_out
        b = None
        if has_bias:
            b = ad.slice(vec, pos, pos + fan_out)
            pos += fan_out
        out.append((w, b))
    return out


def forward(schema: NetSchema, omega: ad.Var, prefix: Optional[ad.Var], x: Union[ad.Var, np.ndarray]) -> ad.Var:
    """Differentiable forward pass.

    Returns shape ``(n,)`` when the output layer has width 1, else ``(n, k)``.
    """
    if not isinstance(x, ad.Var):
        x = omega.tape.constant(x)
    if x.value.ndim != 2 or x.value.shape[1] != schema.input_dim:
        raise ad.ShapeError(f"forward: expected input of shape (n, {schema.input_dim}), got {x.value.shape}")
    params = _split_var(schema, prefix, "prefix") + _split_var(schema, omega, "generated")
    h = x
    for spec, (w, b) in zip(schema.layers, params):
        h = ad.matmul(h, w)
        if b is not None:
            h = ad.add_bias(h, b)
        h = ACTIVATIONS[spec.activation](h)
    h = OUTPUT_ACTIVATIONS[schema.output_activation](h)
    if schema.output_dim == 1:
        h = ad.reshape(h, (h.value.shape[0],))
    return h


def predict(schema: NetSchema, omega: Union[ParamVector, np.ndarray],
            prefix: Optional[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Non-differentiable convenience wrapper around :func:`forward`."""
    values = omega.values if isinstance(omega, ParamVector) else omega
    tape = ad.Tape()
    w = tape.constant(values)
    p = tape.constant(prefix) if prefix is not None and len(prefix) else None
    return forward(schema, w, p, np.asarray(x, dtype=np.float64)).value


def save_param_vector(path: Union[str, Path], vector: ParamVector) -> None:
    """16-byte header (magic, schema hash, length) then little-endian float64 values."""
    data = _HEADER.pack(PARAM_MAGIC, vector.owner_schema_hash & 0xFFFFFFFF, len(vector))
    data += vector.values.astype("<f8").tobytes()
    Path(path).write_bytes(data)


def load_param_vector(path: Union[str, Path]) -> ParamVector:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated parameter file header")
    magic, schema_hash, length = _HEADER.unpack_from(raw)
    if magic != PARAM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, not a parameter vector file")
    body = raw[_HEADER.size:]
    if len(body) != 8 * length:
        raise ValueError(f"{path}: header declares {length} values, body holds {len(body) / 8:g}")
    return ParamVector(np.frombuffer(body, dtype="<f8").astype(np.float64), schema_hash)
