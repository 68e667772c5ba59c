"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every operation appends a node to a :class:`Tape`. Node ids increase
monotonically, so the id order is a topological order and :func:`backward`
simply walks the ids downwards from the root.

Broadcasting is deliberately absent: elementwise operands must have equal
shapes, except that either side may be a 0-d scalar. The only exception is
:func:`add_bias`, which adds a vector to every row of a matrix.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

BCE_EPS = 1e-12

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    """Operands of a primitive op do not conform."""


class NonFiniteError(FloatingPointError):
    """A forward value contained NaN or Inf."""


def _as_array(value: ArrayLike) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def _all_finite(arr: np.ndarray) -> bool:
    # A finite sum implies finite entries; only fall back to the full scan otherwise.
    if np.isfinite(arr.sum()):
        return True
    return bool(np.isfinite(arr).all())


class Var:
    """Handle to a node on a tape. ``value`` is the cached forward result."""

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.value.shape})"

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __mul__(self, other: "Var") -> "Var":
        return mul(self, other)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)

    def __neg__(self) -> "Var":
        return scale(self, -1.0)


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self) -> None:
        self._ops: List[str] = []
        self._parents: List[Tuple[int, ...]] = []
        self._backward: List[Optional[BackwardFn]] = []
        self._values: List[np.ndarray] = []
        self._needs_grad: List[bool] = []

    def __len__(self) -> int:
        return len(self._ops)

    def var(self, value: ArrayLike) -> Var:
        """Leaf whose gradient is wanted (a parameter or a differentiable input)."""
        return self._leaf(value, "leaf", True)

    def constant(self, value: ArrayLike) -> Var:
        """Leaf that never receives gradient (data, detached values)."""
        return self._leaf(value, "const", False)

    def _leaf(self, value: ArrayLike, op: str, needs_grad: bool) -> Var:
        arr = _as_array(value)
        if not _all_finite(arr):
            raise NonFiniteError(f"{op}: input contains NaN or Inf")
        return self._push(op, arr, (), None, needs_grad)

    def record(self, op: str, value: np.ndarray, parents: Sequence[Var], backward_fn: BackwardFn) -> Var:
        for p in parents:
            if p.tape is not self:
                raise ValueError(f"{op}: operand {p!r} belongs to a different tape")
        if not _all_finite(value):
            raise NonFiniteError(f"{op}: forward value contains NaN or Inf")
        ids = tuple(p.id for p in parents)
        needs = any(self._needs_grad[i] for i in ids)
        return self._push(op, value, ids, backward_fn, needs)

    def _push(self, op, value, parents, backward_fn, needs_grad) -> Var:
        node_id = len(self._ops)
        self._ops.append(op)
        self._parents.append(parents)
        self._backward.append(backward_fn)
        self._values.append(value)
        self._needs_grad.append(needs_grad)
        return Var(self, node_id, value)

    def needs_grad(self, v: Var) -> bool:
        return self._needs_grad[v.id]

    def op(self, node_id: int) -> str:
        return self._ops[node_id]

    def parents(self, node_id: int) -> Tuple[int, ...]:
        return self._parents[node_id]


class GradientMap:
    """Gradients keyed by node id; nodes the root does not depend on read as zero."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, key: Union[Var, int]) -> np.ndarray:
        node_id = key.id if isinstance(key, Var) else key
        if node_id in self._grads:
            return self._grads[node_id]
        return np.zeros_like(self._tape._values[node_id])

    def __contains__(self, key: Union[Var, int]) -> bool:
        node_id = key.id if isinstance(key, Var) else key
        return node_id in self._grads


def backward(root: Var) -> GradientMap:
    """Reverse sweep from a scalar ``root``.

    Gradients from multiple consumers are summed.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.value.shape}")
    tape = root.tape
    grads: Dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
    needs = tape._needs_grad
    for node_id in range(root.id, -1, -1):
        g = grads.get(node_id)
        if g is None:
            continue
        fn = tape._backward[node_id]
        if fn is None:
            continue
        parent_ids = tape._parents[node_id]
        parent_grads = fn(g)
        for pid, pg in zip(parent_ids, parent_grads):
            if pg is None or not needs[pid]:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return GradientMap(tape, grads)


def _tape_of(*vars_: Var) -> Tape:
    return vars_[0].tape


def _check_elementwise(op: str, a: Var, b: Var) -> None:
    sa, sb = a.value.shape, b.value.shape
    if sa != sb and sa != () and sb != ():
        raise ShapeError(f"{op}: shape mismatch {sa} vs {sb}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Only the scalar case can differ: a 0-d operand collects the full sum.
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum())


def add(a: Var, b: Var) -> Var:
    _check_elementwise("add", a, b)
    sa, sb = a.value.shape, b.value.shape
    return _tape_of(a).record(
        "add", a.value + b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb))
    )


def sub(a: Var, b: Var) -> Var:
    _check_elementwise("sub", a, b)
    sa, sb = a.value.shape, b.value.shape
    return _tape_of(a).record(
        "sub", a.value - b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb))
    )


def mul(a: Var, b: Var) -> Var:
    _check_elementwise("mul", a, b)
    av, bv = a.value, b.value
    return _tape_of(a).record(
        "mul", av * bv, (a, b), lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape))
    )


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return _tape_of(a).record("scale", a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Var, b: Var) -> Var:
    """``a @ b`` for ``a`` of rank 1 or 2 and ``b`` of rank 2."""
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {av.shape} vs {bv.shape}")

    tape = _tape_of(a)
    need_a, need_b = tape.needs_grad(a), tape.needs_grad(b)

    def back(g):
        ga = g @ bv.T if need_a else None
        gb = None
        if need_b:
            gb = np.outer(av, g) if av.ndim == 1 else av.T @ g
        return ga, gb

    return tape.record("matmul", av @ bv, (a, b), back)


def add_bias(x: Var, b: Var) -> Var:
    """Add vector ``b`` (k,) to every row of ``x`` (n, k)."""
    xv, bv = x.value, b.value
    if xv.ndim != 2 or bv.ndim != 1 or xv.shape[1] != bv.shape[0]:
        raise ShapeError(f"add_bias: shape mismatch {xv.shape} vs {bv.shape}")
    return _tape_of(x).record("add_bias", xv + bv, (x, b), lambda g: (g, g.sum(axis=0)))


def sum(a: Var) -> Var:  # noqa: A001 - mirrors the op name
    shape = a.value.shape
    return _tape_of(a).record("sum", np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Var) -> Var:
    shape, n = a.value.shape, a.value.size
    return _tape_of(a).record(
        "mean", np.asarray(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / n),)
    )


def relu(a: Var) -> Var:
    out = np.maximum(a.value, 0.0)
    return _tape_of(a).record("relu", out, (a,), lambda g: (g * (out > 0),))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _tape_of(a).record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Var) -> Var:
    out = _sigmoid(a.value)
    return _tape_of(a).record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def identity(a: Var) -> Var:
    return a


def concat(parts: Sequence[Var]) -> Var:
    """Concatenate rank-1 vars end to end."""
    if not parts:
        raise ShapeError("concat: no operands")
    for p in parts:
        if p.value.ndim != 1:
            raise ShapeError(f"concat: operands must be vectors, got shape {p.value.shape}")
    sizes = [p.value.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _tape_of(*parts).record("concat", np.concatenate([p.value for p in parts]), tuple(parts), back)


def slice(a: Var, start: int, stop: int) -> Var:  # noqa: A001 - mirrors the op name
    """Contiguous range ``[start, stop)`` of a rank-1 var."""
    av = a.value
    if av.ndim != 1 or not (0 <= start <= stop <= av.shape[0]):
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for shape {av.shape}")
    n = av.shape[0]

    def back(g):
        full = np.zeros(n)
        full[start:stop] = g
        return (full,)

    return _tape_of(a).record("slice", av[start:stop], (a,), back)


def reshape(a: Var, shape: Tuple[int, ...]) -> Var:
    old = a.value.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from exc
    return _tape_of(a).record("reshape", out, (a,), lambda g: (g.reshape(old),))


def loss_bce(pred: Var, label: ArrayLike) -> Var:
    """Mean binary cross-entropy. ``pred`` is clamped to ``[eps, 1 - eps]``."""
    y = _as_array(label)
    p = pred.value
    if p.shape != y.shape:
        raise ShapeError(f"loss_bce: shape mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    value = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)

    def back(g):
        d = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n
        return (float(g) * d * inside,)

    return _tape_of(pred).record("loss_bce", np.asarray(value), (pred,), back)


def loss_mse(pred: Var, target: ArrayLike) -> Var:
    t = _as_array(target)
    p = pred.value
    if p.shape != t.shape:
        raise ShapeError(f"loss_mse: shape mismatch {p.shape} vs {t.shape}")
    diff = p - t
    n = p.size
    return _tape_of(pred).record(
        "loss_mse", np.asarray(np.mean(diff * diff)), (pred,), lambda g: (float(g) * 2.0 * diff / n,)
    )

