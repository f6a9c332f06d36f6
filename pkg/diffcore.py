#!/usr/bin/env python3
"""
Minimal reverse-mode differentiation core for NID Lab.

This module provides:
- An immutable float64 Tensor, optionally recorded on a Tape
- A fixed primitive set, each with a forward and an adjoint rule
- Gradient extraction and a central finite-difference checker
- RMSProp (per-tensor state and a named-parameter wrapper)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _softmax

from nidlab_errors import DiffCoreError

LOG_EPS = 1e-12
DEFAULT_RHO = 0.99
DEFAULT_EPS = 1e-8
DEFAULT_LR = 1e-2

PRIMITIVES = (
    "matmul",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "softmax",
    "log",
    "conv1d",
    "concat",
    "sum",
    "mean",
    "select_rows",
    "reshape",
    "transpose",
    "bce",
)


class Tensor:
    """Immutable float64 array, optionally a node on a Tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data: Any, tape: Optional["Tape"] = None, node: int = -1):
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise DiffCoreError(
                code="non_finite",
                message="Tensor values must be finite.",
                diagnostics={"shape": list(array.shape)},
            )
        array.setflags(write=False)
        self.data = array
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "TensorLike") -> "Tensor":
        return add(self, other)

    def __radd__(self, other: "TensorLike") -> "Tensor":
        return add(other, self)

    def __sub__(self, other: "TensorLike") -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: "TensorLike") -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: "TensorLike") -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "TensorLike") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"


TensorLike = Union[Tensor, np.ndarray, float, Sequence[float]]


@dataclass
class TapeEntry:
    """One recorded primitive application."""

    op: str
    inputs: Tuple[Optional[int], ...]
    output: int
    operands: Tuple[np.ndarray, ...]
    saved: Dict[str, Any] = field(default_factory=dict)


class Tape:
    """Topologically ordered record of one forward pass."""

    def __init__(self) -> None:
        self.values: List[np.ndarray] = []
        self.entries: List[TapeEntry] = []
        self.params: Dict[str, int] = {}

    def param(self, name: str, value: Any) -> Tensor:
        """Register a named parameter and return its tensor."""

        if name in self.params:
            raise DiffCoreError(code="duplicate_parameter", message=f"Parameter `{name}` registered twice.")
        tensor = self._node(value)
        self.params[name] = tensor.node
        return tensor

    def _node(self, value: Any) -> Tensor:
        tensor = Tensor(value, tape=self, node=len(self.values))
        self.values.append(tensor.data)
        return tensor


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _shared_tape(operands: Sequence[Tensor]) -> Optional[Tape]:
    tapes = {id(t.tape): t.tape for t in operands if t.tape is not None}
    if len(tapes) > 1:
        raise DiffCoreError(code="tape_mismatch", message="Operands belong to different tapes.")
    return next(iter(tapes.values()), None)


def _record(op: str, operands: Sequence[Tensor], out: np.ndarray, **saved: Any) -> Tensor:
    tape = _shared_tape(operands)
    if tape is None:
        return Tensor(out)
    result = tape._node(out)
    tape.entries.append(
        TapeEntry(
            op=op,
            inputs=tuple(t.node if t.tape is tape else None for t in operands),
            output=result.node,
            operands=tuple(t.data for t in operands),
            saved=saved,
        )
    )
    return result


def _shape_error(op: str, *shapes: Tuple[int, ...]) -> DiffCoreError:
    listed = " and ".join(str(tuple(s)) for s in shapes)
    return DiffCoreError(
        code="shape_mismatch",
        message=f"{op}: incompatible shapes {listed}.",
        diagnostics={"op": op, "shapes": [list(s) for s in shapes]},
    )


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


AdjointRule = Callable[[np.ndarray, TapeEntry], Tuple[Optional[np.ndarray], ...]]
_ADJOINTS: Dict[str, AdjointRule] = {}


def _adjoint(op: str) -> Callable[[AdjointRule], AdjointRule]:
    def register(rule: AdjointRule) -> AdjointRule:
        _ADJOINTS[op] = rule
        return rule

    return register


# --- elementwise -----------------------------------------------------------


def _binary(op: str, a: TensorLike, b: TensorLike, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Tensor:
    left, right = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(left.shape, right.shape)
    except ValueError:
        raise _shape_error(op, left.shape, right.shape) from None
    return _record(op, (left, right), fn(left.data, right.data))


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary("add", a, b, np.add)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary("sub", a, b, np.subtract)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary("mul", a, b, np.multiply)


@_adjoint("add")
def _add_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    a, b = entry.operands
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_adjoint("sub")
def _sub_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    a, b = entry.operands
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_adjoint("mul")
def _mul_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    a, b = entry.operands
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def sigmoid(x: TensorLike) -> Tensor:
    t = as_tensor(x)
    return _record("sigmoid", (t,), expit(t.data))


@_adjoint("sigmoid")
def _sigmoid_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    y = expit(entry.operands[0])
    return (g * y * (1.0 - y),)


def tanh(x: TensorLike) -> Tensor:
    t = as_tensor(x)
    return _record("tanh", (t,), np.tanh(t.data))


@_adjoint("tanh")
def _tanh_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    y = np.tanh(entry.operands[0])
    return (g * (1.0 - y * y),)


def softmax(x: TensorLike) -> Tensor:
    """Softmax over the last axis (row-wise for matrices)."""

    t = as_tensor(x)
    if t.data.ndim == 0:
        raise _shape_error("softmax", t.shape)
    return _record("softmax", (t,), _softmax(t.data, axis=-1))


@_adjoint("softmax")
def _softmax_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    y = _softmax(entry.operands[0], axis=-1)
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


def log(x: TensorLike) -> Tensor:
    """Natural log with the argument floored at LOG_EPS."""

    t = as_tensor(x)
    return _record("log", (t,), np.log(np.maximum(t.data, LOG_EPS)))


@_adjoint("log")
def _log_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    x = entry.operands[0]
    live = x >= LOG_EPS
    return (np.where(live, g / np.maximum(x, LOG_EPS), 0.0),)


# --- linear algebra and structure ------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix-matrix or matrix-vector product."""

    left, right = as_tensor(a), as_tensor(b)
    if left.data.ndim != 2 or right.data.ndim not in (1, 2) or left.shape[1] != right.shape[0]:
        raise _shape_error("matmul", left.shape, right.shape)
    return _record("matmul", (left, right), left.data @ right.data)


@_adjoint("matmul")
def _matmul_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    a, b = entry.operands
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _shift_columns(x: np.ndarray, shift: int) -> np.ndarray:
    """out[..., p] = x[..., p - shift] with zeros shifted in."""

    out = np.zeros_like(x)
    width = x.shape[-1]
    if abs(shift) >= width:
        return out
    if shift >= 0:
        out[..., shift:] = x[..., : width - shift]
    else:
        out[..., : width + shift] = x[..., -shift:]
    return out


def conv1d(x: TensorLike, kernel: TensorLike) -> Tensor:
    """Same-size zero-padded convolution of every row with one kernel.

    out[r, p] = sum_l kernel[l] * x[r, p - l] for l in [-S, S], where the
    kernel has odd length 2S + 1 and index S holds l = 0.
    """

    rows, k = as_tensor(x), as_tensor(kernel)
    if rows.data.ndim != 2 or k.data.ndim != 1 or k.shape[0] % 2 != 1:
        raise _shape_error("conv1d", rows.shape, k.shape)
    half = k.shape[0] // 2
    out = np.zeros_like(rows.data)
    for j, weight in enumerate(k.data):
        out += weight * _shift_columns(rows.data, j - half)
    return _record("conv1d", (rows, k), out)


@_adjoint("conv1d")
def _conv1d_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    x, kernel = entry.operands
    half = kernel.shape[0] // 2
    grad_x = np.zeros_like(x)
    grad_k = np.zeros_like(kernel)
    for j, weight in enumerate(kernel):
        shift = j - half
        grad_x += weight * _shift_columns(g, -shift)
        grad_k[j] = np.sum(g * _shift_columns(x, shift))
    return grad_x, grad_k


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise _shape_error("concat", *(p.shape for p in parts)) from None
    sizes = [p.shape[axis] for p in parts]
    return _record("concat", parts, out, axis=axis, sizes=sizes)


@_adjoint("concat")
def _concat_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    splits = np.cumsum(entry.saved["sizes"])[:-1]
    return tuple(np.split(g, splits, axis=entry.saved["axis"]))


def sum(x: TensorLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    t = as_tensor(x)
    return _record("sum", (t,), np.sum(t.data, axis=axis), axis=axis)


@_adjoint("sum")
def _sum_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    x = entry.operands[0]
    axis = entry.saved["axis"]
    expanded = g if axis is None else np.expand_dims(g, axis)
    return (np.broadcast_to(expanded, x.shape).copy(),)


def mean(x: TensorLike, axis: Optional[int] = None) -> Tensor:
    t = as_tensor(x)
    return _record("mean", (t,), np.mean(t.data, axis=axis), axis=axis)


@_adjoint("mean")
def _mean_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    x = entry.operands[0]
    axis = entry.saved["axis"]
    count = x.size if axis is None else x.shape[axis]
    expanded = g if axis is None else np.expand_dims(g, axis)
    return (np.broadcast_to(expanded / count, x.shape).copy(),)


def select_rows(x: TensorLike, rows: Union[Sequence[int], Sequence[bool], np.ndarray]) -> Tensor:
    """Row selection by integer indices or a boolean mask."""

    t = as_tensor(x)
    selector = np.asarray(rows)
    if selector.dtype == bool:
        if selector.shape != (t.shape[0],):
            raise _shape_error("select_rows", t.shape, selector.shape)
        selector = np.flatnonzero(selector)
    selector = selector.astype(np.int64)
    if t.data.ndim < 1 or (selector.size and (selector.min() < 0 or selector.max() >= t.shape[0])):
        raise _shape_error("select_rows", t.shape, selector.shape)
    return _record("select_rows", (t,), t.data[selector], rows=selector)


@_adjoint("select_rows")
def _select_rows_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    grad = np.zeros_like(entry.operands[0])
    np.add.at(grad, entry.saved["rows"], g)
    return (grad,)


def reshape(x: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    t = as_tensor(x)
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", t.shape, tuple(shape)) from None
    return _record("reshape", (t,), out)


@_adjoint("reshape")
def _reshape_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    return (g.reshape(entry.operands[0].shape),)


def transpose(x: TensorLike) -> Tensor:
    t = as_tensor(x)
    if t.data.ndim != 2:
        raise _shape_error("transpose", t.shape)
    return _record("transpose", (t,), t.data.T)


@_adjoint("transpose")
def _transpose_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    return (g.T,)


# --- loss -----------------------------------------------------------------


def bce(target: TensorLike, pred: TensorLike) -> Tensor:
    """Mean binary cross entropy; log arguments are floored at LOG_EPS."""

    t, p = as_tensor(target), as_tensor(pred)
    if t.shape != p.shape:
        raise _shape_error("bce", t.shape, p.shape)
    if np.any(p.data < 0.0) or np.any(p.data > 1.0) or np.any(t.data < 0.0) or np.any(t.data > 1.0):
        raise DiffCoreError(
            code="invalid_probability",
            message="bce expects target and prediction values in [0, 1].",
            diagnostics={"shape": list(p.shape)},
        )
    hit = np.log(np.maximum(p.data, LOG_EPS))
    miss = np.log(np.maximum(1.0 - p.data, LOG_EPS))
    terms = -(t.data * hit + (1.0 - t.data) * miss)
    return _record("bce", (t, p), np.mean(terms))


@_adjoint("bce")
def _bce_adjoint(g: np.ndarray, entry: TapeEntry) -> Tuple[Optional[np.ndarray], ...]:
    t, p = entry.operands
    scale = g / p.size
    p_live = p >= LOG_EPS
    q_live = (1.0 - p) >= LOG_EPS
    d_pred = np.where(p_live, -t / np.maximum(p, LOG_EPS), 0.0) + np.where(
        q_live, (1.0 - t) / np.maximum(1.0 - p, LOG_EPS), 0.0
    )
    d_target = -(np.log(np.maximum(p, LOG_EPS)) - np.log(np.maximum(1.0 - p, LOG_EPS)))
    return scale * d_target, scale * d_pred


# --- gradients ------------------------------------------------------------


def primitive_catalog() -> Tuple[str, ...]:
    """Primitives that have both a forward function and a registered adjoint."""

    return tuple(op for op in PRIMITIVES if op in _ADJOINTS and callable(globals().get(op)))


def grad(loss: Tensor, tape: Tape) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter registered on the tape."""

    if loss.shape != ():
        raise DiffCoreError(
            code="non_scalar_loss",
            message=f"Loss must be a scalar, got shape {loss.shape}.",
            diagnostics={"shape": list(loss.shape)},
        )
    if loss.tape is not None and loss.tape is not tape:
        raise DiffCoreError(code="tape_mismatch", message="Loss was not recorded on this tape.")

    adjoints: Dict[int, np.ndarray] = {}
    if loss.tape is tape:
        adjoints[loss.node] = np.ones(())
        for entry in reversed(tape.entries):
            upstream = adjoints.pop(entry.output, None)
            if upstream is None:
                continue
            for node, partial in zip(entry.inputs, _ADJOINTS[entry.op](upstream, entry)):
                if node is None or partial is None:
                    continue
                adjoints[node] = adjoints[node] + partial if node in adjoints else partial

    return {
        name: np.array(adjoints.get(node, np.zeros_like(tape.values[node])), dtype=np.float64)
        for name, node in tape.params.items()
    }


def value_and_grad(
    fn: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, np.ndarray]
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Evaluate fn on a fresh tape and return (loss, gradients)."""

    tape = Tape()
    bound = {name: tape.param(name, value) for name, value in params.items()}
    loss = fn(bound)
    return loss.item(), grad(loss, tape)


def check_gradients(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central differences.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """

    if h <= 0.0:
        raise DiffCoreError(code="invalid_step", message=f"Finite-difference step must be positive, got {h}.")

    _, analytic = value_and_grad(fn, params)
    worst = 0.0
    for name, value in params.items():
        shifted = np.array(value, dtype=np.float64)
        flat = shifted.reshape(-1)
        expected = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = _evaluate(fn, params, name, shifted)
            flat[i] = original - h
            minus = _evaluate(fn, params, name, shifted)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            error = abs(expected[i] - numeric) / max(1.0, abs(expected[i]), abs(numeric))
            worst = max(worst, error)
    return worst


def _evaluate(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    name: str,
    shifted: np.ndarray,
) -> float:
    bound = {key: Tensor(shifted if key == name else value) for key, value in params.items()}
    return fn(bound).item()


# --- optimizer ------------------------------------------------------------


@dataclass
class OptimizerState:
    """RMSProp state for one parameter tensor."""

    square_avg: np.ndarray
    rho: float = DEFAULT_RHO
    eps: float = DEFAULT_EPS
    lr: float = DEFAULT_LR

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise DiffCoreError(code="invalid_optimizer", message=f"rho must be in (0, 1), got {self.rho}.")
        if self.eps <= 0.0:
            raise DiffCoreError(code="invalid_optimizer", message=f"eps must be positive, got {self.eps}.")


def rmsprop_step(
    param: np.ndarray, gradient: np.ndarray, state: OptimizerState
) -> Tuple[np.ndarray, OptimizerState]:
    """s <- rho*s + (1-rho)*g^2; param <- param - lr*g/(sqrt(s) + eps)."""

    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(gradient, dtype=np.float64)
    if p.shape != g.shape or g.shape != state.square_avg.shape:
        raise _shape_error("rmsprop_step", p.shape, g.shape, state.square_avg.shape)
    if not np.all(np.isfinite(g)):
        raise DiffCoreError(
            code="non_finite_gradient",
            message="Gradient contains NaN or Inf.",
            diagnostics={"shape": list(g.shape)},
        )
    square_avg = state.rho * state.square_avg + (1.0 - state.rho) * g * g
    updated = p - state.lr * g / (np.sqrt(square_avg) + state.eps)
    return updated, replace(state, square_avg=square_avg)


class RMSProp:
    """RMSProp over a named parameter set."""

    def __init__(
        self,
        params: Dict[str, np.ndarray],
        lr: float = DEFAULT_LR,
        rho: float = DEFAULT_RHO,
        eps: float = DEFAULT_EPS,
    ):
        self.states = {
            name: OptimizerState(np.zeros_like(np.asarray(value, dtype=np.float64)), rho=rho, eps=eps, lr=lr)
            for name, value in params.items()
        }

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        updated: Dict[str, np.ndarray] = {}
        for name, value in params.items():
            new_value, self.states[name] = rmsprop_step(value, grads[name], self.states[name])
            updated[name] = new_value
        return updated
