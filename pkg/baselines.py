#!/usr/bin/env python3
"""Comparison predictors: MLP, one-layer shared convolution, three-layer convolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

import diffcore as dc
from grid_envs import Action
from nid_model import Hyper, action_onehot, bind, check_state, constants
from nidlab_errors import NidModelError
from scoring_utils import STREAM_INIT, make_rng

BASELINE_KINDS = ("mlp", "conv1", "conv3")
KERNEL_WIDTH = 3
DEFAULT_WIDTHS: Dict[str, int] = {"mlp_hidden": 128, "conv_channels": 16}
MLP_LAYERS = 4
CONV3_LAYERS = 3


@dataclass(frozen=True, eq=False)
class BaselineModel:
    kind: str
    params: Dict[str, np.ndarray]
    hyper: Hyper
    n_objects: int
    n_positions: int
    n_actions: int = 0
    widths: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_WIDTHS))

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return dict(self.params)

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "BaselineModel":
        return BaselineModel.from_parameters(
            self.kind, self.hyper, self.n_objects, self.n_positions, self.n_actions, params, self.widths
        )

    @classmethod
    def from_parameters(
        cls,
        kind: str,
        hyper: Hyper,
        n_objects: int,
        n_positions: int,
        n_actions: int,
        params: Dict[str, np.ndarray],
        widths: Optional[Dict[str, int]] = None,
    ) -> "BaselineModel":
        resolved = {**DEFAULT_WIDTHS, **(widths or {})}
        shapes = parameter_shapes(kind, n_objects, n_positions, n_actions, resolved)
        arrays: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            if name not in params:
                raise NidModelError(code="invalid_parameters", message=f"Missing parameter {name}.")
            array = np.array(params[name], dtype=np.float64)
            if array.shape != shape:
                raise NidModelError(
                    code="invalid_parameters",
                    message=f"{name} has shape {array.shape}, expected {shape}.",
                )
            arrays[name] = array
        return cls(kind, arrays, hyper, n_objects, n_positions, n_actions, resolved)

    def dims(self) -> Dict[str, int]:
        return {"n_objects": self.n_objects, "n_positions": self.n_positions, "n_actions": self.n_actions}

    def predict(self, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
        return _forward(self, constants(self), x, action).data.copy()

    def loss_tensor(
        self,
        bound: Dict[str, dc.Tensor],
        x: np.ndarray,
        target: np.ndarray,
        action: Optional[Action] = None,
    ) -> dc.Tensor:
        return dc.bce(target, _forward(self, bound, x, action))

    def loss_and_grads(
        self, x: np.ndarray, target: np.ndarray, action: Optional[Action] = None
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        tape = dc.Tape()
        value = self.loss_tensor(bind(self, tape), x, target, action)
        return value.item(), dc.grad(value, tape)


def parameter_shapes(
    kind: str,
    n_objects: int,
    n_positions: int,
    n_actions: int = 0,
    widths: Optional[Dict[str, int]] = None,
) -> Dict[str, Tuple[int, ...]]:
    resolved = {**DEFAULT_WIDTHS, **(widths or {})}
    if kind == "mlp":
        hidden = resolved["mlp_hidden"]
        sizes = [n_objects * n_positions + n_actions, hidden, hidden, hidden, n_objects * n_positions]
        shapes: Dict[str, Tuple[int, ...]] = {}
        for i in range(MLP_LAYERS):
            shapes[f"mlp.layer{i + 1}.weight"] = (sizes[i], sizes[i + 1])
            shapes[f"mlp.layer{i + 1}.bias"] = (sizes[i + 1],)
        return shapes
    if kind == "conv1":
        shapes = {"conv1.kernel": (1, KERNEL_WIDTH)}
        if n_actions:
            shapes["conv1.action_kernels"] = (n_actions, KERNEL_WIDTH)
        return shapes
    if kind == "conv3":
        channels = resolved["conv_channels"]
        sizes = [n_objects + n_actions, channels, channels, n_objects]
        shapes = {}
        for i in range(CONV3_LAYERS):
            # taps stacked along rows: rows [l*C_out, (l+1)*C_out) hold offset l
            shapes[f"conv3.layer{i + 1}.weight"] = (KERNEL_WIDTH * sizes[i + 1], sizes[i])
            shapes[f"conv3.layer{i + 1}.bias"] = (sizes[i + 1],)
        return shapes
    raise NidModelError(
        code="unknown_kind",
        message=f"Unknown baseline kind `{kind}`.",
        diagnostics={"available": list(BASELINE_KINDS)},
    )


def _init_bound(kind: str, shape: Tuple[int, ...]) -> float:
    rows, cols = shape
    if kind == "conv3":
        fan_out = rows
        fan_in = KERNEL_WIDTH * cols
        return float(np.sqrt(6.0 / (fan_in + fan_out)))
    return float(np.sqrt(6.0 / (rows + cols)))


def init_baseline(
    kind: str,
    hyper: Hyper,
    n_objects: int,
    n_positions: int,
    rng: Optional[np.random.Generator] = None,
    n_actions: int = 0,
    widths: Optional[Dict[str, int]] = None,
) -> BaselineModel:
    """Glorot-uniform weights with zero biases; the zero scheme zeros everything."""

    shapes = parameter_shapes(kind, n_objects, n_positions, n_actions, widths)
    rng = rng if rng is not None else make_rng(hyper.seed, STREAM_INIT)
    params: Dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if hyper.init == "zero" or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = _init_bound(kind, shape)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return BaselineModel.from_parameters(kind, hyper, n_objects, n_positions, n_actions, params, widths)


def _action_channels(n_actions: int, n_positions: int, action_row: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if action_row is None:
        return None
    return np.repeat(action_row.reshape(n_actions, 1), n_positions, axis=1)


def _forward(
    model: BaselineModel, bound: Dict[str, dc.Tensor], x: np.ndarray, action: Optional[Action]
) -> dc.Tensor:
    state = check_state(model, x)
    action_row = action_onehot(model.n_actions, action)
    if model.kind == "mlp":
        return _mlp_forward(bound, state, action_row)
    if model.kind == "conv1":
        return _conv1_forward(bound, state, action_row)
    return _conv3_forward(bound, state, _action_channels(model.n_actions, model.n_positions, action_row))


def _mlp_forward(bound: Dict[str, dc.Tensor], x: np.ndarray, action_row: Optional[np.ndarray]) -> dc.Tensor:
    features = x.reshape(1, -1)
    if action_row is not None:
        features = np.concatenate([features, action_row.reshape(1, -1)], axis=1)
    hidden: Any = features
    for i in range(1, MLP_LAYERS + 1):
        hidden = dc.add(dc.matmul(hidden, bound[f"mlp.layer{i}.weight"]), bound[f"mlp.layer{i}.bias"])
        if i < MLP_LAYERS:
            hidden = dc.tanh(hidden)
    return dc.softmax(dc.reshape(hidden, x.shape))


def _conv1_forward(bound: Dict[str, dc.Tensor], x: np.ndarray, action_row: Optional[np.ndarray]) -> dc.Tensor:
    kernel = dc.reshape(bound["conv1.kernel"], (KERNEL_WIDTH,))
    logits = dc.conv1d(x, kernel)
    if action_row is not None:
        chosen = dc.select_rows(bound["conv1.action_kernels"], [int(np.argmax(action_row))])
        ones = np.ones((1, x.shape[1]))
        logits = dc.add(logits, dc.conv1d(ones, dc.reshape(chosen, (KERNEL_WIDTH,))))
    return dc.softmax(logits)


def _shift_kernel(offset_index: int) -> np.ndarray:
    kernel = np.zeros(KERNEL_WIDTH)
    kernel[offset_index] = 1.0
    return kernel


def _conv3_forward(
    bound: Dict[str, dc.Tensor], x: np.ndarray, action_channels: Optional[np.ndarray]
) -> dc.Tensor:
    hidden: Any = x if action_channels is None else np.concatenate([x, action_channels], axis=0)
    for i in range(1, CONV3_LAYERS + 1):
        weight = bound[f"conv3.layer{i}.weight"]
        bias = bound[f"conv3.layer{i}.bias"]
        out_channels = bias.shape[0]
        total: Optional[dc.Tensor] = None
        for tap in range(KERNEL_WIDTH):
            taps = dc.select_rows(weight, list(range(tap * out_channels, (tap + 1) * out_channels)))
            term = dc.matmul(taps, dc.conv1d(hidden, _shift_kernel(tap)))
            total = term if total is None else dc.add(total, term)
        hidden = dc.add(total, dc.reshape(bias, (out_channels, 1)))
        if i < CONV3_LAYERS:
            hidden = dc.tanh(hidden)
    return dc.softmax(hidden)


def mlp_predict(model: BaselineModel, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
    _require_kind(model, "mlp")
    return model.predict(x, action)


def conv1_predict(model: BaselineModel, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
    _require_kind(model, "conv1")
    return model.predict(x, action)


def conv3_predict(model: BaselineModel, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
    _require_kind(model, "conv3")
    return model.predict(x, action)


def _require_kind(model: BaselineModel, kind: str) -> None:
    if model.kind != kind:
        raise NidModelError(code="unknown_kind", message=f"Expected a {kind} model, got {model.kind}.")
