#!/usr/bin/env python3
"""
Neural NID transition model.

The predictor factors next-state prediction into:
- a property encoder over (object, position) one-hots, with sample-dependent
  or sample-independent attention over K rows of Q
- an edge function aggregated over the other objects
- a transition selector P(z | x, o, p[, a]) decoded by a 2-layer tanh MLP
- m convolutional outcome maps whose gated mixture is row-softmaxed
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import diffcore as dc
from grid_envs import Action
from nidlab_errors import NidModelError
from scoring_utils import STREAM_INIT, make_rng

SAMPLE_DEPENDENT = "sample_dependent"
SAMPLE_INDEPENDENT = "sample_independent"
VARIANTS = (SAMPLE_DEPENDENT, SAMPLE_INDEPENDENT)
INIT_SCHEMES = ("random", "fixed_rows", "zero")
ROW_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Hyper:
    """Model and optimizer hyperparameters (defaults follow the reference setup)."""

    K: int = 4
    m: int = 3
    d1: int = 2
    dP: int = 4
    dR: int = 4
    S1: int = 1
    S2: int = 1
    H: int = 16
    lambda1: float = 5e-7
    lambda2: float = 5e-6
    lr: float = 1e-2
    steps: int = 20000
    rho: float = 0.99
    eps: float = 1e-8
    variant: str = SAMPLE_DEPENDENT
    init: str = "random"
    seed: int = 0

    def __post_init__(self) -> None:
        problems: List[str] = []
        for name in ("K", "m", "d1", "dP", "dR", "H"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("S1", "S2"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append("entropy weights must be >= 0")
        if self.lr <= 0:
            problems.append("lr must be > 0")
        if self.steps < 0:
            problems.append("steps must be >= 0")
        if not 0.0 < self.rho < 1.0:
            problems.append("rho must be in (0, 1)")
        if self.eps <= 0:
            problems.append("eps must be > 0")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}")
        if self.init not in INIT_SCHEMES:
            problems.append(f"init must be one of {INIT_SCHEMES}")
        if problems:
            raise NidModelError(
                code="invalid_hyper",
                message="; ".join(problems) + ".",
                diagnostics={"problems": problems},
            )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Hyper":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise NidModelError(
                code="invalid_hyper",
                message=f"Unknown hyperparameters: {', '.join(unknown)}.",
                diagnostics={"unknown": unknown},
            )
        return cls(**payload)

    def replace(self, **changes: Any) -> "Hyper":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EncoderParams:
    Q: np.ndarray
    V: np.ndarray
    W: np.ndarray
    variant: str
    n_objects: int


@dataclass(frozen=True)
class EdgeParams:
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class DecoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class OutcomeKernels:
    omega: np.ndarray


@dataclass(frozen=True)
class EncodeResult:
    attn: np.ndarray
    h: np.ndarray
    theta: np.ndarray


PARAMETER_NAMES = (
    "encoder.Q",
    "encoder.V",
    "encoder.W",
    "edge.A",
    "edge.b",
    "decoder.W1",
    "decoder.b1",
    "decoder.W2",
    "decoder.b2",
    "kernels.omega",
)


@dataclass(frozen=True, eq=False)
class NidModel:
    """All learnable NID parameters plus the dimensions they were built for."""

    kind: ClassVar[str] = "nid"

    encoder: EncoderParams
    edge: EdgeParams
    decoder: DecoderParams
    kernels: OutcomeKernels
    hyper: Hyper
    n_objects: int
    n_positions: int
    n_actions: int = 0

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return parameter_shapes(self.hyper, self.n_objects, self.n_positions, self.n_actions)

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return {
            "encoder.Q": self.encoder.Q,
            "encoder.V": self.encoder.V,
            "encoder.W": self.encoder.W,
            "edge.A": self.edge.A,
            "edge.b": self.edge.b,
            "decoder.W1": self.decoder.W1,
            "decoder.b1": self.decoder.b1,
            "decoder.W2": self.decoder.W2,
            "decoder.b2": self.decoder.b2,
            "kernels.omega": self.kernels.omega,
        }

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "NidModel":
        return NidModel.from_parameters(self.hyper, self.n_objects, self.n_positions, self.n_actions, params)

    @classmethod
    def from_parameters(
        cls,
        hyper: Hyper,
        n_objects: int,
        n_positions: int,
        n_actions: int,
        params: Dict[str, np.ndarray],
    ) -> "NidModel":
        arrays = _checked_parameters(parameter_shapes(hyper, n_objects, n_positions, n_actions), params)
        return cls(
            encoder=EncoderParams(
                Q=arrays["encoder.Q"],
                V=arrays["encoder.V"],
                W=arrays["encoder.W"],
                variant=hyper.variant,
                n_objects=n_objects,
            ),
            edge=EdgeParams(A=arrays["edge.A"], b=arrays["edge.b"]),
            decoder=DecoderParams(
                W1=arrays["decoder.W1"],
                b1=arrays["decoder.b1"],
                W2=arrays["decoder.W2"],
                b2=arrays["decoder.b2"],
            ),
            kernels=OutcomeKernels(omega=arrays["kernels.omega"]),
            hyper=hyper,
            n_objects=n_objects,
            n_positions=n_positions,
            n_actions=n_actions,
        )

    def dims(self) -> Dict[str, int]:
        return {"n_objects": self.n_objects, "n_positions": self.n_positions, "n_actions": self.n_actions}

    def predict(self, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
        return predict_next(self, x, action)

    def loss_tensor(
        self,
        bound: Dict[str, dc.Tensor],
        x: np.ndarray,
        target: np.ndarray,
        action: Optional[Action] = None,
    ) -> dc.Tensor:
        return _loss_forward(self, bound, x, target, action)

    def loss_and_grads(
        self, x: np.ndarray, target: np.ndarray, action: Optional[Action] = None
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        return loss_and_grads(self, x, target, action)


def parameter_shapes(hyper: Hyper, n_objects: int, n_positions: int, n_actions: int = 0) -> Dict[str, Tuple[int, ...]]:
    if n_objects < 1 or n_positions < 2 or n_actions < 0:
        raise NidModelError(
            code="invalid_dims",
            message=f"Invalid model dimensions |O|={n_objects}, D={n_positions}, |A|={n_actions}.",
        )
    return {
        "encoder.Q": (n_objects + n_positions, hyper.K),
        "encoder.V": (hyper.K, hyper.d1),
        "encoder.W": (hyper.d1, hyper.dP),
        "edge.A": (hyper.dR, 2 * (2 * hyper.S1 + 1)),
        "edge.b": (hyper.dR,),
        "decoder.W1": (hyper.dP + hyper.dR + n_actions, hyper.H),
        "decoder.b1": (hyper.H,),
        "decoder.W2": (hyper.H, hyper.m),
        "decoder.b2": (hyper.m,),
        "kernels.omega": (hyper.m, 2 * hyper.S2 + 1),
    }


def _checked_parameters(
    shapes: Dict[str, Tuple[int, ...]], params: Dict[str, np.ndarray]
) -> Dict[str, np.ndarray]:
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise NidModelError(
            code="invalid_parameters",
            message=f"Missing parameters: {', '.join(missing)}.",
            diagnostics={"missing": missing},
        )
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        array = np.array(params[name], dtype=np.float64)
        if array.shape != shape:
            raise NidModelError(
                code="invalid_parameters",
                message=f"{name} has shape {array.shape}, expected {shape}.",
                diagnostics={"name": name, "shape": list(array.shape), "expected": list(shape)},
            )
        if not np.all(np.isfinite(array)):
            raise NidModelError(code="invalid_parameters", message=f"{name} contains non-finite values.")
        arrays[name] = array
    return arrays


def glorot_bound(shape: Tuple[int, ...]) -> float:
    rows, cols = shape
    return float(np.sqrt(6.0 / (rows + cols)))


def fixed_rows(K: int, d1: int) -> np.ndarray:
    """Sylvester-Hadamard sign rows scaled by 1/sqrt(d1)."""

    signs = np.array(
        [[(-1.0) ** bin(k & j).count("1") for j in range(d1)] for k in range(K)],
        dtype=np.float64,
    )
    return signs / np.sqrt(d1)


def init_params(
    hyper: Hyper,
    n_objects: int,
    n_positions: int,
    rng: Optional[np.random.Generator] = None,
    n_actions: int = 0,
) -> NidModel:
    """Glorot-uniform matrices and zero biases; fixed_rows then pins Q and V."""

    shapes = parameter_shapes(hyper, n_objects, n_positions, n_actions)
    rng = rng if rng is not None else make_rng(hyper.seed, STREAM_INIT)
    params: Dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if hyper.init == "zero" or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = glorot_bound(shape)
            params[name] = rng.uniform(-bound, bound, size=shape)
    if hyper.init == "fixed_rows":
        params["encoder.Q"] = np.zeros(shapes["encoder.Q"])
        params["encoder.V"] = fixed_rows(hyper.K, hyper.d1)
    return NidModel.from_parameters(hyper, n_objects, n_positions, n_actions, params)


def bind(model: Any, tape: dc.Tape) -> Dict[str, dc.Tensor]:
    return {name: tape.param(name, value) for name, value in model.named_parameters().items()}


def constants(model: Any) -> Dict[str, dc.Tensor]:
    return {name: dc.Tensor(value) for name, value in model.named_parameters().items()}


# --- cached structure -------------------------------------------------------


@lru_cache(maxsize=32)
def pair_onehots(n_objects: int, n_positions: int) -> np.ndarray:
    """Row o*D + p is concat(e_o, e_p)."""

    rows = n_objects * n_positions
    pairs = np.zeros((rows, n_objects + n_positions))
    for o in range(n_objects):
        for p in range(n_positions):
            pairs[o * n_positions + p, o] = 1.0
            pairs[o * n_positions + p, n_objects + p] = 1.0
    pairs.setflags(write=False)
    return pairs


def _ordered_pairs(n_objects: int) -> List[Tuple[int, int]]:
    return [(o, other) for o in range(n_objects) for other in range(n_objects) if other != o]


@lru_cache(maxsize=32)
def _pair_sum_matrix(n_objects: int, n_positions: int) -> np.ndarray:
    pairs = _ordered_pairs(n_objects)
    summed = np.zeros((n_objects * n_positions, len(pairs) * n_positions))
    for k, (o, _) in enumerate(pairs):
        for p in range(n_positions):
            summed[o * n_positions + p, k * n_positions + p] = 1.0
    summed.setflags(write=False)
    return summed


def position_windows(x: np.ndarray, half_width: int) -> np.ndarray:
    """|O| x D x (2S+1) zero-padded windows centred on every cell."""

    padded = np.pad(x, ((0, 0), (half_width, half_width)))
    return sliding_window_view(padded, 2 * half_width + 1, axis=1)


# --- forward pieces on tensors ------------------------------------------------


def _encoder_forward(
    bound: Dict[str, dc.Tensor], variant: str, n_objects: int, n_positions: int
) -> Tuple[dc.Tensor, dc.Tensor, dc.Tensor]:
    pairs = pair_onehots(n_objects, n_positions)
    if variant == SAMPLE_DEPENDENT:
        attn = dc.softmax(dc.matmul(pairs, bound["encoder.Q"]))
        h = dc.sigmoid(dc.matmul(attn, bound["encoder.V"]))
    else:
        attn = dc.softmax(bound["encoder.Q"])
        h = dc.sigmoid(dc.matmul(pairs, dc.matmul(attn, bound["encoder.V"])))
    theta = dc.matmul(h, bound["encoder.W"])
    return attn, h, theta


def _edge_forward(bound: Dict[str, dc.Tensor], x: np.ndarray, half_width: int) -> dc.Tensor:
    n_objects, n_positions = x.shape
    width = bound["edge.b"].shape[0]
    if n_objects == 1:
        return dc.Tensor(np.zeros((n_positions, width)))
    windows = position_windows(x, half_width)
    pair_rows = np.concatenate(
        [np.concatenate([windows[other], windows[o]], axis=1) for o, other in _ordered_pairs(n_objects)],
        axis=0,
    )
    phi = dc.tanh(dc.add(dc.matmul(pair_rows, dc.transpose(bound["edge.A"])), bound["edge.b"]))
    return dc.matmul(_pair_sum_matrix(n_objects, n_positions), phi)


def _selector_forward(
    bound: Dict[str, dc.Tensor],
    theta: dc.Tensor,
    edges: dc.Tensor,
    action_row: Optional[np.ndarray],
) -> dc.Tensor:
    parts: List[Any] = [theta, edges]
    if action_row is not None:
        parts.append(np.tile(action_row, (theta.shape[0], 1)))
    node = dc.concat(parts, axis=1)
    hidden = dc.tanh(dc.add(dc.matmul(node, bound["decoder.W1"]), bound["decoder.b1"]))
    return dc.softmax(dc.add(dc.matmul(hidden, bound["decoder.W2"]), bound["decoder.b2"]))


def _mixture_forward(bound: Dict[str, dc.Tensor], gates: dc.Tensor, x: np.ndarray) -> dc.Tensor:
    n_objects, n_positions = x.shape
    omega = bound["kernels.omega"]
    per_outcome = dc.transpose(gates)
    total: Optional[dc.Tensor] = None
    for z in range(omega.shape[0]):
        gate = dc.reshape(dc.select_rows(per_outcome, [z]), (n_objects, n_positions))
        kernel = dc.reshape(dc.select_rows(omega, [z]), (omega.shape[1],))
        moved = dc.conv1d(dc.mul(gate, x), kernel)
        total = moved if total is None else dc.add(total, moved)
    return dc.softmax(total)


def _entropy_forward(Q: dc.Tensor) -> Tuple[dc.Tensor, dc.Tensor]:
    probs = dc.softmax(Q)
    r1 = dc.mul(dc.sum(dc.mul(probs, dc.log(probs))), -1.0 / Q.shape[0])
    marginal = dc.mean(probs, axis=0)
    r2 = dc.mul(dc.sum(dc.mul(marginal, dc.log(marginal))), -1.0)
    return r1, r2


def _forward(
    model: NidModel, bound: Dict[str, dc.Tensor], x: np.ndarray, action: Optional[Action]
) -> Tuple[dc.Tensor, dc.Tensor, dc.Tensor]:
    """Returns (h, gates, prediction) for the whole |O| x D grid."""

    state = check_state(model, x)
    action_row = action_onehot(model.n_actions, action)
    _, h, theta = _encoder_forward(bound, model.hyper.variant, model.n_objects, model.n_positions)
    edges = _edge_forward(bound, state, model.hyper.S1)
    gates = _selector_forward(bound, theta, edges, action_row)
    return h, gates, _mixture_forward(bound, gates, state)


def _loss_forward(
    model: NidModel,
    bound: Dict[str, dc.Tensor],
    x: np.ndarray,
    target: np.ndarray,
    action: Optional[Action],
) -> dc.Tensor:
    _, _, prediction = _forward(model, bound, x, action)
    r1, r2 = _entropy_forward(bound["encoder.Q"])
    return dc.bce(target, prediction) + r1 * model.hyper.lambda1 + r2 * model.hyper.lambda2


# --- validation ---------------------------------------------------------------


def check_state(model: Any, x: np.ndarray) -> np.ndarray:
    state = np.asarray(x, dtype=np.float64)
    expected = (model.n_objects, model.n_positions)
    if state.shape != expected:
        raise NidModelError(
            code="shape_mismatch",
            message=f"State tensor has shape {state.shape}, expected {expected}.",
            diagnostics={"shape": list(state.shape), "expected": list(expected)},
        )
    sums = state.sum(axis=1)
    bad_rows = [int(i) for i in np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)]
    if bad_rows or np.any(state < 0.0):
        raise NidModelError(
            code="invalid_state",
            message="State rows must be nonnegative distributions.",
            diagnostics={"rows": bad_rows, "sums": [float(s) for s in sums]},
        )
    return state


def action_onehot(n_actions: int, action: Optional[Action]) -> Optional[np.ndarray]:
    given = action is not None and Action(int(action)) is not Action.NONE
    if given != (n_actions > 0):
        raise NidModelError(
            code="action_mode_mismatch",
            message="An action is required exactly when the model is action-conditioned.",
            diagnostics={"n_actions": n_actions, "action": None if action is None else int(action)},
        )
    if not given:
        return None
    index = int(action)
    if not 0 <= index < n_actions:
        raise NidModelError(code="invalid_action", message=f"Action index {index} outside [0, {n_actions}).")
    row = np.zeros(n_actions)
    row[index] = 1.0
    return row


# --- public operations ------------------------------------------------------


def encode(enc: EncoderParams, o: int, p: int) -> EncodeResult:
    """Attention, bottleneck h and property vector theta for one (o, p)."""

    n_positions = enc.Q.shape[0] - enc.n_objects
    if not 0 <= o < enc.n_objects or not 0 <= p < n_positions:
        raise NidModelError(
            code="index_out_of_range",
            message=f"(o={o}, p={p}) outside |O|={enc.n_objects}, D={n_positions}.",
        )
    bound = {"encoder.Q": dc.Tensor(enc.Q), "encoder.V": dc.Tensor(enc.V), "encoder.W": dc.Tensor(enc.W)}
    attn, h, theta = _encoder_forward(bound, enc.variant, enc.n_objects, n_positions)
    row = o * n_positions + p
    if enc.variant == SAMPLE_DEPENDENT:
        weights = attn.data[row].copy()
    else:
        weights = attn.data[[o, enc.n_objects + p]].copy()
    return EncodeResult(attn=weights, h=h.data[row].copy(), theta=theta.data[row].copy())


def edge_aggregate(edge: EdgeParams, x: np.ndarray, o: int) -> np.ndarray:
    """D x dR edge features summed over every other object."""

    state = np.asarray(x, dtype=np.float64)
    window = edge.A.shape[1] // 2
    if state.ndim != 2 or edge.A.shape[1] != 2 * window or window % 2 != 1:
        raise NidModelError(
            code="shape_mismatch",
            message=f"Edge map {edge.A.shape} does not fit state {state.shape}.",
        )
    if not 0 <= o < state.shape[0]:
        raise NidModelError(code="index_out_of_range", message=f"Object {o} outside [0, {state.shape[0]}).")
    bound = {"edge.A": dc.Tensor(edge.A), "edge.b": dc.Tensor(edge.b)}
    features = _edge_forward(bound, state, window // 2).data
    n_positions = state.shape[1]
    return features[o * n_positions : (o + 1) * n_positions].copy()


def select_transition(
    model: NidModel, x: np.ndarray, o: int, p: int, action: Optional[Action] = None
) -> np.ndarray:
    """P(z | x, o, p[, a]) over the m outcomes."""

    if not 0 <= o < model.n_objects or not 0 <= p < model.n_positions:
        raise NidModelError(code="index_out_of_range", message=f"(o={o}, p={p}) outside the grid.")
    return transition_table(model, x, action)[o * model.n_positions + p]


def transition_table(model: NidModel, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
    """(|O|*D) x m selector output, row o*D + p."""

    _, gates, _ = _forward(model, constants(model), x, action)
    return gates.data.copy()


def apply_outcomes(kernels: OutcomeKernels, x: np.ndarray) -> np.ndarray:
    """m x |O| x D zero-padded convolutions of every row with each kernel."""

    state = dc.Tensor(x)
    if state.data.ndim != 2:
        raise NidModelError(code="shape_mismatch", message=f"State must be 2-D, got {state.shape}.")
    return np.stack([dc.conv1d(state, kernel).data for kernel in kernels.omega])


def predict_next(model: NidModel, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
    _, _, prediction = _forward(model, constants(model), x, action)
    return prediction.data.copy()


def entropy_terms(Q: np.ndarray) -> Tuple[float, float]:
    """(conditional, marginal) attention entropies over the rows of Q."""

    r1, r2 = _entropy_forward(dc.Tensor(Q))
    return r1.item(), r2.item()


def loss(model: NidModel, x_t: np.ndarray, x_next: np.ndarray, action: Optional[Action] = None) -> float:
    return _loss_forward(model, constants(model), x_t, x_next, action).item()


def loss_and_grads(
    model: NidModel, x_t: np.ndarray, x_next: np.ndarray, action: Optional[Action] = None
) -> Tuple[float, Dict[str, np.ndarray]]:
    tape = dc.Tape()
    value = _loss_forward(model, bind(model, tape), x_t, x_next, action)
    return value.item(), dc.grad(value, tape)


def embedding_points(model: NidModel) -> np.ndarray:
    """(|O|*D) x d1 bottleneck vectors h, row o*D + p."""

    bound = {name: dc.Tensor(value) for name, value in model.named_parameters().items() if name.startswith("encoder.")}
    _, h, _ = _encoder_forward(bound, model.hyper.variant, model.n_objects, model.n_positions)
    return h.data.copy()
