#!/usr/bin/env python3
"""
Training and evaluation harness for NID Lab.

Covers online training with RMSProp, closed-loop compound rollouts,
embedding clustering, the resumable ablation grid, checkpoints and the
finite-difference gradient-check suite.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import diffcore as dc
from baselines import BASELINE_KINDS, BaselineModel, init_baseline
from grid_envs import (
    Action,
    EnvSpec,
    GridState,
    Orientation,
    generate_episode,
    mover_unblocked,
    read_episodes,
    sample_initial,
    step,
    to_state_tensor,
)
from nid_model import Hyper, NidModel, embedding_points, init_params
from nidlab_errors import DiffCoreError, HarnessError, NidLabError
from scoring_utils import (
    STREAM_CHECK,
    STREAM_EVAL,
    STREAM_TRAIN,
    bin_means,
    make_rng,
    population_mean_std,
    silhouette_score,
    stable_hash,
)

MODEL_KINDS = ("nid",) + BASELINE_KINDS
CURVE_BIN = 500
ROLLOUT_COLUMNS = ["step", "mean_cumulative_bce", "std_cumulative_bce", "split", "model", "seed"]
CSV_FLOAT_FORMAT = "%.17g"
ROLLOUT_HEADER_NOTE = "std_cumulative_bce is the population standard deviation (ddof=0)"
SPLIT_STREAMS = {"train": 0, "test": 1}

ProgressCallback = Callable[[int, int, float], None]
Transition = Tuple[np.ndarray, Action, np.ndarray]


class Predictor(Protocol):
    kind: str
    n_objects: int
    n_positions: int
    n_actions: int

    def predict(self, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
        ...


Model = Union[NidModel, BaselineModel]


def build_model(
    kind: str,
    spec: EnvSpec,
    hyper: Hyper,
    widths: Optional[Dict[str, int]] = None,
) -> Model:
    if kind == "nid":
        return init_params(hyper, spec.n_objects, spec.D, n_actions=spec.n_actions)
    if kind in BASELINE_KINDS:
        return init_baseline(kind, hyper, spec.n_objects, spec.D, n_actions=spec.n_actions, widths=widths)
    raise HarnessError(
        code="unknown_kind",
        message=f"Unknown model kind `{kind}`.",
        diagnostics={"available": list(MODEL_KINDS)},
    )


def _action_for(spec: EnvSpec, action: Action) -> Optional[Action]:
    return action if spec.has_agent else None


# --- training -----------------------------------------------------------------


@dataclass
class LearningCurve:
    losses: List[float]
    bin_size: int = CURVE_BIN

    @property
    def means(self) -> List[float]:
        return bin_means(self.losses, self.bin_size) if self.losses else []

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, value in enumerate(self.means):
            start = i * self.bin_size
            end = min(start + self.bin_size, len(self.losses))
            rows.append({"bin": i, "start_step": start, "end_step": end, "mean_loss": value})
        return pd.DataFrame(rows, columns=["bin", "start_step", "end_step", "mean_loss"])


@dataclass
class TrainResult:
    model: Model
    curve: LearningCurve
    kind: str
    seed: int


def online_transitions(spec: EnvSpec, rng: np.random.Generator) -> Iterator[Transition]:
    """Endless training-split transitions from freshly seeded episodes."""

    while True:
        episode = generate_episode(spec, "train", int(rng.integers(2**31 - 1)))
        for state, action, following in episode.transitions():
            yield to_state_tensor(spec, state), action, to_state_tensor(spec, following)


def replay_transitions(
    spec: EnvSpec, episodes: Sequence[Any], rng: np.random.Generator
) -> Iterator[Transition]:
    """Uniformly resampled transitions from a fixed episode set."""

    pool = [
        (to_state_tensor(spec, s), a, to_state_tensor(spec, nxt))
        for episode in episodes
        for s, a, nxt in episode.transitions()
    ]
    if not pool:
        raise HarnessError(code="empty_episodes", message="Episode set holds no transitions.")
    while True:
        yield pool[int(rng.integers(len(pool)))]


def train(
    kind: str,
    spec: EnvSpec,
    hyper: Hyper,
    rng: Optional[np.random.Generator] = None,
    *,
    episodes: Optional[Sequence[Any]] = None,
    progress: Optional[ProgressCallback] = None,
    widths: Optional[Dict[str, int]] = None,
) -> TrainResult:
    """Online training, batch size one, one RMSProp step per transition."""

    rng = rng if rng is not None else make_rng(hyper.seed, STREAM_TRAIN)
    model = build_model(kind, spec, hyper, widths)
    params = model.named_parameters()
    optimizer = dc.RMSProp(params, lr=hyper.lr, rho=hyper.rho, eps=hyper.eps)
    source = replay_transitions(spec, episodes, rng) if episodes is not None else online_transitions(spec, rng)
    n_bins = -(-hyper.steps // CURVE_BIN)
    losses: List[float] = []

    for i in range(hyper.steps):
        x, action, target = next(source)
        try:
            value, grads = model.loss_and_grads(x, target, _action_for(spec, action))
        except DiffCoreError as exc:
            if exc.code != "non_finite":
                raise
            raise HarnessError(
                code="non_finite_loss",
                message=f"Non-finite value during the forward/backward pass at step {i}.",
                diagnostics={"step": i, "loss": None, "kind": kind},
            ) from exc
        if not np.isfinite(value):
            raise HarnessError(
                code="non_finite_loss",
                message=f"Loss became non-finite at step {i}.",
                diagnostics={"step": i, "loss": value, "kind": kind},
            )
        bad = sorted(name for name, g in grads.items() if not np.all(np.isfinite(g)))
        if bad:
            raise HarnessError(
                code="non_finite_gradient",
                message=f"Non-finite gradient at step {i}.",
                diagnostics={"step": i, "loss": value, "kind": kind, "parameters": bad},
            )
        params = optimizer.step(params, grads)
        model = model.with_parameters(params)
        losses.append(value)
        if progress is not None and ((i + 1) % CURVE_BIN == 0 or i + 1 == hyper.steps):
            current = i // CURVE_BIN
            progress(current + 1, n_bins, float(np.mean(losses[current * CURVE_BIN :])))

    return TrainResult(model=model, curve=LearningCurve(losses), kind=kind, seed=hyper.seed)


def load_training_episodes(path: Union[str, Path], spec: EnvSpec) -> List[Any]:
    episodes = read_episodes(path)
    mismatched = [ep.seed for ep in episodes if ep.spec != spec]
    if mismatched:
        raise HarnessError(
            code="episode_env_mismatch",
            message="Episode file was generated for a different environment.",
            diagnostics={"seeds": mismatched[:10]},
        )
    return episodes


# --- compound rollouts --------------------------------------------------------


class SimulatorOracle:
    """Ground-truth predictor backed by the simulator.

    One-hot rows are decoded exactly; a stochastic mover yields the exact
    two-way split of its mass.
    """

    kind = "oracle"

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.n_objects = spec.n_objects
        self.n_positions = spec.D
        self.n_actions = spec.n_actions

    def predict(self, x: np.ndarray, action: Optional[Action] = None) -> np.ndarray:
        state = GridState(tuple(int(i) for i in np.argmax(np.asarray(x), axis=1)))
        if self.spec.stochastic_mover is None:
            return to_state_tensor(self.spec, step(self.spec, state, action))
        outcomes = [
            to_state_tensor(self.spec, step(self.spec, state, action, _FixedDraw(draw))) for draw in (0, 1)
        ]
        return 0.5 * (outcomes[0] + outcomes[1])


class _FixedDraw:
    def __init__(self, value: int):
        self.value = value

    def integers(self, *_: Any, **__: Any) -> int:
        return self.value


@dataclass
class RolloutReport:
    split: str
    model: str
    seed: Union[int, str]
    cumulative: np.ndarray

    @property
    def n_rollouts(self) -> int:
        return int(self.cumulative.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.cumulative.shape[1])

    def summary(self) -> Tuple[np.ndarray, np.ndarray]:
        return population_mean_std(self.cumulative, axis=0)

    def final_error(self) -> float:
        return float(self.summary()[0][-1])

    def to_frame(self) -> pd.DataFrame:
        mean, std = self.summary()
        return pd.DataFrame(
            {
                "step": np.arange(1, self.horizon + 1),
                "mean_cumulative_bce": mean,
                "std_cumulative_bce": std,
                "split": self.split,
                "model": self.model,
                "seed": str(self.seed),
            },
            columns=ROLLOUT_COLUMNS,
        )


def compound_rollout(
    model: Predictor,
    spec: EnvSpec,
    split: str,
    n: int = 100,
    T: int = 8,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> RolloutReport:
    """Closed-loop rollouts: the model's own prediction is fed back each step."""

    if n < 1 or T < 1:
        raise HarnessError(code="invalid_rollout", message=f"n and T must be >= 1, got n={n}, T={T}.")
    rng = rng if rng is not None else make_rng(seed, STREAM_EVAL, SPLIT_STREAMS.get(split, 2))
    rollout_spec = dataclasses.replace(spec, horizon=T)
    cumulative = np.zeros((n, T))
    for r in range(n):
        episode = generate_episode(rollout_spec, split, int(rng.integers(2**31 - 1)))
        x = to_state_tensor(spec, episode.states[0])
        total = 0.0
        for t, (_, action, following) in enumerate(episode.transitions()):
            x = model.predict(x, _action_for(spec, action))
            total += dc.bce(to_state_tensor(spec, following), x).item()
            cumulative[r, t] = total
    return RolloutReport(split=split, model=model.kind, seed=seed, cumulative=cumulative)


def aggregate_reports(reports: Sequence[RolloutReport]) -> pd.DataFrame:
    """Per-step mean and population std of the per-seed mean curves."""

    if not reports:
        raise HarnessError(code="empty_reports", message="No rollout reports to aggregate.")
    per_seed = pd.concat([report.to_frame() for report in reports], ignore_index=True)
    grouped = per_seed.groupby(["split", "model", "step"], sort=True)["mean_cumulative_bce"]
    combined = pd.DataFrame(
        {"mean_cumulative_bce": grouped.mean(), "std_cumulative_bce": grouped.std(ddof=0)}
    ).reset_index()
    combined["seed"] = "all"
    return pd.concat([per_seed, combined[ROLLOUT_COLUMNS]], ignore_index=True)


def write_csv(frame: pd.DataFrame, path: Union[str, Path], note: Optional[str] = None) -> Path:
    """Write a table; `note` becomes a leading `# ` line (read back with `comment="#"`)."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        if note is not None:
            handle.write(f"# {note}\n")
        frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return target


def model_rollout(
    model: Predictor,
    spec: EnvSpec,
    initial: GridState,
    actions: Sequence[Action],
    sample: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> List[np.ndarray]:
    """Predicted frames; with sample=True each row is drawn from its distribution."""

    if sample and rng is None:
        raise HarnessError(code="missing_rng", message="Sampled rollouts need an rng.")
    x = to_state_tensor(spec, initial)
    frames = [x]
    for action in actions:
        x = model.predict(x, _action_for(spec, action))
        if sample:
            cells = [int(rng.choice(spec.D, p=row / row.sum())) for row in x]
            x = np.zeros_like(x)
            x[np.arange(spec.n_objects), cells] = 1.0
        frames.append(x)
    return frames


# --- embeddings ---------------------------------------------------------------


def cluster_labels(spec: EnvSpec) -> Dict[Tuple[int, int], str]:
    """C1 non-rollable, C2 rollable left of the apex, C3 rollable right of it."""

    if spec.orientation is Orientation.FLAT:
        raise HarnessError(
            code="flat_env",
            message="Cluster labels need a sloped environment.",
            diagnostics={"env": spec.name},
        )
    labels: Dict[Tuple[int, int], str] = {}
    for obj in spec.objects:
        if obj.is_agent:
            continue
        for p in range(spec.D):
            if not obj.rollable:
                labels[(obj.id, p)] = "C1"
            else:
                labels[(obj.id, p)] = "C2" if p < spec.apex else "C3"
    return labels


@dataclass
class EmbeddingReport:
    keys: List[Tuple[int, int]]
    points: np.ndarray
    labels: List[str]
    silhouette: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "silhouette": self.silhouette,
            "points": [
                {"object": o, "position": p, "label": label, "h": [float(v) for v in point]}
                for (o, p), label, point in zip(self.keys, self.labels, self.points)
            ],
        }


def embedding_report(model: NidModel, spec: EnvSpec) -> EmbeddingReport:
    if getattr(model, "kind", None) != "nid":
        raise HarnessError(code="unsupported_model", message="Embedding reports need a NID model.")
    labels = cluster_labels(spec)
    keys = sorted(labels)
    h = embedding_points(model)
    points = np.array([h[o * spec.D + p] for o, p in keys])
    names = [labels[key] for key in keys]
    return EmbeddingReport(keys=keys, points=points, labels=names, silhouette=silhouette_score(points, names))


# --- stochastic plane -----------------------------------------------------------


def stochastic_mass_profile(
    model: Predictor,
    spec: EnvSpec,
    n_states: int = 100,
    seed: int = 0,
    max_draws: int = 100000,
) -> Dict[str, float]:
    """Average predicted mover mass on p-1, p+1 and elsewhere in unblocked states."""

    if spec.stochastic_mover is None:
        raise HarnessError(code="no_stochastic_mover", message=f"`{spec.name}` has no stochastic mover.")
    rng = make_rng(seed, STREAM_EVAL, 3)
    mover = spec.stochastic_mover
    left, right, rest = [], [], []
    draws = 0
    while len(left) < n_states:
        draws += 1
        if draws > max_draws:
            raise HarnessError(code="no_unblocked_states", message="Could not sample enough unblocked states.")
        state = sample_initial(spec, "test", rng)
        if not mover_unblocked(spec, state):
            continue
        action = Action(int(rng.integers(4))) if spec.has_agent else None
        row = model.predict(to_state_tensor(spec, state), action)[mover]
        p = state.pos[mover]
        left.append(float(row[p - 1]))
        right.append(float(row[p + 1]))
        rest.append(float(1.0 - row[p - 1] - row[p + 1]))
    return {
        "n_states": n_states,
        "left": float(np.mean(left)),
        "right": float(np.mean(right)),
        "elsewhere": float(np.mean(rest)),
    }


# --- checkpoints ----------------------------------------------------------------


def checkpoint_payload(model: Model) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "kind": model.kind,
        "hyper": model.hyper.to_dict(),
        "dims": model.dims(),
        "params": {
            name: {"shape": list(value.shape), "values": [float(v) for v in np.ravel(value)]}
            for name, value in model.named_parameters().items()
        },
    }
    if isinstance(model, BaselineModel):
        payload["widths"] = dict(model.widths)
    return payload


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(checkpoint_payload(model), indent=2) + "\n", encoding="utf-8")
    return target


def load_checkpoint(path: Union[str, Path]) -> Model:
    source = Path(path)
    if not source.exists():
        raise HarnessError(
            code="missing_checkpoint",
            message=f"Checkpoint not found: {source}",
            diagnostics={"path": str(source)},
        )
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
        hyper = Hyper.from_dict(payload["hyper"])
        dims = payload["dims"]
        params = {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
        kind = payload["kind"]
    except (KeyError, ValueError, TypeError) as exc:
        raise HarnessError(code="invalid_checkpoint", message=f"Malformed checkpoint {source}: {exc}") from exc

    if kind == "nid":
        return NidModel.from_parameters(hyper, dims["n_objects"], dims["n_positions"], dims["n_actions"], params)
    if kind in BASELINE_KINDS:
        return BaselineModel.from_parameters(
            kind, hyper, dims["n_objects"], dims["n_positions"], dims["n_actions"], params, payload.get("widths")
        )
    raise HarnessError(code="invalid_checkpoint", message=f"Unknown model kind `{kind}` in {source}.")


# --- ablation grid ----------------------------------------------------------------


@dataclass(frozen=True)
class AblationConfig:
    lambda1: float
    lambda2: float
    K: int
    init: str
    variant: str
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class AblationRecord:
    config_hash: str
    status: str
    config: AblationConfig
    train_error: Optional[float] = None
    test_error: Optional[float] = None
    silhouette: Optional[float] = None
    error: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hash": self.config_hash,
            "status": self.status,
            **self.config.to_dict(),
            "train_error": self.train_error,
            "test_error": self.test_error,
            "silhouette": self.silhouette,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "AblationRecord":
        config = AblationConfig(**{f.name: payload[f.name] for f in dataclasses.fields(AblationConfig)})
        return cls(
            config_hash=payload["hash"],
            status=payload["status"],
            config=config,
            train_error=payload.get("train_error"),
            test_error=payload.get("test_error"),
            silhouette=payload.get("silhouette"),
            error=payload.get("error"),
        )


@dataclass
class AblationSummary:
    records: List[AblationRecord]
    trained: int
    skipped: int
    failed: int = 0
    path: Optional[Path] = None


def expand_grid(
    lambda1: Sequence[float],
    lambda2: Sequence[float],
    K: Sequence[int],
    init: Sequence[str],
    variant: Sequence[str],
    seeds: Sequence[int],
) -> List[AblationConfig]:
    return [
        AblationConfig(float(l1), float(l2), int(k), str(scheme), str(v), int(s))
        for l1, l2, k, scheme, v, s in itertools.product(lambda1, lambda2, K, init, variant, seeds)
    ]


FULL_GRID_LAMBDAS = (5e-8, 5e-7, 5e-6, 5e-5)
FULL_GRID_INIT_PLAN = {"fixed_rows": ((4, 8, 16), 10), "random": ((4, 9, 14), 5)}


def full_ablation_grid(variant: str = "sample_dependent") -> List[AblationConfig]:
    """The full 720-run entropy/K/initialization sweep."""

    configs: List[AblationConfig] = []
    for scheme, (ks, n_seeds) in FULL_GRID_INIT_PLAN.items():
        configs.extend(expand_grid(FULL_GRID_LAMBDAS, FULL_GRID_LAMBDAS, ks, [scheme], [variant], range(n_seeds)))
    return configs


def effective_hyper(config: AblationConfig, base: Hyper) -> Hyper:
    return base.replace(
        lambda1=config.lambda1,
        lambda2=config.lambda2,
        K=config.K,
        init=config.init,
        variant=config.variant,
        seed=config.seed,
    )


def ablation_hash(
    config: AblationConfig, spec: EnvSpec, base: Hyper, n_rollouts: int, horizon: int
) -> str:
    """Resume key over everything that shapes a run's result."""

    return stable_hash(
        {
            "config": config.to_dict(),
            "env": spec.to_dict(),
            "hyper": effective_hyper(config, base).to_dict(),
            "n_rollouts": n_rollouts,
            "horizon": horizon,
        }
    )


def read_ablation_records(path: Union[str, Path]) -> Dict[str, AblationRecord]:
    """Records keyed by hash; later lines win."""

    source = Path(path)
    records: Dict[str, AblationRecord] = {}
    if not source.exists():
        return records
    with source.open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                record = AblationRecord.from_dict(json.loads(line))
                records[record.config_hash] = record
    return records


def run_ablation_task(task: Dict[str, Any]) -> Dict[str, Any]:
    """Train and evaluate one configuration; failures come back as records."""

    config = AblationConfig(**task["config"])
    record = AblationRecord(config_hash=task["hash"], status="ok", config=config)
    try:
        spec = EnvSpec.from_dict(task["env"])
        hyper = effective_hyper(config, Hyper.from_dict(task["hyper"]))
        result = train("nid", spec, hyper)
        n, horizon = task["n_rollouts"], task["horizon"]
        record.train_error = compound_rollout(result.model, spec, "train", n, horizon, seed=config.seed).final_error()
        record.test_error = compound_rollout(result.model, spec, "test", n, horizon, seed=config.seed).final_error()
        record.silhouette = embedding_report(result.model, spec).silhouette
    except NidLabError as exc:
        record.status = "failed"
        record.error = {"code": exc.code, "message": exc.message}
    except Exception as exc:  # noqa: BLE001
        record.status = "failed"
        record.error = {"code": "unexpected_error", "message": f"{type(exc).__name__}: {exc}"}
    return record.to_dict()


def ablation_grid(
    configs: Sequence[AblationConfig],
    spec: EnvSpec,
    base_hyper: Hyper,
    out_path: Union[str, Path],
    jobs: Optional[int] = None,
    n_rollouts: int = 100,
    horizon: int = 8,
    on_record: Optional[Callable[[int, int, AblationRecord], None]] = None,
) -> AblationSummary:
    """Run every configuration not already recorded as successful.

    Records are appended to a JSON-lines file in submission order.
    """

    if not configs:
        raise HarnessError(code="empty_grid", message="Ablation grid has no configurations.")
    target = Path(out_path)
    existing = read_ablation_records(target)
    tasks: List[Dict[str, Any]] = []
    for config in configs:
        config_hash = ablation_hash(config, spec, base_hyper, n_rollouts, horizon)
        previous = existing.get(config_hash)
        if previous is not None and previous.status == "ok":
            continue
        tasks.append(
            {
                "hash": config_hash,
                "config": config.to_dict(),
                "env": spec.to_dict(),
                "hyper": base_hyper.to_dict(),
                "n_rollouts": n_rollouts,
                "horizon": horizon,
            }
        )

    workers = max(1, jobs if jobs else (os.cpu_count() or 1))
    target.parent.mkdir(parents=True, exist_ok=True)
    fresh: List[AblationRecord] = []
    with target.open("a", encoding="utf-8") as handle:
        for i, payload in enumerate(_execute(tasks, workers), start=1):
            record = AblationRecord.from_dict(payload)
            handle.write(json.dumps(record.to_dict(), separators=(",", ":")) + "\n")
            handle.flush()
            fresh.append(record)
            if on_record is not None:
                on_record(i, len(tasks), record)

    merged = {**existing, **{record.config_hash: record for record in fresh}}
    ordered = [merged[ablation_hash(c, spec, base_hyper, n_rollouts, horizon)] for c in configs]
    return AblationSummary(
        records=ordered,
        trained=len(tasks),
        skipped=len(configs) - len(tasks),
        failed=sum(1 for record in fresh if record.status != "ok"),
        path=target,
    )


def _execute(tasks: List[Dict[str, Any]], workers: int) -> Iterator[Dict[str, Any]]:
    if workers == 1 or len(tasks) <= 1:
        for task in tasks:
            yield run_ablation_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(run_ablation_task, tasks)


# --- gradient checks ----------------------------------------------------------------


GRAD_CHECK_HYPER = Hyper(K=2, m=2, d1=2, dP=2, dR=2, S1=1, S2=1, H=3, lambda1=0.1, lambda2=0.2)
GRAD_CHECK_WIDTHS = {"mlp_hidden": 4, "conv_channels": 3}
GRAD_CHECK_CASES: Tuple[Tuple[str, str, bool], ...] = (
    ("nid", "sample_dependent", False),
    ("nid", "sample_independent", False),
    ("nid", "sample_dependent", True),
    ("nid", "sample_independent", True),
    ("mlp", "sample_dependent", False),
    ("mlp", "sample_dependent", True),
    ("conv1", "sample_dependent", False),
    ("conv1", "sample_dependent", True),
    ("conv3", "sample_dependent", False),
    ("conv3", "sample_dependent", True),
)


@dataclass
class GradCheckReport:
    max_error: float
    cases: List[Dict[str, Any]] = field(default_factory=list)

    def passed(self, tolerance: float) -> bool:
        return self.max_error <= tolerance


def gradient_check_suite(
    n_configs: int = 100,
    seed: int = 0,
    h: float = 1e-5,
    n_objects: int = 2,
    n_positions: int = 4,
    base_hyper: Optional[Hyper] = None,
) -> GradCheckReport:
    """Finite-difference checks over random tiny models of every kind."""

    base = base_hyper or GRAD_CHECK_HYPER
    cases: List[Dict[str, Any]] = []
    for i in range(n_configs):
        kind, variant, with_actions = GRAD_CHECK_CASES[i % len(GRAD_CHECK_CASES)]
        rng = make_rng(seed, STREAM_CHECK, i)
        n_actions = 4 if with_actions else 0
        hyper = base.replace(variant=variant, init="random", seed=int(rng.integers(2**31 - 1)))
        if kind == "nid":
            model: Model = init_params(hyper, n_objects, n_positions, rng, n_actions)
        else:
            model = init_baseline(kind, hyper, n_objects, n_positions, rng, n_actions, GRAD_CHECK_WIDTHS)
        x = rng.dirichlet(np.ones(n_positions), size=n_objects)
        target = np.zeros((n_objects, n_positions))
        target[np.arange(n_objects), rng.integers(n_positions, size=n_objects)] = 1.0
        action = Action(int(rng.integers(4))) if with_actions else None

        def objective(bound: Dict[str, dc.Tensor], model: Model = model) -> dc.Tensor:
            return model.loss_tensor(bound, x, target, action)

        error = dc.check_gradients(objective, model.named_parameters(), h=h)
        cases.append({"index": i, "kind": kind, "variant": variant, "actions": with_actions, "error": error})
    return GradCheckReport(max_error=max((c["error"] for c in cases), default=0.0), cases=cases)
