#!/usr/bin/env python3
"""
Exact 1-D grid simulators for NID Lab.

Environments:
- Inclined Plane (peak): objects roll outward from the apex
- Valley: objects roll toward the apex
- Stochastic Plane (flat): one mover steps left or right with equal probability
Each preset optionally carries an agent that moves and grabs objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from nidlab_errors import GridEnvError
from scoring_utils import STREAM_GEN, clamp, make_rng

DEFAULT_D = 12
DEFAULT_HORIZON = 8
SPLITS = ("train", "test")
POLICIES = ("random", "none")


class Orientation(str, Enum):
    PEAK = "peak"
    VALLEY = "valley"
    FLAT = "flat"


class Action(IntEnum):
    MOVE_LEFT_NO_GRAB = 0
    MOVE_RIGHT_NO_GRAB = 1
    MOVE_LEFT_GRAB = 2
    MOVE_RIGHT_GRAB = 3
    NONE = 4

    @property
    def direction(self) -> int:
        if self is Action.NONE:
            return 0
        return -1 if self in (Action.MOVE_LEFT_NO_GRAB, Action.MOVE_LEFT_GRAB) else 1

    @property
    def grabs(self) -> bool:
        return self in (Action.MOVE_LEFT_GRAB, Action.MOVE_RIGHT_GRAB)


AGENT_ACTIONS: Tuple[Action, ...] = (
    Action.MOVE_LEFT_NO_GRAB,
    Action.MOVE_RIGHT_NO_GRAB,
    Action.MOVE_LEFT_GRAB,
    Action.MOVE_RIGHT_GRAB,
)

# name -> (rollable, train_left_only)
OBJECT_ROSTER: Dict[str, Tuple[bool, bool]] = {
    "red": (False, False),
    "green": (True, False),
    "purple": (False, True),
    "yellow": (True, True),
}
DEFAULT_OBJECTS: Tuple[str, ...] = ("red", "green", "purple", "yellow")
PRESETS = ("inclined_plane", "valley", "stochastic_plane")


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    name: str
    rollable: bool = False
    train_left_only: bool = False
    is_agent: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "rollable": self.rollable,
            "train_left_only": self.train_left_only,
            "is_agent": self.is_agent,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ObjectSpec":
        return cls(
            id=int(payload["id"]),
            name=str(payload["name"]),
            rollable=bool(payload.get("rollable", False)),
            train_left_only=bool(payload.get("train_left_only", False)),
            is_agent=bool(payload.get("is_agent", False)),
        )


@dataclass(frozen=True)
class EnvSpec:
    """Complete, validated environment definition."""

    D: int
    apex: int
    orientation: Orientation
    objects: Tuple[ObjectSpec, ...]
    stochastic_mover: Optional[int] = None
    horizon: int = DEFAULT_HORIZON
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        object.__setattr__(self, "objects", tuple(self.objects))
        problems = _spec_problems(self)
        if problems:
            raise GridEnvError(
                code="invalid_env",
                message=problems[0],
                diagnostics={"problems": problems, "name": self.name},
            )

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def agent_index(self) -> Optional[int]:
        return next((obj.id for obj in self.objects if obj.is_agent), None)

    @property
    def has_agent(self) -> bool:
        return self.agent_index is not None

    @property
    def n_actions(self) -> int:
        return len(AGENT_ACTIONS) if self.has_agent else 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "D": self.D,
            "apex": self.apex,
            "orientation": self.orientation.value,
            "objects": [obj.to_dict() for obj in self.objects],
            "stochastic_mover": self.stochastic_mover,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "EnvSpec":
        try:
            return cls(
                D=int(payload["D"]),
                apex=int(payload["apex"]),
                orientation=Orientation(payload["orientation"]),
                objects=tuple(ObjectSpec.from_dict(obj) for obj in payload["objects"]),
                stochastic_mover=payload.get("stochastic_mover"),
                horizon=int(payload.get("horizon", DEFAULT_HORIZON)),
                name=str(payload.get("name", "custom")),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise GridEnvError(code="invalid_env", message=f"Malformed env record: {exc}") from exc


def _spec_problems(spec: EnvSpec) -> List[str]:
    problems: List[str] = []
    if spec.D < 2:
        problems.append(f"D must be >= 2, got {spec.D}.")
    if not 0 < spec.apex < spec.D:
        problems.append(f"apex must be in (0, D), got {spec.apex}.")
    if not spec.objects:
        problems.append("At least one object is required.")
    if spec.horizon < 1:
        problems.append(f"horizon must be >= 1, got {spec.horizon}.")
    if [obj.id for obj in spec.objects] != list(range(len(spec.objects))):
        problems.append("Object ids must be 0..|O|-1 in order.")
    agents = [obj for obj in spec.objects if obj.is_agent]
    if len(agents) > 1:
        problems.append("At most one agent is allowed.")
    if any(obj.is_agent and obj.rollable for obj in spec.objects):
        problems.append("The agent cannot be rollable.")
    flat = spec.orientation is Orientation.FLAT
    if flat != (spec.stochastic_mover is not None):
        problems.append("Flat orientation is required iff a stochastic mover is set.")
    if flat and any(obj.rollable for obj in spec.objects):
        problems.append("Flat environments cannot contain rollable objects.")
    if spec.stochastic_mover is not None:
        mover = spec.stochastic_mover
        if not 0 <= mover < len(spec.objects) or spec.objects[mover].is_agent:
            problems.append(f"stochastic_mover must index a non-agent object, got {mover}.")
    if sum(1 for obj in spec.objects if not obj.is_agent) > spec.D:
        problems.append("More non-agent objects than grid cells.")
    return problems


@dataclass(frozen=True)
class GridState:
    pos: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pos", tuple(int(p) for p in self.pos))


@dataclass
class Episode:
    spec: EnvSpec
    split: str
    states: List[GridState]
    actions: List[Action]
    seed: int

    def to_record(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "env": self.spec.to_dict(),
            "split": self.split,
            "actions": [int(action) for action in self.actions],
            "positions": [list(state.pos) for state in self.states],
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "Episode":
        spec = EnvSpec.from_dict(record["env"])
        episode = cls(
            spec=spec,
            split=str(record["split"]),
            states=[GridState(tuple(pos)) for pos in record["positions"]],
            actions=[Action(int(a)) for a in record["actions"]],
            seed=int(record["seed"]),
        )
        if len(episode.states) != len(episode.actions) + 1:
            raise GridEnvError(
                code="invalid_episode",
                message="An episode needs exactly one more state than actions.",
                diagnostics={"seed": episode.seed},
            )
        return episode

    def transitions(self) -> Iterable[Tuple[GridState, Action, GridState]]:
        for i, action in enumerate(self.actions):
            yield self.states[i], action, self.states[i + 1]


# --- presets ----------------------------------------------------------------


def make_env(
    preset: str = "inclined_plane",
    D: int = DEFAULT_D,
    apex: Optional[int] = None,
    agent: bool = False,
    horizon: int = DEFAULT_HORIZON,
    objects: Optional[Sequence[Union[str, Dict[str, Any]]]] = None,
) -> EnvSpec:
    """Build a preset environment (optionally with an agent as the last object)."""

    if preset not in PRESETS:
        raise GridEnvError(
            code="unknown_preset",
            message=f"Unknown environment preset `{preset}`.",
            diagnostics={"available": list(PRESETS)},
        )
    apex = D // 2 if apex is None else apex

    if preset == "stochastic_plane":
        # mover first, static blocker second
        entries: List[Dict[str, Any]] = [{"name": "green"}, {"name": "red"}]
        orientation = Orientation.FLAT
        mover: Optional[int] = 0
    else:
        entries = [_object_entry(item) for item in (objects or DEFAULT_OBJECTS)]
        orientation = Orientation.PEAK if preset == "inclined_plane" else Orientation.VALLEY
        mover = None

    specs = [
        ObjectSpec(
            id=i,
            name=entry["name"],
            rollable=bool(entry.get("rollable", False)) and orientation is not Orientation.FLAT,
            train_left_only=bool(entry.get("train_left_only", False)),
        )
        for i, entry in enumerate(entries)
    ]
    if agent:
        specs.append(ObjectSpec(id=len(specs), name="agent", is_agent=True))

    name = preset + ("_agent" if agent else "")
    return EnvSpec(
        D=D,
        apex=apex,
        orientation=orientation,
        objects=tuple(specs),
        stochastic_mover=mover,
        horizon=horizon,
        name=name,
    )


def _object_entry(item: Union[str, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(item, dict):
        if "name" not in item:
            raise GridEnvError(code="invalid_env", message="Object entries need a `name`.")
        base = dict(zip(("rollable", "train_left_only"), OBJECT_ROSTER.get(item["name"], (False, False))))
        return {**base, **item}
    if item not in OBJECT_ROSTER:
        raise GridEnvError(
            code="invalid_env",
            message=f"Unknown object `{item}`.",
            diagnostics={"available": sorted(OBJECT_ROSTER)},
        )
    rollable, left_only = OBJECT_ROSTER[item]
    return {"name": item, "rollable": rollable, "train_left_only": left_only}


def mirror_spec(spec: EnvSpec) -> EnvSpec:
    """Reflect the grid so that cell p becomes D-1-p."""

    return EnvSpec(
        D=spec.D,
        apex=spec.D - spec.apex,
        orientation=spec.orientation,
        objects=spec.objects,
        stochastic_mover=spec.stochastic_mover,
        horizon=spec.horizon,
        name=spec.name + "_mirrored",
    )


def mirror_state(spec: EnvSpec, state: GridState) -> GridState:
    return GridState(tuple(spec.D - 1 - p for p in state.pos))


def mirror_action(action: Action) -> Action:
    swap = {
        Action.MOVE_LEFT_NO_GRAB: Action.MOVE_RIGHT_NO_GRAB,
        Action.MOVE_RIGHT_NO_GRAB: Action.MOVE_LEFT_NO_GRAB,
        Action.MOVE_LEFT_GRAB: Action.MOVE_RIGHT_GRAB,
        Action.MOVE_RIGHT_GRAB: Action.MOVE_LEFT_GRAB,
    }
    return swap.get(action, action)


# --- dynamics ---------------------------------------------------------------


def direction_of(spec: EnvSpec, p: int) -> int:
    """Downhill direction at cell p: -1 (left) or +1 (right)."""

    if spec.orientation is Orientation.FLAT:
        raise GridEnvError(
            code="flat_direction",
            message="Flat environments have no slope direction.",
            diagnostics={"env": spec.name},
        )
    if not 0 <= p < spec.D:
        raise GridEnvError(code="invalid_state", message=f"Position {p} outside [0, {spec.D}).")
    left_plane = p < spec.apex
    if spec.orientation is Orientation.PEAK:
        return -1 if left_plane else 1
    return 1 if left_plane else -1


def validate_state(spec: EnvSpec, state: GridState) -> None:
    if len(state.pos) != spec.n_objects:
        raise GridEnvError(
            code="invalid_state",
            message=f"State has {len(state.pos)} positions for {spec.n_objects} objects.",
        )
    out_of_range = [i for i, p in enumerate(state.pos) if not 0 <= p < spec.D]
    if out_of_range:
        raise GridEnvError(
            code="invalid_state",
            message="Positions outside the grid.",
            diagnostics={"objects": out_of_range, "pos": list(state.pos)},
        )
    # non-agent objects share a cell only after a grab
    cells = [p for obj, p in zip(spec.objects, state.pos) if not obj.is_agent]
    if not spec.has_agent and len(cells) != len(set(cells)):
        raise GridEnvError(
            code="invalid_state",
            message="Two non-agent objects share a cell.",
            diagnostics={"pos": list(state.pos)},
        )


def normalize_action(spec: EnvSpec, action: Optional[Union[Action, int]]) -> Action:
    resolved = Action.NONE if action is None else Action(int(action))
    if spec.has_agent and resolved is Action.NONE:
        raise GridEnvError(code="action_mode_mismatch", message="Agent environments need a move action.")
    if not spec.has_agent and resolved is not Action.NONE:
        raise GridEnvError(
            code="action_mode_mismatch",
            message=f"Agent-free environment `{spec.name}` takes no action, got {resolved.name}.",
        )
    return resolved


def step(
    spec: EnvSpec,
    state: GridState,
    action: Optional[Union[Action, int]] = None,
    rng: Optional[np.random.Generator] = None,
) -> GridState:
    """Advance one time step: agent phase, rolling phase, stochastic phase."""

    validate_state(spec, state)
    act = normalize_action(spec, action)
    pos = list(state.pos)
    agent = spec.agent_index
    grabbed: Optional[int] = None

    if agent is not None:
        start = pos[agent]
        target = clamp(start + act.direction, 0, spec.D - 1)
        pos[agent] = target
        if act.grabs:
            carried = next(
                (obj.id for obj in spec.objects if not obj.is_agent and pos[obj.id] == start),
                None,
            )
            if carried is not None:
                pos[carried] = target
                grabbed = carried

    if spec.orientation is not Orientation.FLAT:
        movers = [
            obj.id for obj in spec.objects if obj.rollable and not obj.is_agent and obj.id != grabbed
        ]
        left = sorted((i for i in movers if direction_of(spec, pos[i]) < 0), key=lambda i: pos[i])
        right = sorted((i for i in movers if direction_of(spec, pos[i]) > 0), key=lambda i: -pos[i])
        for i, delta in [(i, -1) for i in left] + [(i, 1) for i in right]:
            _try_move(spec, pos, i, delta)

    if spec.stochastic_mover is not None:
        if rng is None:
            raise GridEnvError(code="missing_rng", message="Stochastic environments need an rng.")
        delta = -1 if int(rng.integers(2)) == 0 else 1
        _try_move(spec, pos, spec.stochastic_mover, delta)

    return GridState(tuple(pos))


def _occupied(spec: EnvSpec, pos: Sequence[int], cell: int, ignore: int) -> bool:
    return any(
        not obj.is_agent and obj.id != ignore and pos[obj.id] == cell for obj in spec.objects
    )


def _try_move(spec: EnvSpec, pos: List[int], index: int, delta: int) -> bool:
    destination = pos[index] + delta
    if not 0 <= destination < spec.D or _occupied(spec, pos, destination, ignore=index):
        return False
    pos[index] = destination
    return True


def mover_unblocked(spec: EnvSpec, state: GridState) -> bool:
    """True when both neighbours of the stochastic mover are free cells."""

    if spec.stochastic_mover is None:
        return False
    p = state.pos[spec.stochastic_mover]
    return all(
        0 <= p + d < spec.D and not _occupied(spec, state.pos, p + d, ignore=spec.stochastic_mover)
        for d in (-1, 1)
    )


# --- sampling ---------------------------------------------------------------


def sample_initial(spec: EnvSpec, split: str, rng: np.random.Generator) -> GridState:
    """Draw an initial state; the train split keeps left-only objects left of the apex."""

    _check_split(split)
    pos = [0] * spec.n_objects
    taken: set = set()
    placed = [obj for obj in spec.objects if not obj.is_agent]
    # restricted objects first so the joint draw stays uniform over valid layouts
    placed.sort(key=lambda obj: not (split == "train" and obj.train_left_only))

    for obj in placed:
        limit = spec.apex if split == "train" and obj.train_left_only else spec.D
        free = [cell for cell in range(limit) if cell not in taken]
        if not free:
            raise GridEnvError(
                code="insufficient_cells",
                message=f"No free cell left for object `{obj.name}`.",
                diagnostics={"split": split, "limit": limit, "taken": sorted(taken)},
            )
        cell = free[int(rng.integers(len(free)))]
        pos[obj.id] = cell
        taken.add(cell)

    if spec.agent_index is not None:
        pos[spec.agent_index] = int(rng.integers(spec.D))
    return GridState(tuple(pos))


def to_state_tensor(spec: EnvSpec, state: GridState) -> np.ndarray:
    """One-hot |O| x D position tensor."""

    tensor = np.zeros((spec.n_objects, spec.D), dtype=np.float64)
    tensor[np.arange(spec.n_objects), list(state.pos)] = 1.0
    return tensor


def sample_action(spec: EnvSpec, rng: np.random.Generator) -> Action:
    if not spec.has_agent:
        return Action.NONE
    return AGENT_ACTIONS[int(rng.integers(len(AGENT_ACTIONS)))]


def generate_episode(
    spec: EnvSpec,
    split: str,
    seed: int,
    policy: Optional[str] = None,
) -> Episode:
    policy = _resolve_policy(spec, policy)
    rng = make_rng(seed, STREAM_GEN)
    state = sample_initial(spec, split, rng)
    states = [state]
    actions: List[Action] = []
    for _ in range(spec.horizon):
        action = sample_action(spec, rng) if policy == "random" else Action.NONE
        state = step(spec, state, action, rng)
        actions.append(action)
        states.append(state)
    return Episode(spec=spec, split=split, states=states, actions=actions, seed=int(seed))


def generate_episodes(
    spec: EnvSpec,
    split: str,
    n: int,
    rng: np.random.Generator,
    policy: Optional[str] = None,
) -> List[Episode]:
    """n episodes whose per-episode seeds are drawn from rng."""

    if n < 1:
        raise GridEnvError(code="invalid_count", message=f"n must be >= 1, got {n}.")
    seeds = [int(rng.integers(2**31 - 1)) for _ in range(n)]
    return [generate_episode(spec, split, seed, policy) for seed in seeds]


def _resolve_policy(spec: EnvSpec, policy: Optional[str]) -> str:
    if policy is None:
        return "random" if spec.has_agent else "none"
    if policy not in POLICIES:
        raise GridEnvError(code="invalid_policy", message=f"Unknown policy `{policy}`.")
    if (policy == "random") != spec.has_agent:
        raise GridEnvError(
            code="action_mode_mismatch",
            message=f"Policy `{policy}` does not fit environment `{spec.name}`.",
        )
    return policy


def _check_split(split: str) -> None:
    if split not in SPLITS:
        raise GridEnvError(code="invalid_split", message=f"Split must be one of {SPLITS}, got `{split}`.")


# --- episode files ------------------------------------------------------------


def write_episodes(path: Union[str, Path], episodes: Sequence[Episode]) -> Path:
    """Write newline-delimited JSON, one episode per line."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as handle:
        for episode in episodes:
            handle.write(json.dumps(episode.to_record(), separators=(",", ":")) + "\n")
    return target


def read_episodes(path: Union[str, Path]) -> List[Episode]:
    source = Path(path)
    if not source.exists():
        raise GridEnvError(code="missing_episodes", message=f"Episode file not found: {source}")
    episodes: List[Episode] = []
    with source.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                episodes.append(Episode.from_record(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise GridEnvError(
                    code="invalid_episode",
                    message=f"Unparsable episode record: {exc.msg}",
                    diagnostics={"line": line_no},
                ) from exc
    return episodes
