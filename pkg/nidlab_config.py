#!/usr/bin/env python3
"""Shared run configuration for NID Lab commands."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv

from grid_envs import EnvSpec, make_env
from nid_harness import AblationConfig, MODEL_KINDS, expand_grid, full_ablation_grid
from nid_model import Hyper
from nidlab_errors import ConfigError, GridEnvError, NidModelError

# Load environment variables from .env file
load_dotenv()

SEED_ENV_VAR = "NIDLAB_SEED"
EFFECTIVE_CONFIG_NAME = "effective_config.json"


DEFAULT_CONFIG: Dict[str, Any] = {
    "env": {
        "preset": "inclined_plane",
        "D": 12,
        "apex": None,
        "agent": False,
        "objects": None,
        "horizon": 8,
    },
    "model": {
        "kind": "nid",
        "K": 4,
        "m": 3,
        "d1": 2,
        "dP": 4,
        "dR": 4,
        "S1": 1,
        "S2": 1,
        "H": 16,
        "lambda1": 5e-7,
        "lambda2": 5e-6,
        "lr": 1e-2,
        "rho": 0.99,
        "eps": 1e-8,
        "variant": "sample_dependent",
        "init": "random",
    },
    "train": {
        "steps": 20000,
        "seeds": list(range(10)),
        "episodes": None,
    },
    "eval": {
        "n_rollouts": 100,
        "horizon": 8,
        "splits": ["train", "test"],
    },
    "gen": {
        "n_episodes": 100,
        "split": "train",
    },
    "ablation": {
        "preset": "custom",
        "lambda1": [5e-8, 5e-7],
        "lambda2": [5e-6, 5e-5],
        "K": [4],
        "init": ["random", "fixed_rows"],
        "variant": ["sample_dependent"],
        "seeds": [0, 1],
        "jobs": None,
    },
    "check_grad": {
        "n_configs": 100,
        "h": 1e-5,
        "tolerance": 1e-4,
        "seed": 0,
    },
    "output_dir": "./nidlab_runs/",
}

# Types for keys whose default is None.
NULLABLE_TYPES: Dict[str, Tuple[type, ...]] = {
    "env.apex": (int,),
    "env.objects": (list,),
    "train.episodes": (str,),
    "ablation.jobs": (int,),
}
ABLATION_PRESETS = ("custom", "full")


def _expected_types(path: str, default: Any) -> Tuple[type, ...]:
    if default is None:
        return NULLABLE_TYPES[path]
    if isinstance(default, bool):
        return (bool,)
    if isinstance(default, float):
        return (float, int)
    return (type(default),)


def _merge(base: Dict[str, Any], overrides: Dict[str, Any], prefix: str) -> None:
    for key, value in overrides.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(
                code="unknown_key",
                message=f"Unknown configuration key `{path}`.",
                diagnostics={"key": path},
            )
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(
                    code="invalid_type",
                    message=f"`{path}` must be an object.",
                    diagnostics={"key": path},
                )
            _merge(default, value, path + ".")
            continue
        allowed = _expected_types(path, DEFAULT_LOOKUP[path])
        wrong_bool = isinstance(value, bool) and bool not in allowed
        if value is not None and (wrong_bool or not isinstance(value, allowed)):
            raise ConfigError(
                code="invalid_type",
                message=f"`{path}` expects {' or '.join(t.__name__ for t in allowed)}, got {type(value).__name__}.",
                diagnostics={"key": path, "value": value},
            )
        if value is None and DEFAULT_LOOKUP.get(path) is not None:
            raise ConfigError(code="invalid_type", message=f"`{path}` cannot be null.", diagnostics={"key": path})
        base[key] = copy.deepcopy(value)


def _flatten(config: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in config.items():
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


DEFAULT_LOOKUP = _flatten(DEFAULT_CONFIG)


def build_config(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Create a deep-copied runtime config with validated overrides."""

    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if overrides:
        _merge(cfg, overrides, "")
    return cfg


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    if path is None:
        return build_config()
    source = Path(path)
    if not source.exists():
        raise ConfigError(code="missing_config", message=f"Config file not found: {source}", diagnostics={"path": str(source)})
    try:
        overrides = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(
            code="invalid_json",
            message=f"{source}: {exc.msg}",
            diagnostics={"path": str(source), "line": exc.lineno, "column": exc.colno},
        ) from exc
    if not isinstance(overrides, dict):
        raise ConfigError(code="invalid_type", message="Config document must be a JSON object.")
    return build_config(overrides)


def write_effective_config(cfg: Dict[str, Any], out_dir: Union[str, Path]) -> Path:
    target = Path(out_dir) / EFFECTIVE_CONFIG_NAME
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return target


def resolve_seeds(cfg: Dict[str, Any], flag_seed: Optional[int] = None) -> List[int]:
    """--seed wins over NIDLAB_SEED, which wins over train.seeds."""

    if flag_seed is not None:
        return [int(flag_seed)]
    raw = os.getenv(SEED_ENV_VAR, "").strip()
    if raw:
        try:
            return [int(raw)]
        except ValueError as exc:
            raise ConfigError(
                code="invalid_type",
                message=f"{SEED_ENV_VAR} must be an integer, got `{raw}`.",
                diagnostics={"key": SEED_ENV_VAR},
            ) from exc
    seeds = [int(s) for s in cfg["train"]["seeds"]]
    if not seeds:
        raise ConfigError(code="invalid_value", message="train.seeds is empty.", diagnostics={"key": "train.seeds"})
    return seeds


def env_spec_from_config(cfg: Dict[str, Any]) -> EnvSpec:
    block = cfg["env"]
    try:
        return make_env(
            preset=block["preset"],
            D=block["D"],
            apex=block["apex"],
            agent=block["agent"],
            horizon=block["horizon"],
            objects=block["objects"],
        )
    except GridEnvError as exc:
        raise ConfigError(
            code="invalid_value",
            message=f"env: {exc.message}",
            diagnostics={"key": "env", "cause": exc.code},
        ) from exc


def hyper_from_config(cfg: Dict[str, Any], seed: int = 0) -> Hyper:
    block = {key: value for key, value in cfg["model"].items() if key != "kind"}
    try:
        return Hyper(**block, steps=cfg["train"]["steps"], seed=int(seed))
    except NidModelError as exc:
        raise ConfigError(
            code="invalid_value",
            message=f"model: {exc.message}",
            diagnostics={"key": "model", "cause": exc.code},
        ) from exc


def model_kind(cfg: Dict[str, Any], override: Optional[str] = None) -> str:
    kind = override or cfg["model"]["kind"]
    if kind not in MODEL_KINDS:
        raise ConfigError(
            code="invalid_value",
            message=f"model.kind must be one of {MODEL_KINDS}, got `{kind}`.",
            diagnostics={"key": "model.kind"},
        )
    return kind


def ablation_configs(cfg: Dict[str, Any]) -> List[AblationConfig]:
    block = cfg["ablation"]
    if block["preset"] not in ABLATION_PRESETS:
        raise ConfigError(
            code="invalid_value",
            message=f"ablation.preset must be one of {ABLATION_PRESETS}.",
            diagnostics={"key": "ablation.preset"},
        )
    if block["preset"] == "full":
        return full_ablation_grid(block["variant"][0] if block["variant"] else "sample_dependent")
    configs = expand_grid(
        block["lambda1"], block["lambda2"], block["K"], block["init"], block["variant"], block["seeds"]
    )
    if not configs:
        raise ConfigError(code="invalid_value", message="Ablation grid is empty.", diagnostics={"key": "ablation"})
    return configs
