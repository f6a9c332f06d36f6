#!/usr/bin/env python3
"""Shared deterministic scoring helpers for NID Lab."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any, Dict, Hashable, List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics import silhouette_samples

from nidlab_errors import HarnessError

# Stream identifiers for make_rng; one independent counter stream per purpose.
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_GEN = 3
STREAM_CHECK = 4


def clamp(value: int, lower: int, upper: int) -> int:
    """Clamp an integer into a bounded range."""

    return max(lower, min(upper, value))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for (seed, stream...) with no shared state."""

    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


def silhouette_score(points: np.ndarray, labels: Sequence[Hashable]) -> float:
    """Mean silhouette with Euclidean distance.

    Singleton clusters and points with a(i) = b(i) = 0 score 0.
    """

    data = np.asarray(points, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    label_list = list(labels)
    if len(label_list) != data.shape[0]:
        raise HarnessError(
            code="shape_mismatch",
            message=f"{data.shape[0]} points but {len(label_list)} labels.",
        )

    distinct = sorted(set(label_list), key=str)
    if len(distinct) < 2:
        raise HarnessError(
            code="single_label",
            message="Silhouette needs at least two distinct labels.",
            diagnostics={"labels": [str(label) for label in distinct]},
        )

    # sklearn rejects n_labels == n_samples; every point is then a singleton.
    if len(distinct) == data.shape[0]:
        return 0.0

    index = {label: i for i, label in enumerate(distinct)}
    encoded = np.array([index[label] for label in label_list])
    distances = cdist(data, data, metric="euclidean")
    per_point = silhouette_samples(distances, encoded, metric="precomputed")
    return float(np.mean(np.nan_to_num(per_point)))


def population_mean_std(values: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation (divide by n)."""

    data = np.asarray(values, dtype=np.float64)
    return data.mean(axis=axis), data.std(axis=axis, ddof=0)


def bin_means(values: Sequence[float], bin_size: int) -> List[float]:
    """Means over consecutive windows; the last window may be partial."""

    if bin_size < 1:
        raise HarnessError(code="invalid_bin", message=f"bin_size must be >= 1, got {bin_size}.")
    data = list(values)
    n_bins = math.ceil(len(data) / bin_size)
    return [float(np.mean(data[i * bin_size : (i + 1) * bin_size])) for i in range(n_bins)]


def stable_hash(payload: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a record."""

    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
