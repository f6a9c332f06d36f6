#!/usr/bin/env python3
"""Typed exceptions shared by NID Lab modules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional


@dataclass
class NidLabError(Exception):
    """Typed exception with a stable code and optional diagnostics."""

    code: str
    message: str
    diagnostics: Optional[Dict[str, Any]] = None

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class DiffCoreError(NidLabError):
    """Contract violation inside the differentiation core."""


class GridEnvError(NidLabError):
    """Invalid environment, state or action."""


class NidModelError(NidLabError):
    """Invalid hyperparameters, parameters or model inputs."""


class HarnessError(NidLabError):
    """Training or evaluation failure."""


class ConfigError(NidLabError):
    """Invalid or unreadable run configuration."""
