# -*- coding: utf-8 -*-
"""
Exception types shared across the mapping back-end.

Each error also derives from the closest builtin so callers that only care
about the broad category (ValueError, KeyError, RuntimeError) can catch it.
"""
from __future__ import annotations

from typing import Optional


class RoomGraphError(Exception):
    """Base class for all back-end errors."""


class BranchAmbiguityError(RoomGraphError, ValueError):
    """Sim3 logarithm requested too close to rotation angle pi."""


class RankDeficiencyError(RoomGraphError, ValueError):
    """Correspondences do not constrain a similarity transform."""


class InsufficientOverlapError(RoomGraphError, ValueError):
    """Too few associations between an estimate and its reference."""


class StructuralError(RoomGraphError, ValueError):
    """Scene graph mutation would leave a dangling reference or duplicate id."""


class LookupFailure(RoomGraphError, KeyError):
    """Unknown room, object or frame id."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else ""


class SceneGraphParseError(RoomGraphError, ValueError):
    """Malformed scene graph document."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class StreamOrderError(RoomGraphError, ValueError):
    """Frame ids must be strictly increasing in a stream."""


class ReconstructionFailedError(RoomGraphError, RuntimeError):
    """The reconstruction provider could not produce a batch reconstruction."""


class EdgeEstimationError(RoomGraphError, RuntimeError):
    """No transition pair produced a valid relative pose."""


class UnconstrainedVariablesError(RoomGraphError, RuntimeError):
    """Pose graph has variables no factor constrains."""


class ConfigError(RoomGraphError, ValueError):
    """Invalid configuration value, unknown key, or infeasible request."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class InvalidInputError(RoomGraphError, ValueError):
    """Precondition violated by the caller."""
