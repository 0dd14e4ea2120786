"""Small result records shared across modules."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Any

import numpy as np


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and dataclasses to JSON types."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class InequalityReport:
    """Both sides of a numerically checked inequality ``lhs <= rhs``."""

    name: str
    lhs: float
    rhs: float
    holds: bool
    slack: float = 1e-10
    details: dict = field(default_factory=dict)

    @classmethod
    def compare(cls, name, lhs, rhs, slack=1e-10, **details):
        lhs, rhs = float(lhs), float(rhs)
        return cls(name, lhs, rhs, bool(lhs <= rhs + slack), slack, details)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_json(self) -> str:
        return json.dumps(jsonable(self), sort_keys=True)
