"""Score container and interpretation bands shared by all fidelity metrics.

Bands (half-open, boundary resolved downward-exclusive):
Poor [0, 0.60), Fair [0.60, 0.80), Good [0.80, 0.90), Excellent [0.90, 1].
Scores >= 0.99 additionally carry an overfit flag: a generator that
reproduces the real data that closely may simply have memorized it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

OVERFIT_THRESHOLD = 0.99

_BANDS = (
    (0.90, "Excellent"),
    (0.80, "Good"),
    (0.60, "Fair"),
    (0.0, "Poor"),
)


def categorize(value: float) -> str:
    for lo, label in _BANDS:
        if value >= lo:
            return label
    return "Poor"


@dataclass(frozen=True)
class MetricScore:
    name: str
    value: float
    category: str
    overfit_flag: bool
    skipped: bool = False
    reason: Optional[str] = None

    @classmethod
    def of(cls, name: str, value: float) -> "MetricScore":
        value = float(value)
        if not 0.0 <= value <= 1.0:
            # Guard against tiny float drift; anything further out is a bug.
            if -1e-12 <= value <= 1.0 + 1e-12:
                value = min(1.0, max(0.0, value))
            else:
                raise ValueError(f"score {name!r} out of range: {value}")
        return cls(
            name=name,
            value=value,
            category=categorize(value),
            overfit_flag=value >= OVERFIT_THRESHOLD,
        )

    @classmethod
    def skip(cls, name: str, reason: str) -> "MetricScore":
        return cls(name=name, value=float("nan"), category="Skipped",
                   overfit_flag=False, skipped=True, reason=reason)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "value": None if self.skipped else self.value,
            "category": self.category,
            "overfit_flag": self.overfit_flag,
        }
        if self.skipped:
            d["skipped"] = True
            d["reason"] = self.reason
        return d


def present(scores) -> list[MetricScore]:
    return [s for s in scores if not s.skipped]


def mean_score(scores) -> Optional[float]:
    vals = [s.value for s in present(scores)]
    if not vals:
        return None
    return float(sum(vals) / len(vals))
