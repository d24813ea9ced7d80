"""Stateless learning-rate schedules.

A :class:`Schedule` is an immutable description; :func:`eta_at` evaluates it at an
integer step. All shapes share a linear warmup from 0 to ``peak_lr`` over
``warmup_steps``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

__all__ = [
    "Shape",
    "Schedule",
    "eta_at",
    "eta_array",
    "normalized_etas",
    "constant",
    "cosine",
    "wsd",
]


class Shape(str, enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"
    WSD_ONE_SQRT = "wsd_one_sqrt"
    WSD_SQRT_CUBE = "wsd_sqrt_cube"


@dataclass(frozen=True)
class Schedule:
    peak_lr: float
    end_lr: float
    warmup_steps: int
    total_steps: int
    decay_start: int
    shape: Shape = Shape.CONSTANT

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if not (math.isfinite(self.peak_lr) and self.peak_lr >= 0):
            raise ValueError(f"peak_lr must be finite and >= 0, got {self.peak_lr}")
        if not (0 <= self.end_lr <= self.peak_lr):
            raise ValueError(f"end_lr must lie in [0, peak_lr], got {self.end_lr}")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not (0 <= self.warmup_steps <= self.decay_start <= self.total_steps):
            raise ValueError(
                "need 0 <= warmup_steps <= decay_start <= total_steps, got "
                f"{self.warmup_steps}, {self.decay_start}, {self.total_steps}"
            )

    @property
    def end_ratio(self) -> float:
        return self.end_lr / self.peak_lr if self.peak_lr > 0 else 0.0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["shape"] = self.shape.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Schedule":
        return cls(
            peak_lr=float(d["peak_lr"]),
            end_lr=float(d["end_lr"]),
            warmup_steps=int(d["warmup_steps"]),
            total_steps=int(d["total_steps"]),
            decay_start=int(d["decay_start"]),
            shape=Shape(d["shape"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Schedule":
        return cls.from_dict(json.loads(s))


def constant(peak_lr: float, total_steps: int, warmup_steps: int = 0) -> Schedule:
    return Schedule(peak_lr, peak_lr, warmup_steps, total_steps, total_steps, Shape.CONSTANT)


def cosine(peak_lr: float, end_lr: float, total_steps: int, warmup_steps: int = 0) -> Schedule:
    return Schedule(peak_lr, end_lr, warmup_steps, total_steps, warmup_steps, Shape.COSINE)


def wsd(
    peak_lr: float,
    end_lr: float,
    total_steps: int,
    decay_fraction: float = 0.2,
    warmup_steps: int = 0,
    shape: Shape = Shape.WSD_ONE_SQRT,
) -> Schedule:
    """WSD schedule whose decay covers the last ``decay_fraction`` of all steps."""
    decay_start = total_steps - int(round(decay_fraction * total_steps))
    decay_start = max(decay_start, warmup_steps)
    return Schedule(peak_lr, end_lr, warmup_steps, total_steps, decay_start, shape)


def _decay_factor(s: Schedule, r: float) -> float:
    """LR at decay progress ``r`` in [0, 1], before warmup is applied."""
    peak, end = s.peak_lr, s.end_lr
    if s.shape is Shape.CONSTANT:
        return peak
    if s.shape is Shape.COSINE:
        # end + (peak - end)(1 + cos)/2 is the usual cosine form rearranged so r=1 hits end_lr exactly
        return end + (peak - end) * 0.5 * (1.0 + math.cos(math.pi * r))
    if s.shape is Shape.WSD_ONE_SQRT:
        root = math.sqrt(r)
        return peak * (1.0 - root) + end * root
    if s.shape is Shape.WSD_SQRT_CUBE:
        return peak * (1.0 - r) ** 1.5
    raise ValueError(f"unknown shape {s.shape!r}")


def _decay_window(s: Schedule) -> tuple[int, int]:
    # cosine decays over everything after warmup
    start = s.warmup_steps if s.shape is Shape.COSINE else s.decay_start
    return start, s.total_steps


def eta_at(schedule: Schedule, t: int) -> float:
    """Learning rate at step ``t`` (``0 <= t <= total_steps``)."""
    s = schedule
    if not 0 <= t <= s.total_steps:
        raise IndexError(f"step {t} outside [0, {s.total_steps}]")
    if t <= s.warmup_steps and s.warmup_steps > 0:
        return s.peak_lr * t / s.warmup_steps
    if s.shape is Shape.CONSTANT:
        return s.peak_lr
    start, stop = _decay_window(s)
    if t < start or stop == start:
        return s.peak_lr
    return _decay_factor(s, (t - start) / (stop - start))


def eta_array(schedule: Schedule, start: int = 0, stop: int | None = None) -> np.ndarray:
    """``eta_at`` over ``range(start, stop + 1)`` as a float64 array."""
    stop = schedule.total_steps if stop is None else stop
    return np.array([eta_at(schedule, t) for t in range(start, stop + 1)], dtype=np.float64)


def normalized_etas(schedule: Schedule, n: int) -> list[float]:
    """Schedule values at ``n`` evenly spaced decay positions, scaled so the first is 1.

    Position ``i`` (0-based) sits at decay progress ``i / (n - 1)``; this is the
    hypothetical schedule used to derive WMA checkpoint weights.
    """
    if n < 2:
        raise ValueError(f"need at least 2 checkpoints, got {n}")
    if schedule.peak_lr <= 0:
        raise ValueError("normalization needs peak_lr > 0")
    return [_decay_factor(schedule, i / (n - 1)) / schedule.peak_lr for i in range(n)]
