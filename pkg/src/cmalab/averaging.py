"""Checkpoint averaging: SMA, EMA and schedule-derived WMA.

Checkpoints are flat float64 vectors, ordered oldest first, so ``checkpoints[-1]``
is the most recent model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .schedules import Schedule, Shape, normalized_etas

__all__ = [
    "CheckpointSeries",
    "SMA",
    "EMA",
    "WMA",
    "AverageStrategy",
    "average",
    "strategy_weights",
    "ema_weights",
    "geometric_ema_weights",
    "derive_wma_weights",
    "wma_from_schedule",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_WINDOW = 6
DEFAULT_EMA_ALPHA = 0.2
WMA_END_RATIO = 0.05


@dataclass
class CheckpointSeries:
    checkpoints: list[np.ndarray]
    steps: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("a checkpoint series needs at least one checkpoint")
        self.checkpoints = [np.asarray(c, dtype=np.float64).ravel() for c in self.checkpoints]
        dim = self.checkpoints[0].size
        if dim == 0:
            raise ValueError("checkpoints must be non-empty vectors")
        for c in self.checkpoints:
            if c.size != dim:
                raise ValueError(f"checkpoint dims differ: {c.size} != {dim}")
            if not np.all(np.isfinite(c)):
                raise ValueError("checkpoint contains non-finite values")
        if not self.steps:
            self.steps = list(range(1, len(self.checkpoints) + 1))
        if len(self.steps) != len(self.checkpoints):
            raise ValueError("steps and checkpoints differ in length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("checkpoint steps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.checkpoints)

    @property
    def dim(self) -> int:
        return self.checkpoints[0].size

    def tail(self, k: int) -> "CheckpointSeries":
        return CheckpointSeries(self.checkpoints[-k:], self.steps[-k:])


@dataclass(frozen=True)
class SMA:
    pass


@dataclass(frozen=True)
class EMA:
    alpha: float = DEFAULT_EMA_ALPHA
    # "recursive": M_avg <- a*M_i + (1-a)*M_avg, oldest to newest.
    # "geometric": weight a**i on the i-th newest checkpoint, normalized.
    convention: str = "recursive"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"EMA alpha must be in (0, 1], got {self.alpha}")
        if self.convention not in ("recursive", "geometric"):
            raise ValueError(f"unknown EMA convention {self.convention!r}")


@dataclass(frozen=True)
class WMA:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ValueError("WMA weights must be finite and non-negative")
        if abs(math.fsum(w) - 1.0) > 1e-9:
            raise ValueError(f"WMA weights must sum to 1, got {math.fsum(w)}")


AverageStrategy = Union[SMA, EMA, WMA]


def ema_weights(n: int, alpha: float) -> np.ndarray:
    """Weights the recursive EMA assigns to ``n`` checkpoints, oldest first."""
    w = np.empty(n)
    w[0] = (1.0 - alpha) ** (n - 1)
    for i in range(1, n):
        w[i] = alpha * (1.0 - alpha) ** (n - 1 - i)
    return w


def geometric_ema_weights(n: int, alpha: float) -> np.ndarray:
    """Weights ``alpha**i / sum(alpha**j)`` with ``i = 0`` the newest, returned oldest first."""
    raw = np.array([alpha ** (n - 1 - i) for i in range(n)])
    return raw / raw.sum()


def strategy_weights(strategy: AverageStrategy, n: int) -> np.ndarray:
    if isinstance(strategy, SMA):
        return np.full(n, 1.0 / n)
    if isinstance(strategy, EMA):
        if strategy.convention == "geometric":
            return geometric_ema_weights(n, strategy.alpha)
        return ema_weights(n, strategy.alpha)
    if isinstance(strategy, WMA):
        if len(strategy.weights) != n:
            raise ValueError(f"WMA has {len(strategy.weights)} weights for {n} checkpoints")
        return np.asarray(strategy.weights)
    raise TypeError(f"not an averaging strategy: {strategy!r}")


def average(series: CheckpointSeries | Sequence[np.ndarray], strategy: AverageStrategy) -> np.ndarray:
    """Average a checkpoint series into a single parameter vector.

    Accumulation runs oldest to newest in extended precision so results are
    bit-reproducible.
    """
    if not isinstance(series, CheckpointSeries):
        series = CheckpointSeries(list(series))
    cks = series.checkpoints
    if isinstance(strategy, EMA) and strategy.convention == "recursive":
        a = np.longdouble(strategy.alpha)
        acc = cks[0].astype(np.longdouble)
        for c in cks[1:]:
            acc = a * c.astype(np.longdouble) + (1 - a) * acc
        return acc.astype(np.float64)
    if isinstance(strategy, SMA):
        acc = np.zeros(series.dim, dtype=np.longdouble)
        for c in cks:
            acc += c
        return (acc / len(cks)).astype(np.float64)

    weights = strategy_weights(strategy, len(cks))
    acc = np.zeros(series.dim, dtype=np.longdouble)
    for w, c in zip(weights, cks):
        acc += np.longdouble(w) * c.astype(np.longdouble)
    return acc.astype(np.float64)


def derive_wma_weights(etas: Sequence[float]) -> list[float]:
    """Turn normalized LRs at each checkpoint into WMA weights.

    ``w_i = eta_i - eta_{i+1}`` and ``w_N = eta_N``; since ``eta_1 = 1`` the
    weights telescope to exactly 1.
    """
    etas = [float(e) for e in etas]
    if len(etas) < 2:
        raise ValueError("need at least two normalized LRs")
    if abs(etas[0] - 1.0) > 1e-12:
        raise ValueError(f"first normalized LR must be 1, got {etas[0]}")
    if etas[-1] < 0:
        raise ValueError("normalized LRs must be non-negative")
    for a, b in zip(etas, etas[1:]):
        if b > a:
            raise ValueError("normalized LRs must be non-increasing")
    return [a - b for a, b in zip(etas, etas[1:])] + [etas[-1]]


def wma_from_schedule(n: int = DEFAULT_WINDOW, end_ratio: float = WMA_END_RATIO,
                      shape: Shape = Shape.WSD_ONE_SQRT) -> WMA:
    """WMA strategy from a hypothetical decay spanning the ``n``-checkpoint window."""
    hypo = Schedule(1.0, end_ratio, 0, n - 1, 0, shape)
    return WMA(tuple(derive_wma_weights(normalized_etas(hypo, n))))


def save_checkpoint(path: str | Path, params: np.ndarray, step: int) -> None:
    """Write ``path`` as little-endian float64 plus a ``.json`` sidecar."""
    path = Path(path)
    arr = np.asarray(params, dtype="<f8").ravel()
    path.write_bytes(arr.tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"dim": int(arr.size), "step": int(step)}, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[np.ndarray, int]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    if arr.size != meta["dim"]:
        raise ValueError(f"{path}: expected {meta['dim']} values, found {arr.size}")
    return arr, int(meta["step"])
