"""Single-pass minibatch SGD on a synthetic mixed-quality linear regression task.

Every training sample carries a quality score ``q`` in [0, 1]; its label noise
has standard deviation ``noise_max * (1 - q)``. Validation labels are
noiseless, so validation loss measures distance to the ground truth.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import averaging, ordering
from .averaging import EMA, SMA, WMA, AverageStrategy, CheckpointSeries
from .ordering import OrderPolicy
from .schedules import Schedule, eta_at

__all__ = [
    "UniformScores",
    "TwoPool",
    "ToyTaskConfig",
    "ToyTask",
    "TrainConfig",
    "RunRecord",
    "TrainingDiverged",
    "gen_task",
    "train",
    "evaluate",
    "run_cma",
]


DEFAULT_NOISE_MAX = 4.0
DEFAULT_PEAK_LR = 0.01
DEFAULT_DECAY_FRACTION = 0.2


@dataclass(frozen=True)
class UniformScores:
    pass


@dataclass(frozen=True)
class TwoPool:
    low_fraction: float = 0.8
    low_range: tuple[float, float] = (0.0, 0.5)
    high_range: tuple[float, float] = (0.5, 1.0)


@dataclass(frozen=True)
class ToyTaskConfig:
    dim: int = 32
    n_train: int = 200_000
    n_val: int = 4096
    noise_max: float = DEFAULT_NOISE_MAX
    quality: Union[UniformScores, TwoPool] = field(default_factory=UniformScores)
    seed: int = 0

    def noise_std(self, q: np.ndarray) -> np.ndarray:
        return self.noise_max * (1.0 - np.asarray(q))


@dataclass
class ToyTask:
    config: ToyTaskConfig
    w_star: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    scores: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    @property
    def dataset(self) -> ordering.ScoredDataset:
        return ordering.ScoredDataset(self.scores)


def gen_task(cfg: ToyTaskConfig) -> ToyTask:
    """Draw ``w*``, standard-normal inputs, quality scores and noisy labels.

    Training and validation use separate child streams of ``cfg.seed``, so the
    validation set never overlaps the training stream.
    """
    if cfg.noise_max < 0:
        raise ValueError("noise_max must be non-negative")
    truth_ss, train_ss, val_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    w_star = np.random.default_rng(truth_ss).standard_normal(cfg.dim) / math.sqrt(cfg.dim)

    rng = np.random.default_rng(train_ss)
    n = cfg.n_train
    if isinstance(cfg.quality, TwoPool):
        p = cfg.quality
        n_low = int(round(p.low_fraction * n))
        q = np.concatenate([rng.uniform(*p.low_range, size=n_low), rng.uniform(*p.high_range, size=n - n_low)])
    else:
        q = rng.random(n)
    x = rng.standard_normal((n, cfg.dim))
    eps = rng.standard_normal(n)
    y = x @ w_star + cfg.noise_std(q) * eps

    vrng = np.random.default_rng(val_ss)
    x_val = vrng.standard_normal((cfg.n_val, cfg.dim))
    return ToyTask(cfg, w_star, x, y, q, x_val, x_val @ w_star)


def evaluate(params: np.ndarray, x_val: np.ndarray, y_val: np.ndarray) -> float:
    """Mean of ``0.5 * (x @ params - y)**2`` over the validation set."""
    params = np.asarray(params, dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise ValueError("parameters contain non-finite values")
    r = x_val @ params - y_val
    return float(0.5 * np.mean(r * r))


@dataclass(frozen=True)
class TrainConfig:
    schedule: Schedule
    order: OrderPolicy
    batch_size: int = 32
    checkpoint_interval: int = 100
    checkpoint_window: int = 6
    averaging: Optional[AverageStrategy] = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_window < 1 or self.checkpoint_interval < 1:
            raise ValueError("checkpoint window and interval must be >= 1")
        if (self.checkpoint_window - 1) * self.checkpoint_interval >= self.schedule.total_steps:
            raise ValueError("checkpoint window does not fit inside the run")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass
class RunRecord:
    steps: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def append(self, step: int, lr: float, train_loss: float, val_loss: float = math.nan) -> None:
        self.steps.append(step)
        self.lrs.append(lr)
        self.train_losses.append(train_loss)
        self.val_losses.append(val_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "lr", "train_loss", "val_loss"])
        for row in zip(self.steps, self.lrs, self.train_losses, self.val_losses):
            w.writerow([row[0]] + [repr(float(v)) if not math.isnan(v) else "" for v in row[1:]])
        return buf.getvalue()


def steps_for(n_train: int, batch_size: int) -> int:
    return n_train // batch_size


def checkpoint_steps(total: int, interval: int, window: int) -> list[int]:
    return [total - i * interval for i in range(window - 1, -1, -1)]


def train(task: ToyTask, cfg: TrainConfig) -> tuple[CheckpointSeries, RunRecord]:
    """One pass of minibatch SGD over the ordered training stream.

    Update ``t`` (1-based) uses ``eta_at(schedule, t)``, so the last update runs at
    ``end_lr``. Checkpoints are taken after updates ``T - (k-1)s, ..., T - s, T``.
    """
    B = cfg.batch_size
    T = cfg.schedule.total_steps
    if T * B > task.x_train.shape[0]:
        raise ValueError(f"{T} steps of {B} exceed the {task.x_train.shape[0]}-sample stream")
    order = ordering.make_order(task.scores, cfg.order)
    X = task.x_train[order]
    Y = task.y_train[order]

    ck_steps = set(checkpoint_steps(T, cfg.checkpoint_interval, cfg.checkpoint_window))
    w = np.zeros(task.config.dim)
    record = RunRecord()
    ckpts, saved_at = [], []
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught below
        for t in range(1, T + 1):
            xb = X[(t - 1) * B: t * B]
            yb = Y[(t - 1) * B: t * B]
            resid = xb @ w - yb
            loss = 0.5 * float(resid @ resid) / B
            if not math.isfinite(loss):
                raise TrainingDiverged(t, loss)
            lr = eta_at(cfg.schedule, t)
            w = w - lr * (xb.T @ resid) / B
            if t in ck_steps:
                if not np.all(np.isfinite(w)):
                    raise TrainingDiverged(t, math.inf)
                ckpts.append(w.copy())
                saved_at.append(t)
                record.append(t, lr, loss, evaluate(w, task.x_val, task.y_val))
            else:
                record.append(t, lr, loss)
    return CheckpointSeries(ckpts, saved_at), record


def run_cma(task: ToyTask, cfg: TrainConfig) -> tuple[np.ndarray, float]:
    """Order the data, train, and average the checkpoint tail.

    With a constant schedule and an ascending order this is curriculum model
    averaging; with a moderate WSD decay it is the decay-plus-averaging variant.
    Without an averaging strategy the last checkpoint is returned.
    """
    series, _ = train(task, cfg)
    if cfg.averaging is None:
        final = series.checkpoints[-1]
    else:
        final = averaging.average(series, cfg.averaging)
    return final, evaluate(final, task.x_val, task.y_val)


# -- (de)serialization for the CLI ---------------------------------------------

def strategy_from_dict(d: Optional[dict]) -> Optional[AverageStrategy]:
    if not d:
        return None
    kind = d["kind"].lower()
    if kind == "sma":
        return SMA()
    if kind == "ema":
        return EMA(float(d.get("alpha", averaging.DEFAULT_EMA_ALPHA)), d.get("convention", "recursive"))
    if kind == "wma":
        if "weights" in d:
            return WMA(tuple(d["weights"]))
        return averaging.wma_from_schedule(int(d.get("window", averaging.DEFAULT_WINDOW)))
    raise ValueError(f"unknown averaging kind {kind!r}")


def task_from_dict(d: dict) -> ToyTaskConfig:
    d = dict(d)
    q = d.pop("quality", None)
    if isinstance(q, dict) and q.get("kind", "").lower() == "two_pool":
        quality = TwoPool(float(q.get("low_fraction", 0.8)), tuple(q.get("low_range", (0.0, 0.5))),
                          tuple(q.get("high_range", (0.5, 1.0))))
    else:
        quality = UniformScores()
    return ToyTaskConfig(quality=quality, **d)


def load_run_config(path: Union[str, Path]) -> tuple[ToyTaskConfig, TrainConfig]:
    """Read ``{"task": {...}, "train": {...}}`` JSON; see the README for the keys."""
    raw = json.loads(Path(path).read_text())
    task = task_from_dict(raw.get("task", {}))
    tr = raw["train"]
    B = int(tr.get("batch_size", 32))
    total = steps_for(task.n_train, B)
    sched = dict(tr["schedule"])
    sched.setdefault("total_steps", total)
    sched.setdefault("warmup_steps", 0)
    sched.setdefault("end_lr", sched["peak_lr"])
    sched.setdefault("decay_start", sched["total_steps"])
    sched.setdefault("shape", "constant")
    policy = ordering.policy_from_string(tr.get("order", "uniform"), int(tr.get("seed", 0)),
                                         int(tr.get("folds", 4)), tr.get("split"))
    cfg = TrainConfig(
        schedule=Schedule.from_dict(sched),
        order=policy,
        batch_size=B,
        checkpoint_interval=int(tr.get("checkpoint_interval", 100)),
        checkpoint_window=int(tr.get("checkpoint_window", averaging.DEFAULT_WINDOW)),
        averaging=strategy_from_dict(tr.get("averaging")),
        seed=int(tr.get("seed", 0)),
    )
    return task, cfg


def config_dict(task: ToyTaskConfig) -> dict:
    return asdict(task)
