"""Two-dimensional SGD model of curriculum ordering versus LR decay.

The loss is ``0.5 * ||w||^2`` (optimum at the origin). Dataset point ``i``
(1-based) is ``((i - 1) * L / M, u_i)`` with ``u_i ~ Uniform(-L, L)``; the first
coordinate is the learnable signal, the second pure noise. Each SGD step on the
per-sample loss ``0.5 * ||w - x_t||^2`` is the convex combination
``w_t = (1 - eta_t) w_{t-1} + eta_t x_t``.

Four strategies are modelled:

* ``UniformSampling`` -- i.i.d. draws with replacement, any schedule;
* ``AscendPracticalWsd`` -- ascending order, plateau at 1/2 then harmonic decay
  over the last 10% of steps;
* ``AscendWsmd`` -- as above with only ``ceil(M**(2/3))`` decay steps;
* ``AscendSwa`` -- ascending order, constant LR, mean of the last ``n`` iterates.

"Ascending" feeds ``x_t = x^(M - t + 1)``: the far, low-quality end of the signal
axis first and the point at the optimum last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "UniformSampling",
    "AscendPracticalWsd",
    "AscendWsmd",
    "AscendSwa",
    "TheoryConfig",
    "LossEstimate",
    "Moments",
    "gen_dataset",
    "run_sgd",
    "harmonic_wsd_eta",
    "practical_wsd_eta",
    "wsmd_eta",
    "practical_t0",
    "wsmd_t0",
    "swa_window",
    "strategy_etas",
    "swa_tail",
    "run_streams",
    "simulate",
    "estimate_loss",
    "oracle_moments",
    "fit_scaling",
    "strategy_from_name",
]


# -- schedules ---------------------------------------------------------------

def practical_t0(M: int) -> int:
    return M - math.floor(0.9 * M)


def wsmd_t0(M: int, exponent: float = 2 / 3) -> int:
    return min(M, max(2, math.ceil(M ** exponent)))


def swa_window(M: int, exponent: float = 2 / 3) -> int:
    return min(M, max(1, math.ceil(M ** exponent)))


def harmonic_wsd_eta(t: int, M: int, T0: int, plateau: float = 0.5) -> float:
    """Plateau for ``t <= M - T0 + 1``, then ``1 / (t - (M - T0))`` down to ``1 / T0`` at ``t = M``."""
    if not 1 <= t <= M:
        raise ValueError(f"step {t} outside [1, {M}]")
    if not 2 <= T0 <= M:
        raise ValueError(f"T0={T0} outside [2, {M}]")
    if t <= M - T0 + 1:
        return plateau
    return 1.0 / (t - (M - T0))


def practical_wsd_eta(t: int, M: int) -> float:
    return harmonic_wsd_eta(t, M, practical_t0(M))


def wsmd_eta(t: int, M: int, T0: Optional[int] = None) -> float:
    return harmonic_wsd_eta(t, M, wsmd_t0(M) if T0 is None else T0)


def _harmonic_array(M: int, T0: int, plateau: float = 0.5) -> np.ndarray:
    t = np.arange(1, M + 1, dtype=np.float64)
    decay = 1.0 / np.maximum(t - (M - T0), 1.0)
    return np.where(t <= M - T0 + 1, plateau, decay)


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class UniformSampling:
    # "constant" (eta0 every step), "practical_wsd" or "wsmd"
    schedule: str = "constant"
    eta0: float = 0.5


@dataclass(frozen=True)
class AscendPracticalWsd:
    pass


@dataclass(frozen=True)
class AscendWsmd:
    t0_exponent: float = 2 / 3


@dataclass(frozen=True)
class AscendSwa:
    eta0: float = 0.5
    n_exponent: float = 2 / 3


Strategy = Union[UniformSampling, AscendPracticalWsd, AscendWsmd, AscendSwa]

STRATEGIES = {
    "uniform": UniformSampling,
    "ascend_practical_wsd": AscendPracticalWsd,
    "ascend_wsmd": AscendWsmd,
    "ascend_swa": AscendSwa,
}


def strategy_from_name(name: str, params: Optional[dict] = None) -> Strategy:
    """Build a strategy from its CLI name, taking optional fields from ``params``."""
    p = params or {}
    name = name.lower().replace("-", "_")
    if name == "uniform":
        return UniformSampling(str(p.get("schedule", "constant")), float(p.get("eta0", 0.5)))
    if name == "ascend_practical_wsd":
        return AscendPracticalWsd()
    if name == "ascend_wsmd":
        return AscendWsmd(float(p.get("t0_exponent", 2 / 3)))
    if name == "ascend_swa":
        return AscendSwa(float(p.get("eta0", 0.5)), float(p.get("n_exponent", 2 / 3)))
    raise ValueError(f"unknown strategy {name!r}; expected one of {sorted(STRATEGIES)}")


@dataclass(frozen=True)
class TheoryConfig:
    M: int
    L: float = 1.0
    strategy: Strategy = field(default_factory=UniformSampling)
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        eta0 = getattr(self.strategy, "eta0", 0.5)
        if not 0 < eta0 <= 1:
            raise ValueError(f"eta0 must be in (0, 1], got {eta0}")

    @property
    def d(self) -> float:
        return self.L / self.M

    @property
    def ascending(self) -> bool:
        return not isinstance(self.strategy, UniformSampling)


@dataclass(frozen=True)
class LossEstimate:
    mean: float
    stderr: float
    runs: int


@dataclass(frozen=True)
class Moments:
    """Exact first and second moments of the final parameter, per axis."""
    mean1: float
    second1: float
    mean2: float
    second2: float

    @property
    def expected_loss(self) -> float:
        return 0.5 * (self.second1 + self.second2)


def strategy_etas(config: TheoryConfig) -> np.ndarray:
    """Per-step learning rates ``eta_1 .. eta_M`` for the configured strategy."""
    s, M = config.strategy, config.M
    if isinstance(s, UniformSampling):
        if s.schedule == "constant":
            return np.full(M, float(s.eta0))
        if s.schedule == "practical_wsd":
            return _harmonic_array(M, practical_t0(M), s.eta0)
        if s.schedule == "wsmd":
            return _harmonic_array(M, wsmd_t0(M), s.eta0)
        raise ValueError(f"unknown uniform-sampling schedule {s.schedule!r}")
    if isinstance(s, AscendPracticalWsd):
        return _harmonic_array(M, practical_t0(M))
    if isinstance(s, AscendWsmd):
        return _harmonic_array(M, wsmd_t0(M, s.t0_exponent))
    if isinstance(s, AscendSwa):
        return np.full(M, float(s.eta0))
    raise TypeError(f"unknown strategy {s!r}")


def _swa_n(config: TheoryConfig) -> Optional[int]:
    if isinstance(config.strategy, AscendSwa):
        return swa_window(config.M, config.strategy.n_exponent)
    return None


# -- single-run simulation ---------------------------------------------------

def gen_dataset(M: int, L: float, seed: Union[int, np.random.Generator] = 0) -> np.ndarray:
    """``(M, 2)`` array; row ``i`` is point ``i + 1``."""
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    data = np.empty((M, 2))
    data[:, 0] = np.arange(M) * (L / M)
    # L * (2u - 1) rather than rng.uniform(-L, L) so scaling L scales the draw exactly
    data[:, 1] = L * (2.0 * rng.random(M) - 1.0)
    return data


def ascending_indices(M: int) -> np.ndarray:
    return np.arange(M - 1, -1, -1)


def run_sgd(
    dataset: np.ndarray,
    order: Union[str, Sequence[int]],
    etas: Sequence[float],
    w0: Optional[Sequence[float]] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Run SGD and return the trajectory ``w_0 .. w_T`` as a ``(T + 1, 2)`` array.

    ``order`` is ``"ascend"``, ``"uniform"`` (draws with replacement from ``rng``)
    or an explicit sequence of 0-based dataset indices, one per step.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    etas = np.asarray(etas, dtype=np.float64)
    if np.any(etas < 0) or np.any(etas > 1):
        raise ValueError("learning rates must lie in [0, 1]")
    M = dataset.shape[0]
    if isinstance(order, str):
        if order == "ascend":
            idx = ascending_indices(M)[: len(etas)]
        elif order == "uniform":
            if rng is None:
                raise ValueError("uniform sampling needs an rng")
            idx = rng.integers(0, M, size=len(etas))
        else:
            raise ValueError(f"unknown order {order!r}")
    else:
        idx = np.asarray(order, dtype=np.int64)
    if len(idx) != len(etas):
        raise ValueError("order and etas differ in length")

    if w0 is None:
        # default start (L, 0) with L = M * d recovered from the signal grid
        w0 = (M * (dataset[1, 0] - dataset[0, 0]) if M > 1 else 0.0, 0.0)
    w = np.array(w0, dtype=np.float64)
    traj = np.empty((len(etas) + 1, 2))
    traj[0] = w
    for t, (eta, i) in enumerate(zip(etas, idx), start=1):
        w = (1.0 - eta) * w + eta * dataset[i]
        traj[t] = w
    return traj


def swa_tail(trajectory: np.ndarray, n: int) -> np.ndarray:
    """Plain mean of the last ``n`` iterates."""
    trajectory = np.asarray(trajectory)
    if n <= 0:
        raise ValueError("SWA window must be positive")
    if n > len(trajectory):
        raise ValueError(f"window {n} exceeds trajectory length {len(trajectory)}")
    return trajectory[-n:].mean(axis=0)


def run_streams(seed: int, runs: int) -> list[np.random.Generator]:
    """Independent counter-based (Philox) generators, one per Monte Carlo run."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(runs)]


def simulate(config: TheoryConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One run: returns ``(trajectory, final parameter)``.

    Draw order within a run is fixed: noise coordinates first, then (uniform
    sampling only) the index sequence.
    """
    data = gen_dataset(config.M, config.L, rng)
    etas = strategy_etas(config)
    order = "ascend" if config.ascending else "uniform"
    traj = run_sgd(data, order, etas, w0=(config.L, 0.0), rng=rng)
    n = _swa_n(config)
    final = swa_tail(traj, n) if n is not None else traj[-1]
    return traj, final


# -- Monte Carlo -------------------------------------------------------------

def _batched_final(config: TheoryConfig, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Final parameters for a batch of runs, shape ``(R, 2)``.

    Draws exactly what :func:`simulate` draws from each generator, but advances
    all runs together one step at a time.
    """
    M, L, R = config.M, config.L, len(rngs)
    noise = np.empty((M, R))
    picks = None if config.ascending else np.empty((M, R), dtype=np.int64)
    for r, g in enumerate(rngs):
        noise[:, r] = L * (2.0 * g.random(M) - 1.0)
        if picks is not None:
            picks[:, r] = g.integers(0, M, size=M)
    signal = np.arange(M) * (L / M)
    etas = strategy_etas(config)
    n = _swa_n(config)

    w1 = np.full(R, float(L))
    w2 = np.zeros(R)
    acc1 = np.zeros(R)
    acc2 = np.zeros(R)
    cols = np.arange(R)
    for t in range(M):
        eta = etas[t]
        if picks is None:
            i = M - 1 - t
            x1, x2 = signal[i], noise[i]
        else:
            i = picks[t]
            x1, x2 = signal[i], noise[i, cols]
        w1 = (1.0 - eta) * w1 + eta * x1
        w2 = (1.0 - eta) * w2 + eta * x2
        if n is not None and t >= M - n:
            acc1 += w1
            acc2 += w2
    if n is not None:
        return np.column_stack([acc1 / n, acc2 / n])
    return np.column_stack([w1, w2])


def final_losses(config: TheoryConfig, runs: int, batch: int = 4096) -> np.ndarray:
    """Per-run final losses, in run-index order."""
    if runs < 1:
        raise ValueError("need at least one run")
    rngs = run_streams(config.seed, runs)
    out = []
    for lo in range(0, runs, batch):
        w = _batched_final(config, rngs[lo: lo + batch])
        out.append(0.5 * (w[:, 0] ** 2 + w[:, 1] ** 2))
    return np.concatenate(out)


def estimate_loss(config: TheoryConfig, R: int) -> LossEstimate:
    losses = final_losses(config, R)
    stderr = float(losses.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    return LossEstimate(float(losses.mean()), stderr, R)


# -- exact oracle ------------------------------------------------------------

def _final_coefficients(etas: np.ndarray, swa_n: Optional[int]) -> tuple[float, np.ndarray]:
    """Write the final estimate as ``a * w0 + sum_s c[s] * x_s`` and return ``(a, c)``.

    The final iterate is the ``swa_n = 1`` case of the tail mean.
    """
    M = len(etas)
    n = 1 if swa_n is None else swa_n
    lo = M - n
    keep = 1.0 - etas
    # g[s] = sum over averaged t >= s of prod_{s < j <= t} keep_j  (0-based)
    g = np.empty(M)
    g[M - 1] = 1.0
    for s in range(M - 2, -1, -1):
        g[s] = (1.0 if s >= lo else 0.0) + keep[s + 1] * g[s + 1]
    prefix = np.cumprod(keep)
    return float(prefix[lo:].sum() / n), etas * g / n


def oracle_moments(config: TheoryConfig) -> Moments:
    """Exact moments of the final parameter (after SWA when configured).

    The estimate is linear in the samples. On the signal axis the ascending
    order is deterministic, while uniform sampling feeds i.i.d. picks. On the
    noise axis two steps that pick the same dataset point share its noise draw,
    which happens with probability ``1 / M`` under sampling with replacement.
    """
    M, L = config.M, config.L
    d = L / M
    etas = strategy_etas(config)
    a, c = _final_coefficients(etas, _swa_n(config))
    s1, s2 = c.sum(), (c * c).sum()
    noise_var = L * L / 3.0
    if config.ascending:
        x1 = (M - 1 - np.arange(M)) * d
        w1 = a * L + float(c @ x1)
        mean1, second1 = w1, w1 * w1
        mean2, second2 = 0.0, noise_var * s2
    else:
        mu = (M - 1) * d / 2.0
        var = d * d * (M * M - 1) / 12.0
        mean1 = a * L + mu * s1
        second1 = mean1 * mean1 + var * s2
        mean2 = 0.0
        second2 = noise_var * (s2 + (s1 * s1 - s2) / M)
    return Moments(float(mean1), float(second1), mean2, float(second2))


def fit_scaling(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(loss)`` against ``log(M)``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (M, loss) points")
    if np.any(pts <= 0):
        raise ValueError("scaling fit needs positive M and loss values")
    slope, _ = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return float(slope)
