"""Acceptance suite: each check returns a :class:`Criterion` with its measured value,
tolerance and verdict. ``cmalab accept`` and ``tests/test_acceptance.py`` both run it."""

from __future__ import annotations

import functools
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import averaging, harness, theory
from .schedules import Schedule, Shape, normalized_etas

TABLE_WEIGHTS = [0.4249, 0.1760, 0.1350, 0.1138, 0.1003, 0.0500]
THEORY_GRID = (1_000, 10_000, 100_000)
THEORY_RUNS = 200
TOY_SEEDS = (0, 1, 2, 3, 4)
END_RATIOS = (1 / 300, 1 / 30, 0.1, 1 / 3, 2 / 3, 1.0)  # 1e-5 .. 3e-3 against a 3e-3 peak


@dataclass
class Criterion:
    number: int
    name: str
    measured: str
    tolerance: str
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.number}. {self.name}: {self.measured} (need {self.tolerance}; {self.seconds:.1f}s)"


def _timed(fn: Callable[[], Criterion]) -> Criterion:
    t0 = time.perf_counter()
    c = fn()
    c.seconds = time.perf_counter() - t0
    return c


# -- 1, 2: WMA ---------------------------------------------------------------

def wma_weights() -> Criterion:
    hypo = Schedule(1.0, 0.05, 0, 5, 0, Shape.WSD_ONE_SQRT)
    w = averaging.derive_wma_weights(normalized_etas(hypo, 6))
    err = max(abs(a - b) for a, b in zip(w, TABLE_WEIGHTS))
    return Criterion(1, "WMA weight reproduction", f"weights={[round(x, 4) for x in w]} max_err={err:.2e}",
                     "max_err <= 1e-3", err <= 1e-3)


def wma_reweighting(series: int = 100, dim: int = 1000, seed: int = 0) -> Criterion:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(series):
        n = int(rng.integers(2, 12))
        # random non-increasing normalized LRs starting at 1
        etas = np.concatenate([[1.0], np.sort(rng.random(n - 1))[::-1]])
        w = averaging.derive_wma_weights(etas)
        m0 = rng.standard_normal(dim)
        g = rng.standard_normal((n, dim)) * rng.uniform(0.01, 1.0)
        ckpts = m0 + np.cumsum(g, axis=0)
        lhs = averaging.average(list(ckpts), averaging.WMA(tuple(w)))
        rhs = m0 + (np.asarray(etas)[:, None] * g).sum(axis=0)
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
    return Criterion(2, "WMA re-weighting identity", f"max relative error={worst:.2e} over {series} series",
                     "<= 1e-12", worst <= 1e-12)


# -- 3, 4, 5: theory model ---------------------------------------------------

@functools.lru_cache(maxsize=None)
def theory_means(name: str, seed: int = 2024) -> tuple[tuple[int, float], ...]:
    strategy = theory.strategy_from_name(name)
    return tuple((M, theory.estimate_loss(theory.TheoryConfig(M, 1.0, strategy, seed), THEORY_RUNS).mean)
                 for M in THEORY_GRID)


def theory_positive() -> Criterion:
    slopes = {n: theory.fit_scaling(theory_means(n)) for n in ("ascend_wsmd", "ascend_swa")}
    ok = all(-0.85 <= s <= -0.50 for s in slopes.values())
    measured = ", ".join(f"{k} slope={v:.3f}" for k, v in slopes.items())
    return Criterion(3, "Theory scaling, positive cases", measured, "slope in [-0.85, -0.50]", ok)


def theory_negative() -> Criterion:
    parts, ok = [], True
    for name in ("uniform", "ascend_practical_wsd"):
        pts = theory_means(name)
        slope = theory.fit_scaling(pts)
        floor = min(m for _, m in pts)
        ok &= floor >= 0.05 and slope >= -0.1
        parts.append(f"{name} min mean={floor:.4g} slope={slope:.3f}")
    return Criterion(4, "Theory scaling, negative cases", "; ".join(parts),
                     "min mean >= 0.05 and slope >= -0.1 for each", ok)


def oracle_equivalence(runs: int = 100_000, seed: int = 7) -> Criterion:
    cfg = theory.TheoryConfig(50, 1.0, theory.UniformSampling("constant", 0.5), seed)
    est = theory.estimate_loss(cfg, runs)
    exact = theory.oracle_moments(cfg).expected_loss
    z = abs(est.mean - exact) / est.stderr
    return Criterion(5, "Oracle equivalence", f"MC={est.mean:.5f}±{est.stderr:.1e} oracle={exact:.5f} |z|={z:.2f}",
                     "|z| <= 3", z <= 3)


# -- 6, 7, 8: toy trainer ----------------------------------------------------

def _toy_spec(name: str, grid: dict, out: Path, seeds=TOY_SEEDS) -> harness.ExperimentSpec:
    return harness.ExperimentSpec(name, grid, list(seeds), "toy", {}, out)


@functools.lru_cache(maxsize=None)
def toy_tables(workers: Optional[int] = None) -> dict[str, harness.ResultTable]:
    """End-LR sweep for both orders plus the averaged-constant variants, five seeds each."""
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        sweep = harness.run_experiment(_toy_spec("end_lr_sweep", {
            "order": ["uniform", "ascend"],
            "shape": ["wsd_one_sqrt"],
            "end_ratio": list(END_RATIOS[:-1]),
        }, out), workers)
        const = harness.run_experiment(_toy_spec("constant", {
            "order": ["uniform", "ascend", "descend"],
            "shape": ["constant"],
            "averaging": ["none", "ema"],
        }, out), workers)
    return {"sweep": sweep, "constant": const}


def _per_seed(table: harness.ResultTable, **params) -> np.ndarray:
    hits = [cid for cid, p in table.configs.items() if all(p.get(k) == v for k, v in params.items())]
    assert len(hits) == 1, params
    return np.array(table.values(hits[0], "val_loss"))


def _sweep_curve(order: str) -> list[np.ndarray]:
    t = toy_tables()
    curve = [_per_seed(t["sweep"], order=order, end_ratio=r) for r in END_RATIOS[:-1]]
    # an end LR equal to the peak is the constant schedule
    curve.append(_per_seed(t["constant"], order=order, averaging="none"))
    return curve


def curriculum_win() -> Criterion:
    t = toy_tables()["constant"]
    uni, asc = _per_seed(t, order="uniform", averaging="none"), _per_seed(t, order="ascend", averaging="none")
    gap = float(np.median(uni) - np.median(asc))
    noise = float(max(uni.std(ddof=1), asc.std(ddof=1)))
    ok = np.median(asc) < np.median(uni) and gap >= 3 * noise
    return Criterion(6, "Constant-LR curriculum win",
                     f"median val loss ascend={np.median(asc):.3g} uniform={np.median(uni):.3g} gap/seed-sd={gap / noise:.1f}",
                     "ascend < uniform, gap >= 3 seed sd", bool(ok))


def decay_erodes_gap() -> Criterion:
    t = toy_tables()
    const_gap = _per_seed(t["constant"], order="uniform", averaging="none") - _per_seed(t["constant"], order="ascend", averaging="none")
    decay_gap = (_per_seed(t["sweep"], order="uniform", end_ratio=END_RATIOS[0])
                 - _per_seed(t["sweep"], order="ascend", end_ratio=END_RATIOS[0]))
    a, b = float(np.median(const_gap)), float(np.median(decay_gap))
    return Criterion(7, "Decay erodes the gap", f"median gap constant={a:.3g} end_lr=peak/300 {b:.3g}",
                     "decayed gap < constant gap", b < a)


def cma_ordering() -> Criterion:
    t = toy_tables()
    cma = float(np.median(_per_seed(t["constant"], order="ascend", averaging="ema")))
    base = float(np.median(_per_seed(t["sweep"], order="uniform", end_ratio=END_RATIOS[0])))
    argmin = {o: END_RATIOS[int(np.argmin([np.median(v) for v in _sweep_curve(o)]))] for o in ("uniform", "ascend")}
    ok = cma <= base and argmin["ascend"] > argmin["uniform"]
    return Criterion(8, "CMA beats uniform+WSD; ascend prefers a higher end LR",
                     f"CMA={cma:.3g} uniform+WSD={base:.3g}; argmin end/peak uniform={argmin['uniform']:.4g} "
                     f"ascend={argmin['ascend']:.4g}",
                     "CMA <= baseline and ascend argmin > uniform argmin", ok)


# -- 9: determinism ----------------------------------------------------------

def determinism() -> Criterion:
    from . import cli

    commands = [
        ["schedule", "eval", "--shape", "wsd_one_sqrt", "--peak-lr", "3e-3", "--end-lr", "1e-5",
         "--total-steps", "200", "--warmup-steps", "10", "--decay-fraction", "0.2"],
        ["sim", "theory", "--strategy", "uniform", "--M", "200", "--runs", "20", "--seed", "3"],
        ["sim", "theory", "--strategy", "ascend_swa", "--M", "200", "--runs", "5", "--seed", "3",
         "--trajectory", "{tmp}/traj.csv"],
    ]
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for cmd in commands:
            outs = []
            for rep in range(2):
                target = Path(tmp) / f"out{rep}.csv"
                argv = [a.format(tmp=f"{tmp}/{rep}") for a in cmd] + ["--out", str(target)]
                Path(tmp, str(rep)).mkdir(exist_ok=True)
                cli.main(argv)
                blob = target.read_bytes()
                if "--trajectory" in cmd:
                    blob += Path(tmp, str(rep), "traj.csv").read_bytes()
                outs.append(blob)
            if outs[0] != outs[1]:
                mismatched.append(" ".join(cmd[:2]))
        # sweeps: same spec in two fresh directories
        blobs = []
        for rep in range(2):
            spec = harness.ExperimentSpec("det", {"order": ["uniform", "ascend"]}, [0, 1], "toy",
                                          {"n_train": 4000, "checkpoint_interval": 10}, Path(tmp) / f"sweep{rep}")
            harness.run_experiment(spec, workers=2)
            blobs.append((Path(tmp) / f"sweep{rep}" / "det.csv").read_bytes())
        if blobs[0] != blobs[1]:
            mismatched.append("sweep")
    return Criterion(9, "Determinism", f"{len(commands) + 1} commands, mismatches={mismatched or 'none'}",
                     "byte-identical reruns", not mismatched)


CRITERIA: dict[int, Callable[[], Criterion]] = {
    1: wma_weights,
    2: wma_reweighting,
    3: theory_positive,
    4: theory_negative,
    5: oracle_equivalence,
    6: curriculum_win,
    7: decay_erodes_gap,
    8: cma_ordering,
    9: determinism,
}


def run_acceptance(only: Optional[list[int]] = None, out: Callable[[str], None] = print) -> list[Criterion]:
    results = []
    for number, fn in CRITERIA.items():
        if only and number not in only:
            continue
        c = _timed(fn)
        out(c.line())
        results.append(c)
    passed = sum(c.passed for c in results)
    out(f"{passed}/{len(results)} criteria passed")
    return results
