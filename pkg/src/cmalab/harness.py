"""Grid experiment runner with crash-safe, deterministic CSV output.

Each (grid cell, seed) pair is appended to a journal as soon as it finishes.
A rerun skips cells already in the journal, so an interrupted sweep resumes
without duplicates. The final CSV is rewritten from the journal in grid order,
which keeps it byte-identical whatever the completion order was.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__, averaging, ordering, theory, toy
from .schedules import Shape, Schedule, constant, wsd

log = logging.getLogger(__name__)

OUTPUT_ENV = "CMALAB_OUTPUT_DIR"


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


@dataclass
class ExperimentSpec:
    name: str
    grid: dict[str, list]
    seeds: list[int]
    kind: str = "toy"
    base: dict[str, Any] = field(default_factory=dict)
    output_path: Optional[Path] = None

    def __post_init__(self):
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("experiment grid must be non-empty")
        if not self.seeds:
            raise ValueError("experiment needs at least one seed")
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        self.output_path = Path(self.output_path) if self.output_path else default_output_dir()

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        raw = json.loads(Path(path).read_text())
        return cls(raw["name"], raw["grid"], list(raw["seeds"]), raw.get("kind", "toy"),
                   raw.get("base", {}), raw.get("output_path"))

    def cells(self) -> list[dict[str, Any]]:
        keys = list(self.grid)
        return [{**self.base, **dict(zip(keys, combo))} for combo in itertools.product(*(self.grid[k] for k in keys))]


def config_id(kind: str, params: dict[str, Any]) -> str:
    blob = json.dumps({"kind": kind, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# -- cell runners ------------------------------------------------------------

def _toy_schedule(p: dict, total: int) -> Schedule:
    peak = float(p.get("peak_lr", toy.DEFAULT_PEAK_LR))
    shape = Shape(p.get("shape", "constant"))
    warm = int(p.get("warmup_steps", 0))
    if shape is Shape.CONSTANT:
        return constant(peak, total, warm)
    end = peak * float(p.get("end_ratio", 1 / 300))
    if shape is Shape.COSINE:
        return Schedule(peak, end, warm, total, warm, shape)
    return wsd(peak, end, total, float(p.get("decay_fraction", toy.DEFAULT_DECAY_FRACTION)), warm, shape)


def toy_cell(p: dict, seed: int) -> dict[str, float]:
    """Train one toy model; ``seed`` drives both the task draw and any shuffles."""
    tcfg = toy.ToyTaskConfig(
        dim=int(p.get("dim", 32)),
        n_train=int(p.get("n_train", 200_000)),
        n_val=int(p.get("n_val", 4096)),
        noise_max=float(p.get("noise_max", toy.DEFAULT_NOISE_MAX)),
        seed=seed,
    )
    task = toy.gen_task(tcfg)
    B = int(p.get("batch_size", 32))
    sched = _toy_schedule(p, toy.steps_for(tcfg.n_train, B))
    policy = ordering.policy_from_string(str(p.get("order", "uniform")), seed, int(p.get("folds", 4)), p.get("split"))
    avg = p.get("averaging", "none")
    strategy = None if avg in (None, "none") else toy.strategy_from_dict(
        {"kind": avg, "alpha": p.get("alpha", averaging.DEFAULT_EMA_ALPHA),
         "convention": p.get("convention", "recursive"), "window": p.get("window", averaging.DEFAULT_WINDOW)})
    cfg = toy.TrainConfig(sched, policy, B, int(p.get("checkpoint_interval", 100)),
                          int(p.get("window", averaging.DEFAULT_WINDOW)), strategy, seed)
    _, val = toy.run_cma(task, cfg)
    return {"val_loss": val}


def theory_cell(p: dict, seed: int) -> dict[str, float]:
    strategy = theory.strategy_from_name(str(p.get("strategy", "uniform")), p)
    cfg = theory.TheoryConfig(int(p["M"]), float(p.get("L", 1.0)), strategy, seed)
    est = theory.estimate_loss(cfg, int(p.get("runs", 200)))
    return {"mean_loss": est.mean, "stderr": est.stderr}


CELL_KINDS: dict[str, Callable[[dict, int], dict[str, float]]] = {
    "toy": toy_cell,
    "theory": theory_cell,
}


def _run_cell(kind: str, params: dict, seed: int) -> tuple[str, dict[str, float] | str]:
    try:
        return "ok", CELL_KINDS[kind](params, seed)
    except Exception as exc:  # a failed cell is recorded, the sweep continues
        return "failed", f"{type(exc).__name__}: {exc}"


# -- results -----------------------------------------------------------------

FIELDS = ["experiment", "config_id", "seed", "metric", "value", "status", "version"]


@dataclass
class ResultTable:
    experiment: str
    rows: list[dict[str, Any]]
    configs: dict[str, dict]

    @property
    def failed(self) -> list[dict[str, Any]]:
        return [r for r in self.rows if r["status"] != "ok"]

    def values(self, cid: str, metric: str) -> list[float]:
        return [r["value"] for r in self.rows if r["config_id"] == cid and r["metric"] == metric and r["status"] == "ok"]

    def summary(self) -> list[dict[str, Any]]:
        out = []
        metrics = sorted({r["metric"] for r in self.rows if r["status"] == "ok"})
        for cid in self.configs:
            for m in metrics:
                vals = self.values(cid, m)
                if not vals:
                    continue
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                out.append({"config_id": cid, "metric": m, "median": float(med), "iqr": float(q3 - q1), "n": len(vals)})
        return out

    def median(self, metric: str, **params) -> float:
        """Median of ``metric`` over seeds for the unique config matching ``params``."""
        hits = [cid for cid, p in self.configs.items() if all(p.get(k) == v for k, v in params.items())]
        if len(hits) != 1:
            raise KeyError(f"{params} matches {len(hits)} configs")
        return float(np.median(self.values(hits[0], metric)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "value": "" if r["value"] is None else repr(float(r["value"]))})
        return buf.getvalue()


def _read_journal(path: Path) -> dict[tuple[str, int], tuple[str, Any]]:
    done: dict[tuple[str, int], tuple[str, Any]] = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        try:
            rec = json.loads(line)
            done[(rec["config_id"], int(rec["seed"]))] = (rec["status"], rec["result"])
        except (ValueError, KeyError):
            # torn final line from an interrupted write
            continue
    return done


def _append_journal(path: Path, cid: str, seed: int, status: str, result: Any) -> None:
    line = json.dumps({"config_id": cid, "seed": seed, "status": status, "result": result}, sort_keys=True)
    with path.open("a") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> ResultTable:
    """Run every grid cell for every seed and write ``<name>.csv`` and ``<name>.json``."""
    out_dir = spec.output_path
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = out_dir / f"{spec.name}.journal.jsonl"
    done = _read_journal(journal)

    cells = spec.cells()
    ids = [config_id(spec.kind, p) for p in cells]
    todo = [(cid, p, s) for cid, p in zip(ids, cells) for s in spec.seeds
            if done.get((cid, s), ("failed",))[0] != "ok"]
    log.info("%s: %d cells, %d to run", spec.name, len(cells) * len(spec.seeds), len(todo))

    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(todo) <= 1:
        for cid, p, s in todo:
            status, result = _run_cell(spec.kind, p, s)
            _append_journal(journal, cid, s, status, result)
            done[(cid, s)] = (status, result)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_run_cell, spec.kind, p, s): (cid, s) for cid, p, s in todo}
            for fut in as_completed(futs):
                cid, s = futs[fut]
                status, result = fut.result()
                _append_journal(journal, cid, s, status, result)
                done[(cid, s)] = (status, result)

    rows = []
    for cid in ids:
        for s in spec.seeds:
            status, result = done[(cid, s)]
            base = {"experiment": spec.name, "config_id": cid, "seed": s, "version": __version__}
            if status == "ok":
                for m in sorted(result):
                    rows.append({**base, "metric": m, "value": result[m], "status": "ok"})
            else:
                log.warning("cell %s seed %s failed: %s", cid, s, result)
                rows.append({**base, "metric": "error", "value": None, "status": "failed"})
    table = ResultTable(spec.name, rows, dict(zip(ids, cells)))

    (out_dir / f"{spec.name}.csv").write_text(table.to_csv())
    manifest = {
        "experiment": spec.name,
        "kind": spec.kind,
        "version": __version__,
        "seeds": spec.seeds,
        "configs": table.configs,
        "summary": table.summary(),
        "failed": len(table.failed),
    }
    (out_dir / f"{spec.name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return table


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return str(x)
