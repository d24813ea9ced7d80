"""Quality-score data orderings: shuffles, sorted curricula and folding."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "ScoredDataset",
    "Uniform",
    "Ascend",
    "Descend",
    "Folded",
    "TwoPhase",
    "AllTogether",
    "OrderPolicy",
    "make_order",
    "policy_from_string",
    "read_scores",
    "write_permutation",
]


@dataclass
class ScoredDataset:
    scores: np.ndarray
    payload: Optional[Sequence] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        if self.scores.size == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if self.payload is not None and len(self.payload) != self.scores.size:
            raise ValueError("payload length does not match scores")

    @property
    def n(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class Uniform:
    seed: int = 0


@dataclass(frozen=True)
class Ascend:
    pass


@dataclass(frozen=True)
class Descend:
    pass


@dataclass(frozen=True)
class Folded:
    k: int
    # None skips the pre-shuffle and chunks the data in its given order
    seed: Optional[int] = 0
    interleaved: bool = False


@dataclass(frozen=True)
class TwoPhase:
    first: "OrderPolicy"
    second: "OrderPolicy"
    split: int


@dataclass(frozen=True)
class AllTogether:
    pass


OrderPolicy = Union[Uniform, Ascend, Descend, Folded, TwoPhase, AllTogether]


def _ascending(scores: np.ndarray) -> np.ndarray:
    # stable sort: ties keep original index order
    return np.argsort(scores, kind="stable")


def make_order(ds: ScoredDataset | Sequence[float], policy: OrderPolicy) -> np.ndarray:
    """Realize ``policy`` as a permutation of ``range(n)`` (int64 array)."""
    scores = ds.scores if isinstance(ds, ScoredDataset) else np.asarray(ds, dtype=np.float64)
    n = scores.size

    if isinstance(policy, Uniform):
        return np.random.default_rng(policy.seed).permutation(n)
    if isinstance(policy, (Ascend, AllTogether)):
        return _ascending(scores)
    if isinstance(policy, Descend):
        # reverse of the stable ascending sort, so ties come out in reverse index order
        return _ascending(scores)[::-1].copy()
    if isinstance(policy, Folded):
        if not 1 <= policy.k <= n:
            raise ValueError(f"fold count {policy.k} must be in [1, {n}]")
        if policy.interleaved:
            raise NotImplementedError("interleaved fold assignment is not implemented")
        base = np.arange(n) if policy.seed is None else np.random.default_rng(policy.seed).permutation(n)
        chunks = np.array_split(base, policy.k)
        return np.concatenate([c[_ascending(scores[c])] for c in chunks])
    if isinstance(policy, TwoPhase):
        if not 0 < policy.split < n:
            raise ValueError(f"split {policy.split} must be in (0, {n})")
        head = make_order(scores[: policy.split], policy.first)
        tail = make_order(scores[policy.split:], policy.second) + policy.split
        return np.concatenate([head, tail])
    raise TypeError(f"not an order policy: {policy!r}")


def policy_from_string(name: str, seed: int = 0, k: int = 4, split: Optional[int] = None) -> OrderPolicy:
    """Parse CLI-style policy names: uniform, ascend, descend, folded, all-together,
    and two-phase pairs such as ``U,A``."""
    name = name.strip().lower()
    simple = {"uniform": Uniform(seed), "u": Uniform(seed), "ascend": Ascend(), "a": Ascend(),
              "descend": Descend(), "d": Descend(), "all-together": AllTogether(), "a-t": AllTogether()}
    if name in simple:
        return simple[name]
    if name == "folded":
        return Folded(k, seed)
    if "," in name:
        if split is None:
            raise ValueError("two-phase policies need a split index")
        a, b = name.split(",", 1)
        # phases get distinct seeds so U,U does not repeat the same shuffle pattern
        return TwoPhase(policy_from_string(a, seed), policy_from_string(b, seed + 1), split)
    raise ValueError(f"unknown order policy {name!r}")


def read_scores(path: str | Path) -> np.ndarray:
    """Load scores from CSV (``index,score``) or JSON lines (``{"index":..,"score":..}``)."""
    path = Path(path)
    pairs = []
    with path.open() as fh:
        if path.suffix in (".jsonl", ".json", ".ndjson"):
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    pairs.append((int(rec["index"]), float(rec["score"])))
        else:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() == "index":
                    continue
                pairs.append((int(row[0]), float(row[1])))
    pairs.sort()
    idx = [i for i, _ in pairs]
    if idx != list(range(len(idx))):
        raise ValueError(f"{path}: indices must cover 0..n-1 exactly once")
    return np.array([s for _, s in pairs], dtype=np.float64)


def write_permutation(perm: Sequence[int], path: str | Path) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in perm))
