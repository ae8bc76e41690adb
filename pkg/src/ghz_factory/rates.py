"""Expected number of attempt rounds to entangle n end nodes.

One round is one parallel attempt on every unfinished link. The factory
keeps successful pairs in memory; direct distribution needs every link to
succeed in the same round.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .validation import check_random_state


@dataclass(frozen=True)
class LinkModel:
    p_success: float
    n_nodes: int
    memory_cutoff_attempts: int | None = None

    def __post_init__(self):
        if not 0 < self.p_success <= 1:
            raise ValueError(f"p_success must lie in (0, 1], got {self.p_success!r}")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValueError(f"n_nodes must be a positive integer, got {self.n_nodes!r}")
        if self.memory_cutoff_attempts is not None and self.memory_cutoff_attempts < 1:
            raise ValueError("memory cutoff must be a positive number of rounds")


def expected_attempts_factory(model: LinkModel, tail: float = 1e-12) -> float:
    """``E[max of n geometric(p)]`` summed until the remaining tail is below ``tail``."""
    if model.memory_cutoff_attempts is not None:
        raise ValueError("finite memory has no closed series; use simulate_rates")
    p, n = model.p_success, model.n_nodes
    if p == 1:
        return 1.0
    q = 1.0 - p
    total, t = 0.0, 0
    # term_t <= n q^t, so the rest of the series is below n q^t / p
    while n * q**t / p >= tail:
        total += 1.0 - (1.0 - q**t) ** n
        t += 1
    return total


def expected_attempts_direct(model: LinkModel) -> float:
    return 1.0 / model.p_success**model.n_nodes


def expected_attempts_sequential(model: LinkModel) -> float:
    """Links attempted one after another, each with memory."""
    return model.n_nodes / model.p_success


@dataclass(frozen=True)
class RateSummary:
    mean: float
    sem: float
    median: float
    quantiles: dict[float, float]
    trials: int


def _summary(samples: np.ndarray, quantiles) -> RateSummary:
    samples = np.asarray(samples, dtype=float)
    qs = {float(q): float(np.quantile(samples, q)) for q in quantiles}
    sem = float(samples.std(ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return RateSummary(float(samples.mean()), sem, float(np.median(samples)), qs, len(samples))


def _simulate_cutoff(model: LinkModel, trials: int, rng: np.random.Generator, max_rounds: int) -> np.ndarray:
    n, p, c = model.n_nodes, model.p_success, model.memory_cutoff_attempts
    # age[i, k]: rounds since link k last succeeded (-1 = no stored pair)
    age = np.full((trials, n), -1, dtype=np.int64)
    done = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    for r in range(1, max_rounds + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a = age[idx]
        a = np.where(a >= 0, a + 1, -1)
        # a pair may be used for c rounds including its creation round
        a = np.where(a >= c, -1, a)
        success = rng.random(a.shape) < p
        a = np.where((a < 0) & success, 0, a)
        age[idx] = a
        finished = (a >= 0).all(axis=1)
        done[idx[finished]] = r
        active[idx[finished]] = False
    if active.any():
        raise RuntimeError(f"{int(active.sum())} trials unfinished after {max_rounds} rounds")
    return done


def simulate_rates(
    model: LinkModel,
    trials: int = 100_000,
    seed=None,
    quantiles: Iterable[float] = (0.05, 0.25, 0.5, 0.75, 0.95),
    max_rounds: int = 10_000_000,
) -> RateSummary:
    """Monte Carlo distribution of rounds until all n links hold a pair."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    rng = check_random_state(seed)
    if model.memory_cutoff_attempts is None:
        samples = rng.geometric(model.p_success, size=(trials, model.n_nodes)).max(axis=1)
    else:
        samples = _simulate_cutoff(model, trials, rng, max_rounds)
    return _summary(samples, quantiles)


def rate_sweep(ns: Iterable[int], ps: Iterable[float]) -> list[dict]:
    rows = []
    for n in ns:
        for p in ps:
            m = LinkModel(float(p), int(n))
            rows.append({
                "n": int(n),
                "p": float(p),
                "factory_mean": expected_attempts_factory(m),
                "direct_mean": expected_attempts_direct(m),
                "sequential_mean": expected_attempts_sequential(m),
            })
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["n", "p", "factory_mean", "direct_mean", "sequential_mean"], lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
