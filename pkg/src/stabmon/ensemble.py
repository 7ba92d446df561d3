"""Seeded Monte Carlo ensembles over a :class:`~stabmon.scenarios.Scenario`.

Trajectory ``i`` draws its randomness from ``SeedSequence(master_seed,
spawn_key=(i, stream))``, so its path does not depend on which batch or
worker runs it. Batches are fixed blocks of consecutive indices and are
reduced sequentially in index order, which makes every statistic bitwise
independent of the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .scenarios import Scenario
from .sde import BatchResult, NumericalAbort, propagate

BATCH_SIZE = 100
MAX_FAILURE_FRACTION = 0.01


class EnsembleAbort(NumericalAbort):
    """Too many trajectories failed for the ensemble to be trusted."""


@dataclass
class EnsembleResult:
    """Per-time statistics of every logged quantity, plus per-trajectory data.

    ``mean``, ``stderr`` and ``count`` share the keys of ``traces`` (logged
    observables and readouts); ``stderr`` is the sample standard deviation
    over ``sqrt(count)``. ``decisions`` holds per-trajectory summaries such
    as first detection times. Excluded trajectories are listed in
    ``excluded`` as ``(index, step, message)`` and absent from every array.
    """

    scenario: Scenario
    master_seed: int
    n_requested: int
    indices: np.ndarray
    times: np.ndarray
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    count: dict[str, np.ndarray]
    traces: dict[str, np.ndarray]
    decisions: dict[str, np.ndarray]
    excluded: list[tuple[int, int, str]] = field(default_factory=list)
    metadata: dict[str, object] = field(default_factory=dict)
    records: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.indices)

    def at(self, name: str, t: float) -> tuple[float, float]:
        """``(mean, stderr)`` of ``name`` at the logged time closest to ``t``."""
        j = int(np.argmin(np.abs(self.times - t)))
        return float(self.mean[name][j]), float(self.stderr[name][j])


def _run_batch(args) -> BatchResult:
    scenario, master_seed, indices, keep_records = args
    built = scenario.build(keep_records=keep_records)
    res = propagate(built.config, master_seed, indices, built.make_consumers())
    # the final state is not needed and can be large
    res.final = None
    return res


def _batches(n: int, size: int) -> list[list[int]]:
    return [list(range(i, min(i + size, n))) for i in range(0, n, size)]


def statistics(traces: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """NaN-aware mean, standard error and sample count along axis 0."""
    traces = np.asarray(traces, dtype=float)
    ok = np.isfinite(traces)
    count = ok.sum(axis=0)
    safe = np.where(ok, traces, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = safe.sum(axis=0) / count
        dev = np.where(ok, traces - mean, 0.0)
        var = (dev**2).sum(axis=0) / (count - 1)
        stderr = np.sqrt(var / count)
    mean = np.where(count > 0, mean, np.nan)
    stderr = np.where(count > 1, stderr, np.nan)
    return mean, stderr, count


def run_ensemble(
    scenario: Scenario,
    n: int | None = None,
    master_seed: int = 0,
    workers: int = 1,
    batch_size: int = BATCH_SIZE,
    keep_records: int = 0,
) -> EnsembleResult:
    """Run ``n`` trajectories (default ``scenario.n``) of ``scenario``.

    ``keep_records`` keeps the full measurement records of the first that
    many trajectories. Raises :class:`EnsembleAbort` when 1% or more of the
    trajectories fail.
    """
    n = scenario.n if n is None else int(n)
    if n < 1:
        raise ValueError("N must be >= 1")
    if workers < 1 or batch_size < 1:
        raise ValueError("workers and batch_size must be >= 1")
    scenario.build().config.validate()
    t0 = time.perf_counter()
    jobs = [(scenario, master_seed, b, b[0] < keep_records) for b in _batches(n, batch_size)]
    if workers == 1 or len(jobs) == 1:
        parts = [_run_batch(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_batch, jobs))
    elapsed = time.perf_counter() - t0

    failures = [f for p in parts for f in p.failures]
    if failures and len(failures) >= MAX_FAILURE_FRACTION * n:
        idx, step, msg = failures[0]
        raise EnsembleAbort(f"{len(failures)} of {n} trajectories failed (first: #{idx} at step {step}: {msg})")
    bad = {f[0] for f in failures}

    indices = np.concatenate([p.indices for p in parts])
    keep = np.array([i not in bad for i in indices], dtype=bool)
    times = parts[0].times
    traces: dict[str, np.ndarray] = {}
    for key in list(parts[0].observables) + list(parts[0].readouts):
        src = "observables" if key in parts[0].observables else "readouts"
        traces[key] = np.concatenate([getattr(p, src)[key] for p in parts])[keep]
    decisions = {key: np.concatenate([p.summaries[key] for p in parts])[keep] for key in parts[0].summaries}
    mean, stderr, count = {}, {}, {}
    for key, v in traces.items():
        mean[key], stderr[key], count[key] = statistics(v)

    records = {}
    for p in parts:
        if p.records is None:
            continue
        for row, i in enumerate(p.indices):
            if i < keep_records and i not in bad:
                records[int(i)] = p.records[row]

    metadata = {
        "n_requested": n,
        "n_kept": int(keep.sum()),
        "n_excluded": len(bad),
        "master_seed": master_seed,
        "workers": workers,
        "batch_size": batch_size,
        "runtime_s": round(elapsed, 3),
        "numpy": np.__version__,
    }
    return EnsembleResult(
        scenario=scenario,
        master_seed=master_seed,
        n_requested=n,
        indices=indices[keep],
        times=times,
        mean=mean,
        stderr=stderr,
        count=count,
        traces=traces,
        decisions=decisions,
        excluded=sorted(failures),
        metadata=metadata,
        records=records,
    )


def suppression_metric(on: EnsembleResult, off: EnsembleResult, observable: str, t_star: float) -> bool:
    """True iff ``mean_on(t*) - mean_off(t*)`` exceeds four combined standard errors.

    Both results must share their time grid. For quantities where smaller is
    better (such as a trace distance) pass the results in swapped order.
    """
    if on.times.shape != off.times.shape or not np.array_equal(on.times, off.times):
        raise ValueError("results have different time grids")
    if not (on.times[0] - 1e-12 <= t_star <= on.times[-1] + 1e-12):
        raise ValueError(f"t* = {t_star} outside the logged range")
    m_on, s_on = on.at(observable, t_star)
    m_off, s_off = off.at(observable, t_star)
    s_on, s_off = np.nan_to_num(s_on), np.nan_to_num(s_off)
    return bool(m_on - m_off > 4 * np.hypot(s_on, s_off))
