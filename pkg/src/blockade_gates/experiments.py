"""Restart-batch statistics: success curves, minimal-area frontiers, qubit usage, mechanism census."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from blockade_gates.optimizer import (
    SCHEMA_VERSION,
    ConstraintSet,
    NMOptions,
    OptimizationResult,
    derive_seed,
    optimize_protocol,
    protocol_feasible,
)
from blockade_gates.pathways import mechanism_signature
from blockade_gates.propagator import fast_fidelity
from blockade_gates.qubit_system import GateSpec

DEFAULT_EPSILON_GRID = tuple(float(v) for v in np.logspace(0, -7, 29))
USAGE_THRESHOLD = 0.99
DOMINANT_FRACTION = 0.3


class EmptySampleError(ValueError):
    """No protocol survived the fidelity filter."""


def default_workers() -> int:
    return int(os.environ.get("BLOCKADE_GATES_WORKERS", "1"))


# ---------------------------------------------------------------- batches


def _one(args) -> OptimizationResult:
    gate, n_pulses, constraints, seed, options = args
    return optimize_protocol(gate, n_pulses, constraints, seed, options)


def run_batch(
    gate: GateSpec,
    n_pulses: int,
    constraints: ConstraintSet,
    n_restarts: int,
    master_seed: int,
    options: NMOptions | None = None,
    workers: int | None = None,
    stop_when: Callable[[OptimizationResult], bool] | None = None,
    on_result: Callable[[OptimizationResult], None] | None = None,
) -> list[OptimizationResult]:
    """Run restarts ``0..n_restarts-1`` with seeds derived from ``master_seed``.

    Results come back in restart order whatever the worker count.  With
    ``stop_when`` the batch ends after the first (in restart order) result
    satisfying it.
    """
    constraints.check_feasible(gate.n_qubits)
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = (
        (gate, n_pulses, constraints, derive_seed(master_seed, i), options)
        for i in range(n_restarts)
    )
    out: list[OptimizationResult] = []
    if workers == 1:
        results: Iterable[OptimizationResult] = map(_one, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_one, tasks, chunksize=max(1, min(64, n_restarts // (8 * workers))))
    try:
        for r in results:
            out.append(r)
            if on_result is not None:
                on_result(r)
            if stop_when is not None and stop_when(r):
                break
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return out


# ---------------------------------------------------------------- success curves


@dataclass
class SuccessCurve:
    epsilon_grid: list[float]
    rate: list[float]
    metadata: dict[str, Any]
    results: list[OptimizationResult] = field(default_factory=list, repr=False)

    def rate_at(self, eps: float) -> float:
        return success_rate(self.results, [eps])[0]

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.epsilon_grid, self.rate))


def success_rate(results: Sequence[OptimizationResult], epsilon_grid: Sequence[float]) -> list[float]:
    """Fraction of restarts ending feasible with infidelity below each threshold."""
    if not results:
        return [0.0 for _ in epsilon_grid]
    eps = np.array([r.infidelity if r.feasible else np.inf for r in results])
    return [float(np.mean(eps < t)) for t in epsilon_grid]


def run_metadata(
    gate: GateSpec,
    n_pulses: int | Sequence[int],
    constraints: ConstraintSet,
    n_restarts: int,
    master_seed: int,
    options: NMOptions | None,
) -> dict[str, Any]:
    opts = options or NMOptions()
    return {
        "schema_version": SCHEMA_VERSION,
        "gate": gate.name,
        "n_qubits": gate.n_qubits,
        "target_set": list(gate.target_set),
        "n_pulses": n_pulses if isinstance(n_pulses, int) else list(n_pulses),
        "constraints": constraints.to_dict(),
        "n_restarts": n_restarts,
        "master_seed": master_seed,
        "options": {
            k: getattr(opts, k)
            for k in ("max_iter", "tol_f", "tol_x", "penalty_weight", "max_escalations")
        },
    }


def success_rate_sweep(
    gate: GateSpec,
    n_pulses: int,
    constraints: ConstraintSet,
    n_restarts: int,
    master_seed: int,
    epsilon_grid: Sequence[float] = DEFAULT_EPSILON_GRID,
    options: NMOptions | None = None,
    workers: int | None = None,
    results: Sequence[OptimizationResult] | None = None,
) -> SuccessCurve:
    """Success rate ``N_eps / N_T`` on a grid of infidelity thresholds.

    Every constraint variant run with the same ``master_seed`` starts from the
    same seed batch, so curves are directly comparable.  Pass ``results`` to
    score an existing batch instead of running one.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    if results is None:
        results = run_batch(gate, n_pulses, constraints, n_restarts, master_seed, options, workers)
    grid = [float(e) for e in epsilon_grid]
    return SuccessCurve(
        epsilon_grid=grid,
        rate=success_rate(results, grid),
        metadata=run_metadata(gate, n_pulses, constraints, n_restarts, master_seed, options),
        results=list(results),
    )


# ---------------------------------------------------------------- minimal area


@dataclass(frozen=True)
class AreaBudget:
    restarts_per_probe: int = 20
    resolution: float = 0.02 * math.pi
    max_probes: int = 40


@dataclass
class FrontierPoint:
    fidelity_target: float
    min_area: float
    witness: OptimizationResult | None
    probes: list[tuple[float | None, bool]] = field(default_factory=list)

    @property
    def min_area_pi(self) -> float:
        return self.min_area / math.pi


def _probe(
    gate: GateSpec,
    pulse_counts: Sequence[int],
    constraints: ConstraintSet,
    cap: float | None,
    target: float,
    budget: AreaBudget,
    master_seed: int,
    options: NMOptions | None,
    workers: int | None,
) -> OptimizationResult | None:
    capped = constraints.with_cap(cap) if cap is not None else constraints

    def hit(r: OptimizationResult) -> bool:
        return r.feasible and r.fidelity >= target

    best: OptimizationResult | None = None
    for n_pulses in pulse_counts:
        batch = run_batch(
            gate, n_pulses, capped, budget.restarts_per_probe, master_seed, options, workers,
            stop_when=hit,
        )
        for r in batch:
            if hit(r) and (best is None or r.protocol.total_area < best.protocol.total_area):
                best = r
        if best is not None:
            break
    return best


def minimal_area_search(
    gate: GateSpec,
    constraints: ConstraintSet,
    fidelity_targets: Sequence[float],
    n_pulses: int | Sequence[int] = 3,
    budget: AreaBudget | None = None,
    master_seed: int = 0,
    options: NMOptions | None = None,
    workers: int | None = None,
    initial_cap: float | None = None,
) -> dict[float, FrontierPoint]:
    """Smallest total area ``A_T`` reaching each fidelity target.

    A first probe (capped at ``initial_cap`` if given) finds a witness; the cap
    is then bisected between 0 and the witness area until the bracket is
    narrower than ``budget.resolution``.  Each probe runs the same seed batch
    and stops at its first success.  A target never reached gets ``inf``.
    """
    budget = budget or AreaBudget()
    pulse_counts = [n_pulses] if isinstance(n_pulses, int) else list(n_pulses)
    out: dict[float, FrontierPoint] = {}
    for target in fidelity_targets:
        if not 0.0 < target < 1.0:
            raise ValueError(f"fidelity target {target} outside (0, 1)")
        point = FrontierPoint(float(target), math.inf, None)
        args = (gate, pulse_counts, constraints)
        rest = (budget, master_seed, options, workers)
        witness = _probe(*args, initial_cap, target, *rest)
        point.probes.append((initial_cap, witness is not None))
        if witness is not None:
            lo, hi = 0.0, witness.protocol.total_area
            while hi - lo > budget.resolution and len(point.probes) < budget.max_probes:
                mid = 0.5 * (lo + hi)
                found = _probe(*args, mid, target, *rest)
                point.probes.append((mid, found is not None))
                if found is None:
                    lo = mid
                else:
                    witness = found
                    hi = found.protocol.total_area
            point.min_area = hi
            point.witness = witness
        out[float(target)] = point
    return out


def verify_witness(point: FrontierPoint, gate: GateSpec, constraints: ConstraintSet) -> bool:
    """Independent re-check: feasible, fidelity reached, area within the reported cap."""
    if point.witness is None:
        return False
    p = point.witness.protocol
    capped = constraints.with_cap(point.min_area)
    return (
        protocol_feasible(p, capped)
        and fast_fidelity(p, gate) >= point.fidelity_target
        and p.total_area <= point.min_area + 1e-12
    )


# ---------------------------------------------------------------- usage and census


def _filtered(results: Iterable[OptimizationResult], threshold: float) -> list[OptimizationResult]:
    kept = [r for r in results if r.feasible and r.fidelity > threshold]
    if not kept:
        raise EmptySampleError(f"no feasible protocol with fidelity > {threshold}")
    return kept


def relative_use(vectors: np.ndarray) -> np.ndarray:
    """Per-qubit ``N * mean_k(c_jk**2) - 1``: 0 for uniform use, -1 for an untouched qubit."""
    v = np.asarray(vectors, dtype=float)
    return v.shape[1] * np.mean(v**2, axis=0) - 1.0


@dataclass
class UsageStats:
    mean_d: list[float]
    threshold: float
    count: int

    def to_rows(self) -> list[tuple[int, float]]:
        return [(q + 1, d) for q, d in enumerate(self.mean_d)]


def qubit_usage_stats(
    results: Iterable[OptimizationResult], gate: GateSpec, threshold: float = USAGE_THRESHOLD
) -> UsageStats:
    kept = _filtered(results, threshold)
    d = np.array([relative_use(r.protocol.vectors) for r in kept])
    if d.shape[1] != gate.n_qubits:
        raise ValueError("results were produced for a different number of qubits")
    return UsageStats([float(x) for x in d.mean(axis=0)], threshold, len(kept))


@dataclass
class Census:
    counts: dict[tuple[int, ...], int]
    grounds: list[str]
    threshold: float
    count: int

    @property
    def dominant(self) -> dict[tuple[int, ...], int]:
        """Tuples seen at least 30% as often as the most frequent one."""
        top = max(self.counts.values())
        return {k: v for k, v in self.counts.items() if v >= DOMINANT_FRACTION * top}

    def to_rows(self) -> list[tuple[str, int]]:
        ordered = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [("-".join(map(str, k)), v) for k, v in ordered]


def mechanism_census(
    results: Iterable[OptimizationResult], gate: GateSpec, threshold: float = USAGE_THRESHOLD
) -> Census:
    """Histogram of per-block omega tuples (basis order) over high-fidelity protocols."""
    kept = _filtered(results, threshold)
    counts: Counter[tuple[int, ...]] = Counter()
    grounds: list[str] = []
    for r in kept:
        rec = mechanism_signature(r.protocol, gate)
        grounds = [b.subsystem.ground for b in rec.blocks]
        counts[rec.omegas] += 1
    return Census(dict(counts), grounds, threshold, len(kept))


# ---------------------------------------------------------------- persistence


def write_jsonl(
    results: Iterable[OptimizationResult], path: str | Path, config: dict[str, Any] | None = None
) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in results:
            row = r.to_dict()
            if config is not None:
                row["config"] = config
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[OptimizationResult]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(OptimizationResult.from_dict(json.loads(line)))
    return out


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]], config: dict[str, Any]) -> str:
    """CSV with the run configuration in a leading ``#`` comment line."""
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def read_csv(path: str | Path) -> tuple[dict[str, Any], list[dict[str, str]]]:
    lines = Path(path).read_text().splitlines()
    config: dict[str, Any] = {}
    if lines and lines[0].startswith("# config: "):
        config = json.loads(lines[0][len("# config: ") :])
        lines = lines[1:]
    return config, list(csv.DictReader(lines))
