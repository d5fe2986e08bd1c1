"""Constrained simplex maximization of gate fidelity.

The search runs over raw pulse areas and raw (unnormalized) structural-vector
components; vectors are renormalized inside the objective.  Geometrical
constraints act on the normalized components and enter as a quadratic
penalty.  After the search the point is projected onto the feasible set and
re-scored, so every reported infidelity belongs to a strictly feasible protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np
from numba.core.registry import CPUDispatcher

from blockade_gates import _kernels
from blockade_gates.propagator import Protocol, fast_fidelity
from blockade_gates.qubit_system import GateSpec, parse_qubit

FEAS_TOL = 1e-12
DEFAULT_AREA_RANGE = (0.0, 4.0 * math.pi)
SCHEMA_VERSION = 1


class ConstraintInfeasibleError(ValueError):
    """No structural vector can satisfy the requested bounds."""


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    """Bounds on the normalized geometrical factors and on the pulse areas.

    ``sigma_order[j]`` bounds the (j+1)-th smallest ``|c_jk|`` of every pulse;
    a shorter list leaves the larger order statistics bounded by its last entry
    implicitly.  With ``positivity`` the signed components are bounded instead
    (so every component is also >= 0).  ``targeted`` maps 1-based qubit index to
    a bound applying to that qubit alone.  ``one_hot`` freezes every vector to a
    basis vector (independent qubits); only the areas are then optimized.
    Areas are in radians.
    """

    sigma_order: tuple[float, ...] = ()
    positivity: bool = False
    targeted: Mapping[int, float] = field(default_factory=dict)
    area_cap: float | None = None
    per_pulse_area_range: tuple[float, float] = DEFAULT_AREA_RANGE
    one_hot: bool = False

    def __post_init__(self) -> None:
        sig = tuple(float(s) for s in self.sigma_order)
        if any(s < 0 for s in sig) or any(b < a for a, b in zip(sig, sig[1:])):
            raise ValueError(f"sigma_order must be non-negative and ascending, got {sig}")
        object.__setattr__(self, "sigma_order", sig)
        targeted = {parse_qubit(q): float(v) for q, v in dict(self.targeted).items()}
        if any(v < 0 for v in targeted.values()):
            raise ValueError("targeted bounds must be non-negative")
        object.__setattr__(self, "targeted", targeted)
        lo, hi = (float(v) for v in self.per_pulse_area_range)
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid per-pulse area range ({lo}, {hi})")
        object.__setattr__(self, "per_pulse_area_range", (lo, hi))
        if self.area_cap is not None and self.area_cap <= 0:
            raise ValueError("area_cap must be positive")

    @classmethod
    def symmetric(cls, sigma: float, **kw) -> "ConstraintSet":
        return cls(sigma_order=(sigma,), **kw)

    def sigma_ext(self, n_qubits: int) -> np.ndarray:
        """Bound on every order statistic, padded with the last given value."""
        if len(self.sigma_order) > n_qubits:
            raise ConstraintInfeasibleError(
                f"{len(self.sigma_order)} order bounds for only {n_qubits} qubits"
            )
        out = np.zeros(n_qubits)
        if self.sigma_order:
            out[: len(self.sigma_order)] = self.sigma_order
            out[len(self.sigma_order) :] = self.sigma_order[-1]
        return out

    def targeted_lower(self, n_qubits: int) -> np.ndarray:
        out = np.zeros(n_qubits)
        for q, v in self.targeted.items():
            if not 1 <= q <= n_qubits:
                raise ConstraintInfeasibleError(f"targeted qubit {q} outside 1..{n_qubits}")
            out[q - 1] = v
        return out

    def minimal_magnitudes(self, n_qubits: int) -> np.ndarray:
        """Component-wise smallest magnitudes (sorted) compatible with all bounds."""
        m = np.sort(self.targeted_lower(n_qubits))
        return np.maximum(m, self.sigma_ext(n_qubits))

    def check_feasible(self, n_qubits: int) -> None:
        """Raise :class:`ConstraintInfeasibleError` if no unit vector meets the bounds."""
        mins = self.minimal_magnitudes(n_qubits)
        need = float(np.sum(mins**2))
        if need > 1.0 + FEAS_TOL:
            raise ConstraintInfeasibleError(
                f"bounds need squared norm {need:.4f} > 1 on {n_qubits} qubits "
                f"(sigma_order={self.sigma_order}, targeted={self.targeted})"
            )
        if self.one_hot and np.count_nonzero(mins) > 1:
            raise ConstraintInfeasibleError("one-hot vectors cannot meet bounds on several qubits")
        if self.area_cap is not None and self.area_cap < 0:
            raise ConstraintInfeasibleError("negative area cap")

    def with_cap(self, cap: float | None) -> "ConstraintSet":
        return replace(self, area_cap=cap)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sigma_order": list(self.sigma_order),
            "positivity": self.positivity,
            "targeted": {str(q): v for q, v in sorted(self.targeted.items())},
            "area_cap_pi": None if self.area_cap is None else self.area_cap / math.pi,
            "area_range_pi": [v / math.pi for v in self.per_pulse_area_range],
            "one_hot": self.one_hot,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConstraintSet":
        cap = d.get("area_cap_pi")
        rng = d.get("area_range_pi", [v / math.pi for v in DEFAULT_AREA_RANGE])
        return cls(
            sigma_order=tuple(d.get("sigma_order", ())),
            positivity=bool(d.get("positivity", False)),
            targeted={int(q): float(v) for q, v in d.get("targeted", {}).items()},
            area_cap=None if cap is None else float(cap) * math.pi,
            per_pulse_area_range=(rng[0] * math.pi, rng[1] * math.pi),
            one_hot=bool(d.get("one_hot", False)),
        )


@dataclass(frozen=True)
class NMOptions:
    max_iter: int = 20_000
    tol_f: float = 1e-12
    tol_x: float = 1e-10
    penalty_weight: float = 1e3
    max_escalations: int = 3
    escalate_below: float = 1e-2
    escalation_step_scale: float = 0.1
    adaptive: bool = True
    stall_iter: int = 0
    stall_rtol: float = 1e-6
    area_step: float = math.pi / 4
    vector_step: float = 0.25


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    protocol: Protocol
    infidelity: float
    feasible: bool
    iterations: int
    restart_seed: int
    converged: bool

    @property
    def fidelity(self) -> float:
        return 1.0 - self.infidelity

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "restart_seed": int(self.restart_seed),
            "infidelity": float(self.infidelity),
            "feasible": bool(self.feasible),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "total_area_pi": self.protocol.total_area / math.pi,
            "protocol": self.protocol.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OptimizationResult":
        return cls(
            protocol=Protocol.from_dict(d["protocol"]),
            infidelity=float(d["infidelity"]),
            feasible=bool(d["feasible"]),
            iterations=int(d["iterations"]),
            restart_seed=int(d["restart_seed"]),
            converged=bool(d["converged"]),
        )


def derive_seed(master_seed: int, index: int) -> int:
    """Independent 64-bit seed for restart ``index`` of a batch."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


# ---------------------------------------------------------------- projection


def _project_vector(c: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    n = c.size
    sig = constraints.sigma_ext(n)
    tgt = constraints.targeted_lower(n)
    if constraints.positivity:
        signs = np.ones(n)
        mags = np.maximum(c, 0.0)
    else:
        signs = np.where(c < 0, -1.0, 1.0)
        mags = np.abs(c)
    clamped = np.zeros(n, dtype=bool)
    for _ in range(4 * n + 4):
        rank = np.empty(n, dtype=int)
        rank[np.argsort(mags, kind="stable")] = np.arange(n)
        lower = np.maximum(sig[rank], tgt)
        clamped |= mags < lower
        mags[clamped] = lower[clamped]
        rem = 1.0 - float(np.sum(mags[clamped] ** 2))
        free = ~clamped
        free_norm2 = float(np.sum(mags[free] ** 2))
        if not free.any():
            mags = mags / np.linalg.norm(mags)
        elif free_norm2 == 0.0:
            mags[free] = math.sqrt(max(rem, 0.0) / free.sum())
        else:
            mags[free] *= math.sqrt(max(rem, 0.0) / free_norm2)
        if _vector_ok(signs * mags, sig, tgt, constraints.positivity, slack=0.0):
            break
    out = signs * mags
    return out / np.linalg.norm(out)


def _vector_ok(c, sig, tgt, positivity: bool, slack: float = FEAS_TOL) -> bool:
    vals = c if positivity else np.abs(c)
    return bool(np.all(np.sort(vals) >= sig - slack) and np.all(vals >= tgt - slack))


def project_feasible(protocol: Protocol, constraints: ConstraintSet) -> Protocol:
    """Nearby protocol satisfying every bound (vectors first, then the area cap)."""
    if constraints.one_hot:
        vectors = np.zeros_like(protocol.vectors)
        vectors[np.arange(protocol.n_pulses), np.argmax(np.abs(protocol.vectors), axis=1)] = 1.0
    else:
        vectors = np.array([_project_vector(v, constraints) for v in protocol.vectors])
    areas = np.clip(protocol.areas, *constraints.per_pulse_area_range)
    cap = constraints.area_cap
    if cap is not None and areas.sum() > cap:
        areas = areas * (cap / areas.sum())
        while areas.sum() > cap:
            areas = np.nextafter(areas, 0.0)
    return Protocol(areas, vectors)


def protocol_feasible(protocol: Protocol, constraints: ConstraintSet) -> bool:
    """Hard check of every bound, allowing only ``FEAS_TOL`` slack."""
    n = protocol.n_qubits
    sig = constraints.sigma_ext(n)
    tgt = constraints.targeted_lower(n)
    for v in protocol.vectors:
        if not _vector_ok(v, sig, tgt, constraints.positivity):
            return False
        if constraints.one_hot and np.count_nonzero(np.abs(v) > FEAS_TOL) != 1:
            return False
    lo, hi = constraints.per_pulse_area_range
    if np.any(protocol.areas < lo - FEAS_TOL) or np.any(protocol.areas > hi + FEAS_TOL):
        return False
    if constraints.area_cap is not None and protocol.total_area > constraints.area_cap + FEAS_TOL:
        return False
    return True


# ---------------------------------------------------------------- objective


def objective_data(
    gate: GateSpec,
    n_pulses: int,
    constraints: ConstraintSet,
    weight: float,
    fixed_vectors: np.ndarray | None = None,
) -> tuple:
    n = gate.n_qubits
    mode = _kernels.MODE_AREAS_ONLY if constraints.one_hot else _kernels.MODE_FULL
    if fixed_vectors is None:
        fixed_vectors = np.zeros((n_pulses, n))
    cap = np.inf if constraints.area_cap is None else constraints.area_cap
    lo, hi = constraints.per_pulse_area_range
    params = np.array(
        [n_pulses, n, float(constraints.positivity), cap, weight, mode, lo, hi], dtype=np.float64
    )
    return (
        _kernels.block_masks(n),
        gate.signature.astype(np.float64),
        constraints.sigma_ext(n),
        constraints.targeted_lower(n),
        np.ascontiguousarray(fixed_vectors, dtype=np.float64),
        params,
    )


def encode(protocol: Protocol, one_hot: bool = False) -> np.ndarray:
    if one_hot:
        return protocol.areas.copy()
    return np.concatenate([protocol.areas, protocol.vectors.reshape(-1)])


def decode(x: np.ndarray, data: tuple) -> Protocol:
    areas, vectors = _kernels.decode(np.asarray(x, dtype=np.float64), data)
    return Protocol(areas, vectors)


def penalty(protocol: Protocol, constraints: ConstraintSet) -> float:
    """Unweighted sum of squared bound violations; zero exactly on the feasible set."""
    n = protocol.n_qubits
    cap = np.inf if constraints.area_cap is None else constraints.area_cap
    lo, hi = constraints.per_pulse_area_range
    return float(
        _kernels.penalty_terms(
            protocol.areas,
            protocol.vectors,
            constraints.sigma_ext(n),
            constraints.targeted_lower(n),
            constraints.positivity,
            cap,
            lo,
            hi,
        )
    )


def evaluate_objective(
    protocol: Protocol, gate: GateSpec, constraints: ConstraintSet, weight: float = 1e3
) -> float:
    """Infidelity plus ``weight`` times the squared constraint violations."""
    eps = 1.0 - fast_fidelity(protocol, gate)
    return eps + weight * penalty(protocol, constraints)


# ---------------------------------------------------------------- search


def nelder_mead(
    objective: Callable,
    initial_point,
    options: NMOptions | None = None,
    data: tuple | None = None,
    step: np.ndarray | float | None = None,
) -> tuple[np.ndarray, float, int, bool]:
    """Minimize ``objective`` from ``initial_point``.

    Compiled objectives (numba dispatchers taking ``(x, data)``) run entirely in
    machine code; any other callable ``f(x)`` runs through the same algorithm
    in pure Python.
    """
    opts = options or NMOptions()
    x0 = np.array(initial_point, dtype=np.float64).reshape(-1)
    if step is None:
        step_arr = np.full(x0.size, 0.1)
    else:
        step_arr = np.broadcast_to(np.asarray(step, dtype=np.float64), x0.shape).copy()
    if isinstance(objective, CPUDispatcher):
        run = _kernels.nelder_mead
        fn, payload = objective, data
    else:
        run = _kernels.nelder_mead.py_func
        fn = (lambda x, _d: float(objective(x))) if data is None else objective
        payload = data
    x, fx, it, conv, status = run(
        fn, payload, x0, step_arr, int(opts.max_iter), float(opts.tol_f), float(opts.tol_x),
        bool(opts.adaptive), int(opts.stall_iter), float(opts.stall_rtol),
    )
    if status == _kernels.STATUS_NONFINITE:
        raise OptimizationError(f"objective returned {fx!r} at x={np.array2string(x)}")
    return x, float(fx), int(it), bool(conv)


def sample_initial(
    gate: GateSpec, n_pulses: int, constraints: ConstraintSet, seed: int
) -> Protocol:
    """Seeded random start: uniform areas, isotropic vectors, then projected to feasibility."""
    constraints.check_feasible(gate.n_qubits)
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    rng = np.random.default_rng(int(seed))
    lo, hi = constraints.per_pulse_area_range
    areas = rng.uniform(lo, hi, n_pulses)
    n = gate.n_qubits
    if constraints.one_hot:
        vectors = np.eye(n)[rng.integers(n, size=n_pulses)]
    else:
        vectors = rng.standard_normal((n_pulses, n))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return project_feasible(Protocol(areas, vectors), constraints)


def _steps(n_pulses: int, n_qubits: int, opts: NMOptions, one_hot: bool, scale: float = 1.0):
    if one_hot:
        return np.full(n_pulses, opts.area_step * scale)
    return np.concatenate(
        [np.full(n_pulses, opts.area_step), np.full(n_pulses * n_qubits, opts.vector_step)]
    ) * scale


def optimize_from(
    start: Protocol,
    gate: GateSpec,
    constraints: ConstraintSet,
    options: NMOptions | None = None,
    seed: int = 0,
) -> OptimizationResult:
    """Penalized simplex search from ``start``, then projection and re-scoring."""
    opts = options or NMOptions()
    n_pulses, n = start.n_pulses, gate.n_qubits
    constraints.check_feasible(n)
    fixed = start.vectors if constraints.one_hot else None
    weight = opts.penalty_weight
    x = encode(start, constraints.one_hot)
    iterations = 0
    converged = False
    scale = 1.0
    for _ in range(opts.max_escalations + 1):
        data = objective_data(gate, n_pulses, constraints, weight, fixed)
        x, _, it, converged = nelder_mead(
            _kernels.objective, x, opts, data,
            step=_steps(n_pulses, n, opts, constraints.one_hot, scale),
        )
        iterations += it
        candidate = decode(x, data)
        if penalty(candidate, constraints) <= FEAS_TOL**2:
            break
        # hopeless restarts are not worth polishing; projection still makes them feasible
        if 1.0 - fast_fidelity(candidate, gate) > opts.escalate_below:
            break
        weight *= 2.0
        scale = opts.escalation_step_scale
    projected = project_feasible(candidate, constraints)
    eps = 1.0 - fast_fidelity(projected, gate)
    return OptimizationResult(
        protocol=projected,
        infidelity=float(max(eps, 0.0)),
        feasible=protocol_feasible(projected, constraints),
        iterations=iterations,
        restart_seed=int(seed),
        converged=converged,
    )


def optimize_protocol(
    gate: GateSpec,
    n_pulses: int,
    constraints: ConstraintSet,
    seed: int,
    options: NMOptions | None = None,
) -> OptimizationResult:
    """One restart: seeded initial sample, penalized search, feasibility projection."""
    start = sample_initial(gate, n_pulses, constraints, seed)
    return optimize_from(start, gate, constraints, options, seed)
