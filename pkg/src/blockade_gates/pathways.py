"""Quantum-pathway decomposition of block return amplitudes and mechanism ranks.

Within one block a path either stays in the ground state during a pulse
(amplitude ``cos S_k``), jumps up or down (``i sin S_k`` along ``e_k``), or
stays in the Rydberg manifold (``M_k = 1 + (cos S_k - 1) e_k e_k^T``).  Paths
returning to the ground state are grouped by their excursions:

* 0-loop: never excited;
* 1-loop: one excursion, up at pulse ``i`` and down at ``i + 1``;
* d-loop: one excursion that dwells through at least one intermediate pulse;
* 2-loop: two disjoint excursions;
* extra: three or more excursions (needs at least six pulses).

Excursions are classified by pulse index, so a dwell through a pulse that acts
as the identity on the block still makes a d-loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from blockade_gates.propagator import Protocol
from blockade_gates.qubit_system import GateSpec, Subsystem, enumerate_subsystems

N_DIVISIONS = 3


@dataclass(frozen=True)
class LoopDecomposition:
    u0: float
    u1: float
    ud: float
    u2: float
    u_extra: float = 0.0

    @property
    def total(self) -> float:
        return self.u0 + self.u1 + self.ud + self.u2 + self.u_extra

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.u0, self.u1, self.ud, self.u2, self.u_extra)


@dataclass(frozen=True)
class _PulseFactors:
    cos: np.ndarray  # (Np,)
    sin: np.ndarray  # (Np,)
    e: np.ndarray  # (Np, n) renormalized vectors (zero rows where f == 0)
    dwell: np.ndarray  # (Np, n, n) Rydberg-block matrices M_k


def _pulse_factors(protocol: Protocol, subsystem: Subsystem) -> _PulseFactors:
    n = subsystem.n
    if n == 0:
        raise ValueError(f"block {subsystem.ground} has no excitation pathways")
    c = protocol.vectors[:, subsystem.mask]
    f = np.linalg.norm(c, axis=1)
    safe = np.where(f > 0, f, 1.0)
    e = np.where(f[:, None] > 0, c / safe[:, None], 0.0)
    s = 0.5 * f * protocol.areas
    cos, sin = np.cos(s), np.sin(s)
    cos = np.where(f > 0, cos, 1.0)
    sin = np.where(f > 0, sin, 0.0)
    dwell = np.eye(n)[None] + (cos - 1.0)[:, None, None] * np.einsum("ki,kj->kij", e, e)
    return _PulseFactors(cos, sin, e, dwell)


def _excursion(pf: _PulseFactors, i: int, j: int) -> float:
    """Amplitude of going up at pulse ``i`` and down at pulse ``j`` (``i < j``)."""
    v = pf.e[i]
    for k in range(i + 1, j):
        v = pf.dwell[k] @ v
    # (i sin_i)(i sin_j) <e_j|...|e_i>
    return -pf.sin[i] * pf.sin[j] * float(pf.e[j] @ v)


def _ground_run(pf: _PulseFactors, start: int, stop: int) -> float:
    """Product of cos over pulses ``start .. stop-1``."""
    return float(np.prod(pf.cos[start:stop])) if stop > start else 1.0


def excursion_count_amplitudes(protocol: Protocol, subsystem: Subsystem, max_count: int = 3):
    """Return amplitude split by number of completed excursions.

    Entry ``c`` of the result holds the paths with exactly ``c`` excursions,
    except the last entry, which collects every path with ``max_count`` or more.
    """
    pf = _pulse_factors(protocol, subsystem)
    n = subsystem.n
    g = np.zeros(max_count + 1, dtype=complex)
    r = np.zeros((max_count + 1, n), dtype=complex)
    g[0] = 1.0
    for k in range(protocol.n_pulses):
        back = 1j * pf.sin[k] * (r @ pf.e[k])
        new_g = pf.cos[k] * g
        new_g[1:] += back[:-1]
        new_g[-1] += back[-1]
        new_r = r @ pf.dwell[k].T + 1j * pf.sin[k] * np.outer(g, pf.e[k])
        g, r = new_g, new_r
    return g


def loop_decomposition(protocol: Protocol, subsystem: Subsystem) -> LoopDecomposition:
    """Split the block's return amplitude into 0-, 1-, d-, 2-loop and extra parts."""
    pf = _pulse_factors(protocol, subsystem)
    n_pulses = protocol.n_pulses
    u0 = _ground_run(pf, 0, n_pulses)

    single: dict[tuple[int, int], float] = {}
    for i in range(n_pulses):
        for j in range(i + 1, n_pulses):
            single[i, j] = _excursion(pf, i, j)

    u1 = ud = 0.0
    for (i, j), amp in single.items():
        term = _ground_run(pf, 0, i) * amp * _ground_run(pf, j + 1, n_pulses)
        if j == i + 1:
            u1 += term
        else:
            ud += term

    u2 = 0.0
    for (i1, j1), a1 in single.items():
        for (i2, j2), a2 in single.items():
            if i2 > j1:
                u2 += (
                    _ground_run(pf, 0, i1)
                    * a1
                    * _ground_run(pf, j1 + 1, i2)
                    * a2
                    * _ground_run(pf, j2 + 1, n_pulses)
                )

    u_extra = 0.0
    if n_pulses >= 6:
        u_extra = float(excursion_count_amplitudes(protocol, subsystem)[3].real)
    return LoopDecomposition(float(u0), float(u1), float(ud), float(u2), u_extra)


def mechanism_coords(decomposition: LoopDecomposition, target_sign: int) -> tuple[float, float]:
    """Point in the mechanism square.

    Each component is first multiplied by ``-target_sign`` so that a protocol
    hitting its target through one pure loop lands on that loop's corner,
    whatever the sign of the target.  Extra loops count like 2-loops.
    """
    k = -float(target_sign)
    u0, u1, ud, u2, ux = (k * v for v in decomposition.as_tuple())
    x = u0 + u1 - ud - u2 - ux
    y = u0 + ud - u1 - u2 - ux
    return x, y


def _box(v: float) -> int:
    return min(max(math.floor(N_DIVISIONS * (v + 1.0) / 2.0) + 1, 1), N_DIVISIONS)


def mechanism_rank(x: float, y: float) -> int:
    """Box index 1..9 of ``(x, y)``; (-1,-1) -> 1, (-1,1) -> 3, (1,-1) -> 7, (1,1) -> 9."""
    return _box(y) + N_DIVISIONS * (_box(x) - 1)


@dataclass(frozen=True)
class BlockMechanism:
    subsystem: Subsystem
    decomposition: LoopDecomposition
    xy: tuple[float, float]
    omega: int


@dataclass(frozen=True)
class MechanismRecord:
    """Mechanism of every excitable block of one protocol, in basis order."""

    n_qubits: int
    blocks: tuple[BlockMechanism, ...]

    @property
    def omegas(self) -> tuple[int, ...]:
        return tuple(b.omega for b in self.blocks)

    def omega_of(self, ground: str) -> int:
        for b in self.blocks:
            if b.subsystem.ground == ground:
                return b.omega
        raise KeyError(ground)

    @property
    def omega_groups(self) -> dict[int, tuple[int, ...]]:
        """``n -> (omega^(n,1), omega^(n,2), ...)`` ordered by the m index."""
        groups: dict[int, list[BlockMechanism]] = {}
        for b in self.blocks:
            groups.setdefault(b.subsystem.n, []).append(b)
        return {
            n: tuple(b.omega for b in sorted(bs, key=lambda b: b.subsystem.m))
            for n, bs in sorted(groups.items())
        }

    @property
    def omega_totals(self) -> dict[int, int]:
        return {n: sum(ws) for n, ws in self.omega_groups.items()}

    @property
    def omega_total(self) -> int:
        return sum(self.omegas)

    def to_dict(self) -> dict[str, Any]:
        return {
            "u": {
                b.subsystem.ground: dict(
                    zip(("u0", "u1", "ud", "u2", "u_extra"), b.decomposition.as_tuple())
                )
                for b in self.blocks
            },
            "xy": {b.subsystem.ground: list(b.xy) for b in self.blocks},
            "omega": {b.subsystem.ground: b.omega for b in self.blocks},
            "omega_groups": {str(n): list(ws) for n, ws in self.omega_groups.items()},
            "omega_totals": {str(n): t for n, t in self.omega_totals.items()},
        }


def mechanism_signature(protocol: Protocol, gate: GateSpec) -> MechanismRecord:
    blocks = []
    for s in enumerate_subsystems(gate.n_qubits):
        if s.n == 0:
            continue
        dec = loop_decomposition(protocol, s)
        xy = mechanism_coords(dec, gate.target_sign(s.ground))
        blocks.append(BlockMechanism(s, dec, xy, mechanism_rank(*xy)))
    return MechanismRecord(gate.n_qubits, tuple(blocks))
