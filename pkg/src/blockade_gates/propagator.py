"""Closed-form pulse propagators on each blockade block.

A pulse with area ``A`` and structural vector ``c`` acts on the block of a
ground bitstring through the renormalized vector ``e = c|_coupled / f`` with
``f = ||c|_coupled||`` and the mixing angle ``S = f * A / 2``.  The block
propagator is the identity outside span{ground, e}, and a rotation by ``S``
inside it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from blockade_gates import _kernels
from blockade_gates.qubit_system import GateSpec, Subsystem, enumerate_subsystems

log = logging.getLogger(__name__)

NORM_TOL = 1e-12
LOAD_DRIFT_TOL = 1e-9


class NoCouplingError(ValueError):
    """The block has no coupled qubits (the all-ones bitstring)."""


@dataclass(frozen=True, eq=False)
class Protocol:
    """A pulse sequence: areas in radians and one unit structural vector per pulse.

    ``vectors`` has shape ``(n_pulses, n_qubits)``; row ``k`` holds the
    geometrical factors of pulse ``k`` on every qubit.
    """

    areas: np.ndarray
    vectors: np.ndarray

    def __post_init__(self) -> None:
        areas = np.array(self.areas, dtype=float).reshape(-1)
        vectors = np.array(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != areas.size:
            raise ValueError(
                f"vectors must have shape (n_pulses, n_qubits); got {vectors.shape} "
                f"for {areas.size} areas"
            )
        if np.any(areas < 0) or not np.all(np.isfinite(areas)):
            raise ValueError("pulse areas must be finite and non-negative")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError(f"structural vectors must have unit norm (norms={norms})")
        areas.flags.writeable = False
        vectors.flags.writeable = False
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def from_pi(cls, areas_pi, vectors, normalize: bool = False) -> "Protocol":
        vectors = np.array(vectors, dtype=float)
        if normalize:
            vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        return cls(np.asarray(areas_pi, dtype=float) * np.pi, vectors)

    @property
    def n_pulses(self) -> int:
        return self.areas.size

    @property
    def n_qubits(self) -> int:
        return self.vectors.shape[1]

    @property
    def areas_pi(self) -> np.ndarray:
        return self.areas / np.pi

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_qubits": self.n_qubits,
            "areas_pi": [float(a) for a in self.areas_pi],
            "vectors": [[float(v) for v in row] for row in self.vectors],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Protocol":
        vectors = np.array(data["vectors"], dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] != int(data["n_qubits"]):
            raise ValueError("'vectors' rows must have n_qubits entries")
        norms = np.linalg.norm(vectors, axis=1)
        drift = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
        if drift > LOAD_DRIFT_TOL:
            log.warning("structural vectors renormalized on load (max norm drift %.3g)", drift)
        return cls(np.array(data["areas_pi"], dtype=float) * np.pi, vectors / norms[:, None])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "Protocol":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class SubsystemPropagator:
    """(n+1)x(n+1) evolution operator on one block; row/column 0 is the ground state."""

    matrix: np.ndarray
    subsystem: Subsystem

    @property
    def survival(self) -> complex:
        return complex(self.matrix[0, 0])


def subsystem_norm(vector, subsystem: Subsystem) -> float:
    """Norm ``f`` of the structural vector restricted to the block's coupled qubits."""
    if subsystem.n == 0:
        raise NoCouplingError(f"block {subsystem.ground} couples no qubit")
    c = np.asarray(vector, dtype=float)
    return float(math.sqrt(np.sum(c[subsystem.mask] ** 2)))


def mixing_angle(area: float, f: float) -> float:
    if area < 0:
        raise ValueError("pulse area must be non-negative")
    return 0.5 * f * area


def pulse_propagator(vector, area: float, subsystem: Subsystem) -> SubsystemPropagator:
    """Closed-form single-pulse propagator of one block.

    A pulse that does not reach the block (``f == 0``) is the identity.
    """
    n = subsystem.n
    f = subsystem_norm(vector, subsystem)
    if f == 0.0:
        return SubsystemPropagator(np.eye(n + 1, dtype=complex), subsystem)
    e = np.asarray(vector, dtype=float)[subsystem.mask] / f
    s = mixing_angle(area, f)
    cos_s, sin_s = math.cos(s), math.sin(s)
    u = np.empty((n + 1, n + 1), dtype=complex)
    u[0, 0] = cos_s
    u[0, 1:] = 1j * e * sin_s
    u[1:, 0] = 1j * e * sin_s
    u[1:, 1:] = np.eye(n) + np.outer(e, e) * (cos_s - 1.0)
    return SubsystemPropagator(u, subsystem)


def sequence_propagator(protocol: Protocol, subsystem: Subsystem) -> SubsystemPropagator:
    """Time-ordered product over the pulses, last pulse leftmost."""
    if protocol.n_pulses < 1:
        raise ValueError("protocol has no pulses")
    u = np.eye(subsystem.n + 1, dtype=complex)
    if subsystem.n == 0:
        return SubsystemPropagator(u, subsystem)
    for area, vector in zip(protocol.areas, protocol.vectors):
        u = pulse_propagator(vector, area, subsystem).matrix @ u
    return SubsystemPropagator(u, subsystem)


def survival_amplitudes(protocol: Protocol, gate: GateSpec | int) -> dict[str, complex]:
    """``U_T[0, 0]`` of every block, keyed by ground bitstring in basis order."""
    n_qubits = gate.n_qubits if isinstance(gate, GateSpec) else int(gate)
    if protocol.n_qubits != n_qubits:
        raise ValueError(f"protocol is for {protocol.n_qubits} qubits, gate for {n_qubits}")
    return {
        s.ground: (1.0 + 0j) if s.n == 0 else sequence_propagator(protocol, s).survival
        for s in enumerate_subsystems(n_qubits)
    }


def gate_fidelity(protocol: Protocol, gate: GateSpec) -> float:
    """Phase-sensitive fidelity ``|mean_b P_bb * U_T,11(b)|**2``."""
    amps = survival_amplitudes(protocol, gate)
    sig = gate.signature
    overlap = sum(p * amps[b] for p, b in zip(sig, gate.basis)) / 2**gate.n_qubits
    return float(abs(overlap) ** 2)


def fast_amplitudes(protocol: Protocol, n_qubits: int | None = None) -> np.ndarray:
    """Survival amplitudes in basis order via the compiled kernel."""
    n_qubits = protocol.n_qubits if n_qubits is None else n_qubits
    masks = _kernels.block_masks(n_qubits)
    return _kernels.survival_amplitudes(protocol.areas, protocol.vectors, masks)


def fast_fidelity(protocol: Protocol, gate: GateSpec) -> float:
    masks = _kernels.block_masks(gate.n_qubits)
    return _kernels.fidelity(
        protocol.areas, protocol.vectors, masks, gate.signature.astype(float)
    )
