"""Blockade-restricted state space of N qubits and CZ-type gate targets.

Under perfect Rydberg blockade each computational bitstring ``b`` only couples
to the single-Rydberg states obtained by promoting one of its 0-bits to ``r``.
The reachable space therefore splits into ``2**N`` independent V-shaped blocks
(one per bitstring), holding ``2**N + N * 2**(N-1)`` states in total.

Qubits are labelled 1..N (``a, b, c, d`` -> 1, 2, 3, 4) and bitstrings are
written with qubit 1 leftmost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

QUBIT_LABELS = "abcdefgh"


class UnsupportedGateError(ValueError):
    """Raised for gate targets that do not define an entangling CZ-type gate."""


def _check_bitstring(bits: str) -> None:
    if not isinstance(bits, str) or not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"malformed bitstring {bits!r}: expected a non-empty string of 0/1")


def basis_order(n_qubits: int) -> list[str]:
    """Computational basis ordered by number of 1-bits, then lexicographically.

    For three qubits this is ``000, 001, 010, 100, 011, 101, 110, 111``.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    return sorted(
        (format(i, f"0{n_qubits}b") for i in range(2**n_qubits)),
        key=lambda s: (s.count("1"), s),
    )


@dataclass(frozen=True)
class Subsystem:
    """One V^(n,m) block: a ground bitstring and the qubits it can excite.

    ``coupled_qubits`` are the 1-based positions of the 0-bits; each of them
    yields one Rydberg state by replacing that bit with ``r``.
    """

    ground: str
    m: int = 1

    @property
    def n_qubits(self) -> int:
        return len(self.ground)

    @property
    def coupled_qubits(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, ch in enumerate(self.ground) if ch == "0")

    @property
    def n(self) -> int:
        return self.ground.count("0")

    @property
    def mask(self) -> np.ndarray:
        """Boolean mask over qubits (0-based) that this block couples."""
        return np.array([ch == "0" for ch in self.ground], dtype=bool)

    @property
    def rydberg_states(self) -> list[str]:
        g = self.ground
        return [g[: q - 1] + "r" + g[q:] for q in self.coupled_qubits]

    @property
    def states(self) -> list[str]:
        return [self.ground, *self.rydberg_states]

    @property
    def label(self) -> str:
        return f"V({self.n},{self.m})"


def _m_index(ground: str) -> int:
    n_qubits = len(ground)
    n = ground.count("0")
    if n in (0, n_qubits):
        return 1
    if n == n_qubits - 1:
        # single excited qubit h: m = h
        return ground.index("1") + 1
    same = sorted(s for s in basis_order(n_qubits) if s.count("0") == n)
    return same.index(ground) + 1


@lru_cache(maxsize=None)
def _enumerate(n_qubits: int) -> tuple[Subsystem, ...]:
    return tuple(Subsystem(g, _m_index(g)) for g in basis_order(n_qubits))


def enumerate_subsystems(n_qubits: int) -> list[Subsystem]:
    """All ``2**N`` blocks, ordered like :func:`basis_order`."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    return list(_enumerate(n_qubits))


def subsystem_of(ground: str) -> Subsystem:
    _check_bitstring(ground)
    return Subsystem(ground, _m_index(ground))


def reachable_state_count(n_qubits: int) -> int:
    return 2**n_qubits + n_qubits * 2 ** (n_qubits - 1)


def parse_qubit(label: int | str) -> int:
    """Map ``'a'`` -> 1, ``'b'`` -> 2, ... ; integers pass through."""
    if isinstance(label, str):
        if label.isdigit():
            return int(label)
        if len(label) != 1 or label.lower() not in QUBIT_LABELS:
            raise ValueError(f"unknown qubit label {label!r}")
        return QUBIT_LABELS.index(label.lower()) + 1
    return int(label)


@dataclass(frozen=True)
class GateSpec:
    """Diagonal CZ-type gate P_Q on ``n_qubits``.

    The gate returns ``+1`` on bitstrings where every target qubit is 1 and
    ``-1`` everywhere else.
    """

    n_qubits: int
    target_set: tuple[int, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        targets = tuple(sorted({int(q) for q in self.target_set}))
        object.__setattr__(self, "target_set", targets)
        if self.n_qubits < 2:
            raise UnsupportedGateError("entangling gates need at least 2 qubits")
        if len(targets) < 2:
            raise UnsupportedGateError(f"target set {targets} has fewer than 2 qubits")
        if len(targets) > 3:
            raise UnsupportedGateError("only 2- and 3-qubit targets are supported")
        if targets[0] < 1 or targets[-1] > self.n_qubits:
            raise ValueError(f"target set {targets} outside qubits 1..{self.n_qubits}")
        if not self.name:
            object.__setattr__(self, "name", "p" + "".join(QUBIT_LABELS[q - 1] for q in targets))

    @classmethod
    def from_name(cls, name: str, n_qubits: int) -> "GateSpec":
        """Build from names like ``'pab'``, ``'P_abc'`` or ``'ab'``."""
        key = name.lower().replace("_", "")
        if key.startswith("p"):
            key = key[1:]
        return cls(n_qubits, tuple(parse_qubit(ch) for ch in key))

    @property
    def basis(self) -> list[str]:
        return basis_order(self.n_qubits)

    @property
    def signature(self) -> np.ndarray:
        return gate_signature(self)

    def target_sign(self, bits: str) -> int:
        return 1 if all(bits[q - 1] == "1" for q in self.target_set) else -1


def gate_signature(gate: GateSpec) -> np.ndarray:
    """Diagonal of P_Q in :func:`basis_order` ordering, as an int array of +/-1."""
    return np.array([gate.target_sign(b) for b in gate.basis], dtype=int)


def binomial_counts(n_qubits: int) -> dict[int, int]:
    """Number of V^(n,.) blocks for each n."""
    return {n: math.comb(n_qubits, n) for n in range(n_qubits, -1, -1)}

