"""Brute-force propagation on the full blockade-restricted state space.

Builds the ``2**N + N * 2**(N-1)`` dimensional Hamiltonian directly from
strings over ``{0, 1, r}`` and integrates each pulse as a square pulse of unit
duration with the matrix exponential.  It shares no code with the closed-form
block propagators and serves as their reference, and as a debug dump of
populations over time.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np
from scipy.linalg import expm


@lru_cache(maxsize=None)
def reachable_states(n_qubits: int) -> tuple[str, ...]:
    """Every string over {0,1,r} with at most one ``r``."""
    return tuple(
        "".join(s) for s in product("01r", repeat=n_qubits) if "".join(s).count("r") <= 1
    )


def pulse_hamiltonian(vector, rabi: float, n_qubits: int) -> np.ndarray:
    """Hamiltonian of one pulse with constant Rabi frequency ``rabi``."""
    states = reachable_states(n_qubits)
    index = {s: i for i, s in enumerate(states)}
    h = np.zeros((len(states), len(states)))
    for s in states:
        if "r" in s:
            continue
        for j, ch in enumerate(s):
            if ch == "0":
                t = s[:j] + "r" + s[j + 1 :]
                h[index[s], index[t]] = h[index[t], index[s]] = -vector[j] * rabi / 2.0
    return h


def sequence_unitary(areas, vectors, n_qubits: int) -> np.ndarray:
    """Full-space propagator of a square-pulse sequence (unit duration per pulse)."""
    dim = len(reachable_states(n_qubits))
    u = np.eye(dim, dtype=complex)
    for area, vec in zip(areas, vectors):
        u = expm(-1j * pulse_hamiltonian(vec, area, n_qubits)) @ u
    return u


def survival_amplitudes(areas, vectors, n_qubits: int) -> dict[str, complex]:
    """``<b|U|b>`` for every computational bitstring ``b``."""
    states = reachable_states(n_qubits)
    u = sequence_unitary(areas, vectors, n_qubits)
    return {s: complex(u[i, i]) for i, s in enumerate(states) if "r" not in s}


def population_trace(areas, vectors, n_qubits: int, initial: str, steps_per_pulse: int = 50):
    """Populations of every reachable state on a uniform time grid.

    Returns ``(times, states, populations)`` with ``populations`` of shape
    ``(len(times), len(states))``; pulse ``k`` occupies ``t in [k, k+1]``.
    """
    states = reachable_states(n_qubits)
    psi = np.zeros(len(states), dtype=complex)
    psi[states.index(initial)] = 1.0
    times, pops = [0.0], [np.abs(psi) ** 2]
    for k, (area, vec) in enumerate(zip(areas, vectors)):
        step = expm(-1j * pulse_hamiltonian(vec, area, n_qubits) / steps_per_pulse)
        for i in range(steps_per_pulse):
            psi = step @ psi
            times.append(k + (i + 1) / steps_per_pulse)
            pops.append(np.abs(psi) ** 2)
    return np.array(times), list(states), np.array(pops)
