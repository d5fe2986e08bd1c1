"""Compiled inner loops: block amplitudes, penalized objective, simplex search.

Everything here works on plain arrays so numba can compile it.  Parameter
vectors for the full search are laid out as ``[raw areas (Np), raw vector
components (Np*N, row-major)]``; for the one-hot search only the raw areas are
free and the vectors come from ``fixed_vectors``.  A negative raw area is read
as ``|A|`` with the pulse's vector sign flipped, which is the exact continuation
of the propagator to negative areas.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numba import njit

from blockade_gates.qubit_system import basis_order

# params layout of the objective data tuple
P_NPULSES, P_NQUBITS, P_POSITIVE, P_AREA_CAP, P_WEIGHT, P_MODE, P_AREA_MIN, P_AREA_MAX = range(8)
MODE_FULL, MODE_AREAS_ONLY = 0, 1

STATUS_OK, STATUS_NONFINITE = 0, -1


@lru_cache(maxsize=None)
def _masks(n_qubits: int) -> np.ndarray:
    m = np.array([[ch == "0" for ch in b] for b in basis_order(n_qubits)], dtype=np.bool_)
    m.flags.writeable = False
    return m


def block_masks(n_qubits: int) -> np.ndarray:
    """Coupling mask of every block, rows in basis order."""
    return _masks(n_qubits)


@njit(cache=True)
def _block_survival_real(areas, vectors, mask, rho):
    """Return amplitude of one block, propagating its first column.

    The ground amplitude stays real and every Rydberg amplitude purely
    imaginary, so only real parts are tracked: ``r = 1j * rho``.
    """
    n_pulses, n_qubits = vectors.shape
    a = 1.0
    for j in range(n_qubits):
        rho[j] = 0.0
    for k in range(n_pulses):
        f2 = 0.0
        for j in range(n_qubits):
            if mask[j]:
                f2 += vectors[k, j] * vectors[k, j]
        if f2 == 0.0:
            continue
        f = math.sqrt(f2)
        s = 0.5 * f * areas[k]
        cs = math.cos(s)
        sn = math.sin(s)
        proj = 0.0
        for j in range(n_qubits):
            if mask[j]:
                proj += vectors[k, j] * rho[j]
        proj /= f
        new_a = cs * a - sn * proj
        coef = ((cs - 1.0) * proj + sn * a) / f
        for j in range(n_qubits):
            if mask[j]:
                rho[j] += vectors[k, j] * coef
        a = new_a
    return a


@njit(cache=True)
def block_survival(areas, vectors, mask):
    return _block_survival_real(areas, vectors, mask, np.empty(vectors.shape[1]))


@njit(cache=True)
def survival_amplitudes(areas, vectors, masks):
    out = np.empty(masks.shape[0], dtype=np.complex128)
    rho = np.empty(vectors.shape[1])
    for b in range(masks.shape[0]):
        out[b] = _block_survival_real(areas, vectors, masks[b], rho)
    return out


@njit(cache=True)
def fidelity(areas, vectors, masks, signature):
    acc = 0.0
    rho = np.empty(vectors.shape[1])
    for b in range(masks.shape[0]):
        acc += signature[b] * _block_survival_real(areas, vectors, masks[b], rho)
    acc /= masks.shape[0]
    return acc * acc


@njit(cache=True)
def decode(x, data):
    """Raw parameter vector -> (areas >= 0, unit structural vectors)."""
    fixed_vectors = data[4]
    params = data[5]
    n_pulses = int(params[P_NPULSES])
    n_qubits = int(params[P_NQUBITS])
    mode = int(params[P_MODE])
    areas = np.empty(n_pulses)
    vectors = np.empty((n_pulses, n_qubits))
    for k in range(n_pulses):
        sign = 1.0
        if x[k] < 0.0:
            sign = -1.0
        areas[k] = abs(x[k])
        norm2 = 0.0
        for j in range(n_qubits):
            if mode == MODE_FULL:
                v = x[n_pulses + k * n_qubits + j]
            else:
                v = fixed_vectors[k, j]
            vectors[k, j] = sign * v
            norm2 += v * v
        if norm2 == 0.0:
            vectors[k, 0] = sign
            norm2 = 1.0
        norm = math.sqrt(norm2)
        for j in range(n_qubits):
            vectors[k, j] /= norm
    return areas, vectors


@njit(cache=True)
def penalty_terms(areas, vectors, sigma_ext, targeted, positive, area_cap, area_min, area_max):
    """Sum of squared bound violations (unweighted)."""
    n_pulses, n_qubits = vectors.shape
    total = 0.0
    vals = np.empty(n_qubits)
    for k in range(n_pulses):
        for j in range(n_qubits):
            if positive:
                vals[j] = vectors[k, j]
            else:
                vals[j] = abs(vectors[k, j])
            d = targeted[j] - vals[j]
            if d > 0.0:
                total += d * d
        # insertion sort: N is tiny and np.sort dominates the cost otherwise
        for i in range(1, n_qubits):
            v = vals[i]
            j = i - 1
            while j >= 0 and vals[j] > v:
                vals[j + 1] = vals[j]
                j -= 1
            vals[j + 1] = v
        for j in range(n_qubits):
            d = sigma_ext[j] - vals[j]
            if d > 0.0:
                total += d * d
    excess = areas.sum() - area_cap
    if excess > 0.0:
        total += excess * excess
    for k in range(n_pulses):
        if areas[k] > area_max:
            total += (areas[k] - area_max) ** 2
        elif areas[k] < area_min:
            total += (area_min - areas[k]) ** 2
    return total


@njit(cache=True)
def objective(x, data):
    """Infidelity plus weighted penalty for a raw parameter vector."""
    masks = data[0]
    signature = data[1]
    sigma_ext = data[2]
    targeted = data[3]
    params = data[5]
    areas, vectors = decode(x, data)
    eps = 1.0 - fidelity(areas, vectors, masks, signature)
    pen = penalty_terms(
        areas,
        vectors,
        sigma_ext,
        targeted,
        params[P_POSITIVE] != 0.0,
        params[P_AREA_CAP],
        params[P_AREA_MIN],
        params[P_AREA_MAX],
    )
    return eps + params[P_WEIGHT] * pen


@njit(cache=True)
def infidelity(x, data):
    areas, vectors = decode(x, data)
    return 1.0 - fidelity(areas, vectors, data[0], data[1])


@njit(cache=True)
def _insert_sorted(idx, fs, pos_from):
    """Move ``idx[pos_from]`` left until ``fs[idx]`` is ascending again."""
    v = idx[pos_from]
    j = pos_from - 1
    while j >= 0 and fs[idx[j]] > fs[v]:
        idx[j + 1] = idx[j]
        j -= 1
    idx[j + 1] = v


@njit(cache=True)
def nelder_mead(func, data, x0, step, max_iter, tol_f, tol_x, adaptive, stall_iter, stall_rtol):
    """Reflect/expand/contract/shrink simplex minimization.

    Returns ``(x_best, f_best, iterations, converged, status)``.  ``adaptive``
    switches to dimension-dependent coefficients (Gao & Han 2012), which keep
    the simplex from collapsing early in 10-30 dimensions.  With
    ``stall_iter > 0`` the search also stops (unconverged) once the best value
    improved by less than ``stall_rtol`` relative over that many iterations.
    """
    dim = x0.shape[0]
    if adaptive:
        alpha = 1.0
        gamma = 1.0 + 2.0 / dim
        rho = 0.75 - 1.0 / (2.0 * dim)
        shrink = 1.0 - 1.0 / dim
    else:
        alpha, gamma, rho, shrink = 1.0, 2.0, 0.5, 0.5

    sim = np.empty((dim + 1, dim))
    fs = np.empty(dim + 1)
    for i in range(dim + 1):
        sim[i] = x0
        if i > 0:
            sim[i, i - 1] += step[i - 1]
        fs[i] = func(sim[i], data)
        if not np.isfinite(fs[i]):
            return sim[i].copy(), fs[i], 0, False, STATUS_NONFINITE
    idx = np.argsort(fs, kind="mergesort")
    total = np.zeros(dim)
    for i in range(dim + 1):
        total += sim[i]

    centroid = np.empty(dim)
    xr = np.empty(dim)
    xe = np.empty(dim)
    xc = np.empty(dim)
    it = 0
    converged = False
    checkpoint = fs[idx[0]]
    while True:
        best = idx[0]
        worst = idx[dim]
        if fs[worst] - fs[best] <= tol_f:
            converged = True
            break
        size = 0.0
        for i in range(dim + 1):
            if i != best:
                for j in range(dim):
                    d = abs(sim[i, j] - sim[best, j])
                    if d > size:
                        size = d
        if size <= tol_x:
            converged = True
            break
        if it >= max_iter:
            break
        if stall_iter > 0 and it > 0 and it % stall_iter == 0:
            if checkpoint - fs[best] <= stall_rtol * abs(fs[best]):
                break
            checkpoint = fs[best]
        it += 1
        if it % (4 * dim) == 0:
            total[:] = 0.0
            for i in range(dim + 1):
                total += sim[i]

        for j in range(dim):
            centroid[j] = (total[j] - sim[worst, j]) / dim
            xr[j] = centroid[j] + alpha * (centroid[j] - sim[worst, j])
        fr = func(xr, data)
        if not np.isfinite(fr):
            return xr.copy(), fr, it, False, STATUS_NONFINITE

        if fr < fs[best]:
            for j in range(dim):
                xe[j] = centroid[j] + gamma * (xr[j] - centroid[j])
            fe = func(xe, data)
            if not np.isfinite(fe):
                return xe.copy(), fe, it, False, STATUS_NONFINITE
            new, fnew = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[idx[dim - 1]]:
            new, fnew = xr, fr
        else:
            if fr < fs[worst]:
                for j in range(dim):
                    xc[j] = centroid[j] + rho * (xr[j] - centroid[j])
            else:
                for j in range(dim):
                    xc[j] = centroid[j] + rho * (sim[worst, j] - centroid[j])
            fc = func(xc, data)
            if not np.isfinite(fc):
                return xc.copy(), fc, it, False, STATUS_NONFINITE
            if fc < min(fr, fs[worst]):
                new, fnew = xc, fc
            else:
                for i in range(dim + 1):
                    if i != best:
                        for j in range(dim):
                            sim[i, j] = sim[best, j] + shrink * (sim[i, j] - sim[best, j])
                        fs[i] = func(sim[i], data)
                        if not np.isfinite(fs[i]):
                            return sim[i].copy(), fs[i], it, False, STATUS_NONFINITE
                idx = np.argsort(fs, kind="mergesort")
                total[:] = 0.0
                for i in range(dim + 1):
                    total += sim[i]
                continue

        for j in range(dim):
            total[j] += new[j] - sim[worst, j]
            sim[worst, j] = new[j]
        fs[worst] = fnew
        _insert_sorted(idx, fs, dim)

    best = idx[0]
    return sim[best].copy(), fs[best], it, converged, STATUS_OK
