"""Finite test-function dictionaries for the discrete weak forms."""

from __future__ import annotations

import itertools

import numpy as np

from .grid import Grid


def _tensor(grid: Grid, per_axis):
    """All tensor products of the 1D factor lists (one list per axis)."""
    out = []
    for combo in itertools.product(*per_axis):
        f = np.ones(grid.shape)
        for ax, fac in enumerate(combo):
            f = f * fac(grid.coords[ax])
        out.append(f)
    return np.array(out)


def fourier_basis(grid: Grid, max_freq: int = 4) -> np.ndarray:
    """Real Fourier modes with per-axis frequency ``0..max_freq``, shape (k, *grid.shape)."""
    facs = [lambda x: np.ones_like(x)]
    for k in range(1, max_freq + 1):
        facs.append(lambda x, k=k: np.cos(2 * np.pi * k * x))
        facs.append(lambda x, k=k: np.sin(2 * np.pi * k * x))
    return _tensor(grid, [facs] * grid.N)


def bump_basis(grid: Grid, max_freq: int = 4) -> np.ndarray:
    """Nonnegative squared modes ``cos^2(pi k x)``, ``sin^2(pi k x)`` and the constant."""
    facs = [lambda x: np.ones_like(x)]
    for k in range(1, max_freq + 1):
        facs.append(lambda x, k=k: np.cos(np.pi * k * x) ** 2)
        facs.append(lambda x, k=k: np.sin(np.pi * k * x) ** 2)
    return _tensor(grid, [facs] * grid.N)


def decaying_profiles(grid: Grid, powers=(1, 2, 3)):
    """``(1 - t/T)^k``; returns (values at cell midpoints, values at t=0)."""
    s = (np.arange(grid.n_t) + 0.5) / grid.n_t
    mid = np.array([(1 - s) ** k for k in powers])
    return mid, np.ones(len(powers))


def nonneg_profiles(grid: Grid, powers=(0, 1, 2)):
    """``(t/T)^a (1 - t/T)^b`` at cell midpoints."""
    s = (np.arange(grid.n_t) + 0.5) / grid.n_t
    return np.array([s**a * (1 - s) ** b for a in powers for b in powers])


def space_pairings(grid: Grid, fields, basis) -> np.ndarray:
    """``integral(field_j * basis_b)`` for every slice ``j`` and basis element ``b``."""
    flat_f = np.reshape(fields, (len(fields), -1))
    flat_b = np.reshape(basis, (len(basis), -1))
    return flat_f @ flat_b.T / flat_f.shape[1]
