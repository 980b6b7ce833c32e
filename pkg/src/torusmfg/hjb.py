"""Backward Hamilton-Jacobi-Bellman solver and its subsolution test.

The backward step mirrors the forward one in :mod:`torusmfg.fokker_planck`
(it is its exact adjoint when no refinement is triggered)::

    u_half  = S(dt/2) u[j+1]
    u[j]    = S(dt/2) (u_half - dt * (H(grad u_half) + f(m_cell[j])))
"""

from __future__ import annotations

import math

import numpy as np

from . import _testfns
from .fokker_planck import BLOWUP, cell_density
from .grid import Grid
from .problem import BlowUpError

__all__ = ["hjb_step", "hjb_solve", "hjb_defect", "hjb_subsolution_residual"]


def hjb_step(grid: Grid, u_next, source, hamiltonian, tau=None):
    """One backward step of length ``tau`` (default ``dt``) with a frozen cell source."""
    tau = grid.dt if tau is None else tau
    uh = grid.heat_semigroup(u_next, tau / 2)
    p = grid.gradient(uh)
    return grid.heat_semigroup(uh - tau * (hamiltonian.H(p) + source), tau / 2), p


def _source(grid, m, spec, source):
    if source is not None:
        return np.asarray(source, dtype=float)
    return spec.coupling.f(cell_density(grid, m))


def hjb_solve(grid: Grid, u_T, m, spec, source=None, refine: bool = True, max_substeps: int = 64,
              info: dict | None = None):
    """Value function on all time nodes given the density ``m`` on nodes.

    Parameters
    ----------
    u_T : ndarray
        Terminal cost, attained exactly at the last node.
    m : ndarray, shape (n_t + 1, *grid.shape)
    spec : ModelSpec
        The effective Hamiltonian of ``spec`` is used (penalised when ``eta > 0``).
    source : ndarray, optional
        Cell-wise right-hand side replacing ``f(m_cell)``; the convexified
        problem passes ``f - g`` here.
    refine : bool
        Split a step into substeps whenever ``dt > h / (max|grad H| + 1)``.
    info : dict, optional
        Receives ``max_substeps`` used.
    """
    ham = spec.effective_hamiltonian(grid.N)
    src = _source(grid, m, spec, source)
    u = np.empty((grid.n_t + 1,) + grid.shape)
    u[-1] = u_T
    used = 1
    for j in range(grid.n_t - 1, -1, -1):
        u[j], p = hjb_step(grid, u[j + 1], src[j], ham)
        if refine:
            speed = float(np.max(np.linalg.norm(ham.grad_H(p), axis=-1)))
            k = math.ceil(grid.dt * (speed + 1.0) / grid.h - 1e-12)
            if k > 1:
                if k > max_substeps:
                    raise BlowUpError("hjb", j, f"stability needs {k} substeps")
                used = max(used, k)
                v = u[j + 1]
                for _ in range(k):
                    v, _p = hjb_step(grid, v, src[j], ham, grid.dt / k)
                u[j] = v
        if not np.all(np.isfinite(u[j])) or np.max(np.abs(u[j])) > BLOWUP:
            raise BlowUpError("hjb", j)
    if info is not None:
        info["max_substeps"] = used
    return u


def hjb_defect(grid: Grid, u, m, spec, source=None):
    """Cell residual ``(u[j] - S(dt) u[j+1]) / dt + S(dt/2)(H(grad u_half) + f)``.

    Zero for the output of an unrefined :func:`hjb_solve`; its sign is
    that of ``-u_t - Lap u + H(grad u) + f``.
    """
    ham = spec.effective_hamiltonian(grid.N)
    src = _source(grid, m, spec, source)
    uh = grid.heat_semigroup(u[1:], grid.dt / 2)
    rhs = grid.heat_semigroup(ham.H(grid.gradient(uh)) + src, grid.dt / 2)
    return (u[:-1] - grid.heat_semigroup(uh, grid.dt / 2)) / grid.dt + rhs


def hjb_subsolution_residual(grid: Grid, u, m, spec, source=None, max_freq: int = 4, powers=(0, 1, 2)) -> float:
    """Largest positive part of the defect averaged against nonnegative test functions.

    Test functions are products of squared Fourier bumps in space with
    ``(t/T)^a (1 - t/T)^b`` in time; each pairing is divided by the integral
    of its test function, so a constant defect ``c`` reports ``max(c, 0)``.
    """
    r = hjb_defect(grid, u, m, spec, source)
    basis = _testfns.bump_basis(grid, max_freq)
    prof = _testfns.nonneg_profiles(grid, powers)
    P = prof @ _testfns.space_pairings(grid, r, basis)
    weight = np.sum(prof, axis=1)[:, None] * np.mean(basis.reshape(len(basis), -1), axis=1)[None, :]
    return float(max(0.0, np.max(P / weight)))
