"""Forward Fokker-Planck solver and functionals on density/flux pairs.

Time discretisation
-------------------
Densities live on the ``n_t + 1`` time nodes, fluxes on the ``n_t`` cells
between them. One step is a Strang splitting with exact diffusion::

    m_cell[j] = S(dt/2) m[j]
    m[j+1]    = S(dt/2) (m_cell[j] - dt * div w[j])

where ``S(t)`` is the heat semigroup. The step is affine in ``(m[j], w[j])``,
conserves mass exactly and reduces to ``S(dt)`` when ``w = 0``. All energies
are evaluated on the cell densities ``m_cell``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _testfns
from .grid import Grid
from .problem import BlowUpError

__all__ = [
    "FlowPair",
    "cell_density",
    "fp_step",
    "fp_solve",
    "flow_from_drift",
    "perspective",
    "kinetic_energy",
    "fp_defect",
    "constraint_residual",
]

BLOWUP = 1e6


def cell_density(grid: Grid, m):
    """Density at the cell centres, ``S(dt/2) m[j]`` for ``j < n_t``."""
    return grid.heat_semigroup(np.asarray(m)[: grid.n_t], grid.dt / 2)


@dataclass(eq=False)
class FlowPair:
    """A density ``m`` on time nodes with a flux ``w`` on time cells.

    Parameters
    ----------
    grid : Grid
    m : ndarray, shape (n_t + 1, *grid.shape)
    w : ndarray, shape (n_t, *grid.shape, N)
    tol_neg : float
        Undershoot below zero tolerated by :meth:`violations`.
    """

    grid: Grid
    m: np.ndarray
    w: np.ndarray
    tol_neg: float = 1e-8
    _kinetic: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        g = self.grid
        self.m = np.asarray(self.m, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.m.shape != (g.n_t + 1,) + g.shape:
            raise ValueError(f"m has shape {self.m.shape}, expected {(g.n_t + 1,) + g.shape}")
        if self.w.shape != (g.n_t,) + g.shape + (g.N,):
            raise ValueError(f"w has shape {self.w.shape}, expected {(g.n_t,) + g.shape + (g.N,)}")

    @classmethod
    def trivial(cls, grid: Grid) -> FlowPair:
        """The uniform density at rest."""
        return cls(grid, np.ones((grid.n_t + 1,) + grid.shape), np.zeros((grid.n_t,) + grid.shape + (grid.N,)))

    @cached_property
    def m_cell(self) -> np.ndarray:
        return cell_density(self.grid, self.m)

    @property
    def min_density(self) -> float:
        return float(min(self.m.min(), self.m_cell.min()))

    @property
    def mass_defect(self) -> float:
        return float(np.max(np.abs(self.grid.integrate_space(self.m) - 1.0)))

    def kinetic_energy(self, gamma_conj: float) -> float:
        if gamma_conj not in self._kinetic:
            self._kinetic[gamma_conj] = kinetic_energy(self, gamma_conj)
        return self._kinetic[gamma_conj]

    def violations(self, mass_tol: float = 1e-10) -> list[str]:
        out = []
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.w))):
            out.append("non-finite values")
        if self.min_density < -self.tol_neg:
            out.append(f"density undershoot {self.min_density:.3e}")
        if self.mass_defect > mass_tol:
            out.append(f"mass defect {self.mass_defect:.3e}")
        return out


def fp_step(grid: Grid, m_j, w_j):
    """One forward step from node ``j`` to node ``j+1``."""
    half = grid.dt / 2
    return grid.heat_semigroup(grid.heat_semigroup(m_j, half) - grid.dt * grid.divergence(w_j), half)


def _check(module, j, values):
    if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > BLOWUP:
        raise BlowUpError(module, j)


def _forward_from_flux(grid: Grid, m0, w):
    # per Fourier mode: m[j+1] = e^{-lam dt} m[j] - dt e^{-lam dt/2} (div w[j])^
    full = grid.heat_multiplier(grid.dt)
    half = grid.heat_multiplier(grid.dt / 2)
    src = -grid.dt * half * sum(d * grid.fft(w[..., i]) for i, d in enumerate(grid._derivative_symbols))
    mh = np.empty((grid.n_t + 1,) + full.shape, dtype=complex)
    mh[0] = grid.fft(m0)
    for j in range(grid.n_t):
        mh[j + 1] = full * mh[j] + src[j]
    return grid.ifft(mh)


def _as_cells(grid: Grid, A):
    A = np.asarray(A, dtype=float)
    if A.shape == (grid.N,):
        return np.broadcast_to(A, (grid.n_t,) + grid.shape + (grid.N,))
    if A.ndim == grid.N + 1:
        return np.broadcast_to(A, (grid.n_t,) + A.shape)
    if A.shape[0] == grid.n_t + 1:
        return 0.5 * (A[:-1] + A[1:])
    if A.shape[0] != grid.n_t:
        raise ValueError(f"drift has {A.shape[0]} time slices, expected n_t or n_t + 1")
    return A


def flow_from_drift(grid: Grid, m0, drift) -> FlowPair:
    """Evolve ``m0`` under a drift and return the pair with flux ``drift * m_cell``."""
    A = _as_cells(grid, drift)
    m = np.empty((grid.n_t + 1,) + grid.shape)
    w = np.empty((grid.n_t,) + grid.shape + (grid.N,))
    m[0] = m0
    half = grid.dt / 2
    for j in range(grid.n_t):
        mc = grid.heat_semigroup(m[j], half)
        w[j] = A[j] * mc[..., None]
        m[j + 1] = grid.heat_semigroup(mc - grid.dt * grid.divergence(w[j]), half)
        _check("fokker_planck", j + 1, m[j + 1])
    return FlowPair(grid, m, w)


def fp_solve(grid: Grid, m0, drift=None, flux=None) -> np.ndarray:
    """Density on all time nodes, driven by either a drift ``A`` or a flux ``w``.

    A drift may be given per node, per cell, or as a constant vector. Raises
    :class:`~torusmfg.problem.BlowUpError` with the step index when
    ``|m|`` exceeds ``1e6``.
    """
    if (drift is None) == (flux is None):
        raise ValueError("give exactly one of drift or flux")
    if drift is not None:
        return flow_from_drift(grid, m0, drift).m
    m = _forward_from_flux(grid, np.asarray(m0, float), np.asarray(flux, float))
    bad = ~np.all(np.isfinite(m) & (np.abs(m) <= BLOWUP), axis=grid.space_axes)
    if np.any(bad):
        raise BlowUpError("fokker_planck", int(np.argmax(bad)))
    return m


def perspective(m, w, L):
    """Pointwise ``m L(-w/m)``: zero where ``m <= 0`` and ``w = 0``, ``+inf`` where ``m <= 0`` and ``w != 0``."""
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    pos = m > 0
    safe = np.where(pos, m, 1.0)
    val = np.where(pos, m * L(-w / safe[..., None]), 0.0)
    moving = np.any(w != 0, axis=-1)
    return np.where(~pos & moving, np.inf, val)


def kinetic_energy(pair: FlowPair, gamma_conj: float) -> float:
    """``integral |w|^g' m^(1-g')`` over space-time, same conventions as :func:`perspective`."""
    g = pair.grid
    speed = lambda q: np.sum(q * q, axis=-1) ** (gamma_conj / 2)  # noqa: E731
    return float(g.integrate_cells(perspective(pair.m_cell, pair.w, speed)))


def fp_defect(pair: FlowPair, m0=None):
    """Per-cell defect ``m[j+1] - (one step from m[j] with w[j])`` and the initial mismatch."""
    g = pair.grid
    R = pair.m[1:] - g.heat_semigroup(pair.m[:-1], g.dt) + g.dt * g.heat_semigroup(g.divergence(pair.w), g.dt / 2)
    R0 = np.zeros(g.shape) if m0 is None else np.asarray(m0) - pair.m[0]
    return R, R0


def constraint_residual(pair: FlowPair, m0, max_freq: int = 4, powers=(1, 2, 3), flux=None) -> float:
    """Worst normalised weak-form defect of the forward equation.

    The defect of each step is paired with every test function
    ``phi(x) rho(t)``, where ``phi`` runs over real Fourier modes of
    per-axis frequency at most ``max_freq`` and ``rho(t) = (1 - t/T)^k``;
    the initial mismatch enters through ``rho(0) = 1``. Each pairing is
    divided by the discrete ``L2(Q)`` norm of its test function.

    ``flux`` replaces ``pair.w`` when given (used to test a recovered flux).
    """
    g = pair.grid
    if flux is not None:
        pair = FlowPair(g, pair.m, flux)
    R, R0 = fp_defect(pair, m0)
    basis = _testfns.fourier_basis(g, max_freq)
    mid, at0 = _testfns.decaying_profiles(g, powers)
    P = _testfns.space_pairings(g, R, basis)
    P0 = _testfns.space_pairings(g, R0[None], basis)[0]
    pairing = -mid @ P + at0[:, None] * P0[None, :]
    norm = np.sqrt(g.dt * np.sum(mid**2, axis=1))[:, None] * np.sqrt(np.mean(basis.reshape(len(basis), -1) ** 2, axis=1))[None, :]
    return float(np.max(np.abs(pairing) / norm))
