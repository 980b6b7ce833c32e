"""Periodic space-time grid on the flat torus with spectral operators.

Scalar fields are plain numpy arrays whose trailing ``N`` axes are the
spatial axes; any leading axes (typically time) are treated as a batch.
Vector fields carry one extra trailing axis holding the ``N`` components.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = ["Grid", "read_field", "write_field"]

_MAGIC = "FMFG1"


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``T^N x [0, T]``.

    Parameters
    ----------
    N : int
        Space dimension.
    n : int
        Points per axis, a power of two and at least 4.
    T : float
        Time horizon.
    n_t : int
        Number of time steps; the grid has ``n_t + 1`` time nodes.
    """

    N: int
    n: int
    T: float
    n_t: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"dimension must be >= 1, got {self.N}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if self.n_t < 2:
            raise ValueError(f"need at least 2 time steps, got {self.n_t}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.N

    @property
    def space_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.N, 0))

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of node coordinates, one array per axis."""
        x = np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([x] * self.N), indexing="ij"))

    def with_horizon(self, T: float, n_t: int | None = None) -> Grid:
        """Same spatial mesh, new horizon (keeps ``dt`` unless ``n_t`` is given)."""
        if n_t is None:
            n_t = max(2, int(round(T / self.dt)))
        return Grid(self.N, self.n, T, n_t)

    # -- spectral symbols -------------------------------------------------

    @cached_property
    def _wavenumbers(self) -> tuple[np.ndarray, ...]:
        # rfftn layout: full axes first, half axis last
        ks = [np.fft.fftfreq(self.n, d=1.0 / self.n)] * (self.N - 1)
        ks.append(np.fft.rfftfreq(self.n, d=1.0 / self.n))
        return tuple(np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def _derivative_symbols(self) -> tuple[np.ndarray, ...]:
        # Nyquist row dropped so that gradient and divergence stay real and
        # exactly skew-adjoint.
        out = []
        for k in self._wavenumbers:
            k = k.copy()
            k[np.abs(k) == self.n // 2] = 0.0
            out.append(2j * np.pi * k)
        return tuple(out)

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        return -4.0 * np.pi**2 * sum(k**2 for k in self._wavenumbers)

    def fft(self, f):
        return np.fft.rfftn(f, axes=self.space_axes)

    def ifft(self, fh):
        return np.fft.irfftn(fh, s=self.shape, axes=self.space_axes)

    # -- operators ------------------------------------------------------------

    def gradient(self, f):
        """Spectral gradient; output has a trailing component axis."""
        fh = self.fft(f)
        return np.stack([self.ifft(d * fh) for d in self._derivative_symbols], axis=-1)

    def divergence(self, F):
        F = np.asarray(F)
        acc = 0.0
        for i, d in enumerate(self._derivative_symbols):
            acc = acc + d * self.fft(F[..., i])
        return self.ifft(acc)

    def laplacian(self, f):
        return self.ifft(self.laplacian_symbol * self.fft(f))

    def heat_multiplier(self, t):
        return np.exp(self.laplacian_symbol * t)

    def heat_semigroup(self, f, t: float):
        """Apply ``exp(t Laplacian)``; ``t = 0`` returns ``f`` unchanged."""
        if t < 0:
            raise ValueError(f"heat semigroup needs t >= 0, got {t}")
        if t == 0:
            return f
        return self.ifft(self.heat_multiplier(t) * self.fft(f))

    def poisson_solve(self, rhs, tol: float = 1e-12):
        """Zero-mean solution of ``Laplacian(psi) = rhs``."""
        mean = self.integrate_space(rhs)
        if np.any(np.abs(mean) > tol):
            raise ValueError(f"Poisson right-hand side must have zero mean, got {np.max(np.abs(mean)):.3e}")
        sym = self.laplacian_symbol.copy()
        sym.flat[0] = 1.0
        ph = self.fft(rhs) / sym
        ph[(...,) + (0,) * self.N] = 0.0
        return self.ifft(ph)

    # -- quadrature -------------------------------------------------------

    def integrate_space(self, f):
        """Integral over the unit torus (mean over the trailing N axes)."""
        return np.mean(f, axis=self.space_axes)

    def integrate_spacetime(self, f):
        """Integral over Q of a field sampled on all ``n_t + 1`` time nodes (trapezoid)."""
        return np.trapezoid(self.integrate_space(f), dx=self.dt, axis=0)

    def integrate_cells(self, f):
        """Integral over Q of a field given per time cell (``n_t`` slices)."""
        return self.dt * np.sum(self.integrate_space(f), axis=0)


def write_field(path, grid: Grid, values) -> None:
    """Write a scalar field in the ``FMFG1`` snapshot format."""
    values = np.asarray(values, dtype="<f8")
    if values.shape[-grid.N:] != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    header = f"{_MAGIC} {grid.N} {grid.n} {grid.n_t} {grid.T!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values).tobytes())


def read_field(path) -> tuple[Grid, np.ndarray]:
    """Read an ``FMFG1`` snapshot; returns the grid and the values as (slices, n, ..., n)."""
    raw = Path(path).read_bytes()
    end = raw.index(b"\n")
    parts = raw[:end].decode("ascii").split()
    if len(parts) != 5 or parts[0] != _MAGIC:
        raise ValueError(f"{path}: not an {_MAGIC} snapshot")
    grid = Grid(int(parts[1]), int(parts[2]), float(parts[4]), int(parts[3]))
    data = np.frombuffer(raw[end + 1:], dtype="<f8")
    per_slice = grid.n**grid.N
    if data.size % per_slice:
        raise ValueError(f"{path}: payload of {data.size} values is not a whole number of slices")
    return grid, data.reshape((-1,) + grid.shape).astype(float)
