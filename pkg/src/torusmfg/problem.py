"""Problem data: grid, model, initial density and terminal cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .model import ModelSpec

__all__ = ["Problem", "uniform", "cosine_bump", "BlowUpError"]


class BlowUpError(RuntimeError):
    """A time-stepping loop left the admissible range.

    Attributes
    ----------
    module : str
        Name of the solver that raised.
    step : int
        Time step at which the bound was violated.
    """

    def __init__(self, module: str, step: int, detail: str = ""):
        self.module = module
        self.step = step
        super().__init__(f"{module}: blow-up at step {step}" + (f" ({detail})" if detail else ""))


def uniform(grid: Grid, value: float = 1.0) -> np.ndarray:
    return np.full(grid.shape, float(value))


def cosine_bump(grid: Grid, amplitude: float, base: float = 1.0, axis: int = 0) -> np.ndarray:
    """``base + amplitude * cos(2 pi x_axis)``."""
    return base + amplitude * np.cos(2 * np.pi * grid.coords[axis])


@dataclass(frozen=True)
class Problem:
    """Everything a solver needs besides its own options.

    ``m0`` must be a positive probability density (mean one on the unit
    torus); ``u_T`` is any smooth terminal cost.
    """

    grid: Grid
    spec: ModelSpec
    m0: np.ndarray
    u_T: np.ndarray

    def __post_init__(self):
        for name in ("m0", "u_T"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {a.shape}, grid expects {self.grid.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite values")
            object.__setattr__(self, name, a)
        if np.min(self.m0) <= 0:
            raise ValueError(f"m0 must be positive, min is {np.min(self.m0):.3e}")
        mass = self.grid.integrate_space(self.m0)
        if abs(mass - 1.0) > 1e-10:
            raise ValueError(f"m0 must have unit mass, got {mass:.12g}")

    @property
    def hamiltonian(self):
        return self.spec.effective_hamiltonian(self.grid.N)

    def with_grid(self, grid: Grid) -> Problem:
        if grid.shape != self.grid.shape:
            raise ValueError("only the time discretisation may change")
        return Problem(grid, self.spec, self.m0, self.u_T)
