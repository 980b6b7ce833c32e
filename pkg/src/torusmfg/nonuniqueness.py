"""Two distinct equilibria for uniform data at long horizons.

With ``m0 = 1`` and ``u_T = 0`` the uniform pair ``(1, 0)`` always solves the
system, with energy ``-T F(1)``. A competitor that ramps up a stationary
bump ``mu = 1 + eps phi`` on ``[0, 1]`` and holds it afterwards has energy
``C + (T - 1) E_S(mu)``. When ``E_S(mu) < -F(1)``, this is below
``-T F(1)`` for large ``T``. Minimising from each pair then yields two
different certified solutions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from . import model as _model
from .fokker_planck import FlowPair, constraint_residual, perspective
from .grid import Grid
from .problem import Problem, uniform
from .variational import MinimizerReport, energy, minimize_energy

__all__ = [
    "smoothstep",
    "CompetitorSpec",
    "NonuniquenessCondition",
    "check_nonucond",
    "build_competitor",
    "stationary_energy",
    "stationary_flux",
    "search_amplitude",
    "NonuniquenessReport",
    "nonuniqueness_experiment",
]


def smoothstep(t):
    """``3s^2 - 2s^3`` with ``s = clip(t, 0, 1)``: zero at 0, one from 1 on, C1."""
    s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True)
class CompetitorSpec:
    """A stationary bump ``mu = 1 + epsilon * phi`` switched on by a time ramp.

    ``phi`` maps a grid to a zero-mean field; the default is ``cos(2 pi x_1)``.
    ``ramp`` must vanish at 0 and equal one on ``[1, inf)``.
    """

    epsilon: float
    phi: Callable[[Grid], np.ndarray] | None = None
    ramp: Callable = smoothstep

    def bump(self, grid: Grid) -> np.ndarray:
        if self.phi is None:
            return np.cos(2 * np.pi * grid.coords[0]) * np.ones(grid.shape)
        phi = np.asarray(self.phi(grid), dtype=float)
        mean = float(grid.integrate_space(phi))
        if abs(mean) > 1e-12:
            raise ValueError(f"bump must have zero mean, got {mean:.3e}")
        return phi

    def mu(self, grid: Grid) -> np.ndarray:
        mu = 1.0 + self.epsilon * self.bump(grid)
        if mu.min() <= 0:
            raise ValueError(f"epsilon={self.epsilon} makes the stationary density nonpositive")
        return mu

    def max_epsilon(self, grid: Grid) -> float:
        """Amplitude at which ``mu`` first touches zero."""
        return 1.0 / float(np.max(np.abs(self.bump(grid))))


# -- condition -----------------------------------------------------------------------


@dataclass(frozen=True)
class NonuniquenessCondition:
    """Outcome of :func:`check_nonucond`.

    ``b`` is the small-speed exponent of ``L``, ``c_L`` the smallest constant
    with ``L(q) <= c_L |q|^b`` on ``|q| <= 1`` (sampled), and ``c`` the
    sampled minimum of ``f'`` on ``[0, 2]``.
    """

    b: float
    c: float
    c_L: float
    passed: bool
    message: str = ""


def check_nonucond(spec, N: int = 1, samples: int = 1000) -> NonuniquenessCondition:
    """Check that ``L`` vanishes faster than quadratically and ``f`` increases on ``[0, 2]``."""
    ham = spec.hamiltonian
    b = float(ham.gamma_conj)
    s = np.linspace(0.0, 1.0, samples + 1)[1:]
    q = np.zeros((samples, N))
    q[:, 0] = s
    lag = np.asarray(_model.penalized_L(spec, q, spec.eta, N) if spec.eta > 0 else ham.L(q), dtype=float)
    L0 = float(np.asarray(ham.L(np.zeros(N))))
    c_L = math.inf if abs(L0) > 1e-14 else float(np.max(lag / s**b))
    m = np.linspace(0.0, 2.0, samples)
    c = float(np.min(spec.coupling.df(m)))
    problems = []
    if not b > 2:
        problems.append(f"L grows like |q|^{b:g} near zero, need an exponent above 2")
    if not math.isfinite(c_L):
        problems.append("L(0) != 0")
    if not c > 0:
        problems.append(f"min f' on [0, 2] is {c:.3g}, need it positive")
    return NonuniquenessCondition(b, c, c_L, not problems, "; ".join(problems) or "ok")


# -- competitor ------------------------------------------------------------------------


def stationary_flux(grid: Grid, mu) -> np.ndarray:
    """Flux that keeps ``mu`` exactly stationary under one discrete step.

    Solves ``div w = (S(dt/2) - S(-dt/2)) mu / dt`` mode by mode; tends to
    ``grad mu`` as ``dt -> 0``.
    """
    return _flux_between(grid, np.asarray(mu)[None], np.asarray(mu)[None])[0]


def _flux_between(grid: Grid, m_from, m_to):
    """Curl-free ``w`` with ``m_to = S(dt/2)(S(dt/2) m_from - dt div w)``, per slice.

    Only modes present in the data are inverted, so the backward heat factor
    never amplifies roundoff.
    """
    lam = -grid.laplacian_symbol
    a, b = grid.fft(m_from), grid.fft(m_to)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    live = (np.abs(a) > 1e-14 * scale) | (np.abs(b) > 1e-14 * scale)
    live &= lam[None] > 0
    grow = np.exp(np.where(live, lam[None] * grid.dt / 2, 0.0))
    rhs = np.where(live, (a / grow - b * grow) / grid.dt, 0.0)
    pot = np.where(live, rhs / np.where(lam[None] > 0, -lam[None], 1.0), 0.0)
    return np.stack([grid.ifft(d[None] * pot) for d in grid._derivative_symbols], axis=-1)


def build_competitor(cs: CompetitorSpec, grid: Grid) -> FlowPair:
    """Pair ``m = 1 + ramp(t)(mu - 1)`` with the flux that makes each step exact.

    For ``t >= 1`` the flux is :func:`stationary_flux` of ``mu``; the whole
    pair satisfies the discrete forward equation to roundoff.
    """
    if grid.T < 1.0:
        raise ValueError(f"the ramp needs T >= 1, got T={grid.T}")
    mu = cs.mu(grid)
    z = np.asarray(cs.ramp(grid.times), dtype=float).reshape((-1,) + (1,) * grid.N)
    m = 1.0 + z * (mu - 1.0)[None]
    w = _flux_between(grid, m[:-1], m[1:])
    return FlowPair(grid, m, w)


def stationary_energy(grid: Grid, mu, v, spec) -> float:
    """``int mu L(-v/mu) - F(mu)`` over the torus (plus the penalty when ``eta > 0``)."""
    mu = np.asarray(mu, dtype=float)
    dens = perspective(mu, v, spec.hamiltonian.L)
    if spec.eta > 0:
        k = grid.N + 3
        dens = dens + perspective(mu, v, lambda q: spec.eta / k * np.sum(q * q, axis=-1) ** (k / 2))
    return float(grid.integrate_space(dens - spec.coupling.F(mu)))


def search_amplitude(grid: Grid, spec, cs: CompetitorSpec | None = None, xtol: float = 1e-8):
    """Amplitude minimising the stationary energy of ``mu = 1 + eps phi``.

    Bounded scalar search (golden section with parabolic steps) over
    ``(0, 0.9 / max|phi|)``.

    Returns ``(epsilon, delta)`` with ``delta = -F(1) - E_S(mu_eps, grad mu_eps)``.
    """
    cs = cs or CompetitorSpec(0.0)
    F1 = float(spec.coupling.F(1.0))
    hi = 0.9 * cs.max_epsilon(grid)

    def obj(eps):
        mu = CompetitorSpec(eps, cs.phi, cs.ramp).mu(grid)
        return stationary_energy(grid, mu, grid.gradient(mu), spec)

    res = minimize_scalar(obj, bounds=(0.0, hi), method="bounded", options={"xatol": xtol})
    return float(res.x), float(-F1 - res.fun)


# -- experiment ---------------------------------------------------------------------------


@dataclass
class NonuniquenessReport:
    epsilon: float
    delta: float
    ramp_cost: float
    T_threshold: float
    T: float
    E_trivial: float
    E_competitor: float
    E_run1: float
    E_run2: float
    separation: float
    condition: NonuniquenessCondition
    run_trivial: MinimizerReport | None = None
    run_competitor: MinimizerReport | None = None
    competitor: FlowPair | None = None
    notes: list = field(default_factory=list)

    @property
    def competitor_wins(self) -> bool:
        return self.E_competitor < self.E_trivial

    @property
    def certified(self) -> bool:
        runs = (self.run_trivial, self.run_competitor)
        return all(r is not None and r.converged and r.certificate is not None and r.certificate.passed for r in runs)

    def write_csv(self, path) -> None:
        cols = ["epsilon", "delta", "C", "T_threshold", "E_trivial", "E_competitor", "E_run1", "E_run2", "separation"]
        vals = [self.epsilon, self.delta, self.ramp_cost, self.T_threshold, self.E_trivial, self.E_competitor,
                self.E_run1, self.E_run2, self.separation]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["T"] + cols)
            wr.writerow([repr(float(self.T))] + [repr(float(v)) for v in vals])


def nonuniqueness_experiment(spec, N: int = 1, n: int = 64, steps_per_unit: int = 100,
                             cs: CompetitorSpec | None = None, T: float | None = None,
                             run_solvers: bool = True, allow_weak: bool = False,
                             solver_options: dict | None = None, log=None) -> NonuniquenessReport:
    """Locate a horizon where a bump beats the uniform pair, then minimise from both.

    The stationary amplitude comes from :func:`search_amplitude`. The ramp
    cost ``C`` is the energy of the competitor over ``[0, 1]``, computed on
    the same time step as the runs. The threshold is
    ``1 + (C + F(1)) / delta``, and the horizon is ``max(2, 1.5 * threshold)``
    unless ``T`` is given. Raises ``ValueError`` if the condition or the
    regime fails, or if no amplitude gives a positive margin.
    """
    cond = check_nonucond(spec, N)
    if not cond.passed:
        raise ValueError(f"nonuniqueness condition fails: {cond.message}")
    regime = _model.classify_regime(spec, N).regime
    allowed = {_model.Regime.CLASSICAL, _model.Regime.CLASSICAL_PENALIZED}
    if allow_weak:
        allowed.add(_model.Regime.WEAK)
    if regime not in allowed:
        raise ValueError(f"regime {regime.value} is not covered by the experiment")
    cs = cs or CompetitorSpec(0.0)
    unit = Grid(N, n, 1.0, steps_per_unit)
    eps, delta = search_amplitude(unit, spec, cs)
    if not delta > 0:
        raise ValueError("condition (nonucond) margin too small at this resolution: no amplitude lowers the stationary energy")
    cs = CompetitorSpec(eps, cs.phi, cs.ramp)
    F1 = float(spec.coupling.F(1.0))
    ramp_pair = build_competitor(cs, unit)
    zeros = uniform(unit, 0.0)
    C = energy(ramp_pair, spec, zeros, eta=spec.eta).total
    T_thr = 1.0 + (C + F1) / delta
    if T is None:
        T = max(2.0, 1.5 * T_thr)
    grid = Grid(N, n, float(T), int(round(T * steps_per_unit)))
    zeros = uniform(grid, 0.0)
    comp = build_competitor(cs, grid)
    trivial = FlowPair.trivial(grid)
    E_triv = energy(trivial, spec, zeros, eta=spec.eta).total
    E_comp = energy(comp, spec, zeros, eta=spec.eta).total
    notes = [f"constraint residual of competitor {constraint_residual(comp, uniform(grid, 1.0)):.3e}"]
    if log:
        log(f"eps={eps:.6g} delta={delta:.6g} C={C:.9g} T_threshold={T_thr:.6g} T={T:g} "
            f"E_trivial={E_triv:.12g} E_competitor={E_comp:.12g}")
    rep = NonuniquenessReport(eps, delta, C, T_thr, float(T), E_triv, E_comp, math.nan, math.nan, math.nan,
                              cond, competitor=comp, notes=notes)
    if not run_solvers:
        return rep
    problem = Problem(grid, spec, uniform(grid, 1.0), zeros)
    opts = dict(solver_options or {})
    rep.run_trivial = minimize_energy(problem, trivial, log=log, **opts)
    rep.run_competitor = minimize_energy(problem, comp, log=log, **opts)
    rep.E_run1, rep.E_run2 = rep.run_trivial.energy, rep.run_competitor.energy
    rep.separation = float(np.max(np.abs(rep.run_trivial.pair.m - rep.run_competitor.pair.m)))
    return rep
