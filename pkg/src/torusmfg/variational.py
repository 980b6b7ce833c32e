"""Energy minimisation over density/flux pairs.

The flux ``w`` is the only free variable: the density follows from the
affine forward map of :mod:`torusmfg.fokker_planck`, so every iterate is
feasible by construction. With a convexifying reference ``mbar`` the
objective

    E_bar(w) = sum_j dt int [ m_c L(-w/m_c) - F(m_c) + G(m_c; mbar_c) ]  +  int u_T m(T)

(``m_c`` the cell densities) is convex in ``w``. Its gradient comes from a
linear backward sweep, and at a stationary point that sweep is exactly
the discrete HJB equation, so the adjoint state is the value function.

The duality gap of the convex subproblem has a closed form: with ``u`` the
HJB solution for the current density and ``p = grad S(dt/2) u[j+1]``,

    gap = sum_j dt int m_c [ L(q) - q.p + H(p) ],   q = -w / m_c,

a density-weighted Fenchel-Young defect, which is zero exactly at the
minimiser.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as _model
from .fokker_planck import FlowPair, constraint_residual, perspective
from .hjb import hjb_solve, hjb_subsolution_residual
from .problem import Problem

__all__ = [
    "EnergyBreakdown",
    "energy",
    "ConvexResult",
    "minimize_convex",
    "MinimizerReport",
    "minimize_energy",
    "Certificate",
    "recover_and_certify",
    "optimal_flux",
]


# -- energy -------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    coupling: float
    terminal: float
    convexifier: float = 0.0
    penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.kinetic + self.coupling + self.terminal + self.convexifier + self.penalty

    @property
    def plain(self) -> float:
        return self.kinetic + self.coupling + self.terminal


def _convexifier_cells(spec, m_cell, mbar_cell, M=None):
    c_f = spec.c_f
    if not math.isfinite(c_f):
        raise ValueError("the convexifier needs a finite c_f (alpha >= 1 for power couplings)")
    mb = np.maximum(mbar_cell, 0.0)
    if M is not None:
        mb = np.minimum(mb, M)
    return mb, c_f


def energy(pair: FlowPair, spec, u_T, mbar=None, eta: float = 0.0, M=None) -> EnergyBreakdown:
    """Energy of a pair, optionally convexified around ``mbar`` and penalised by ``eta``.

    ``mbar`` is a density on time nodes; the correction uses its cell values.
    Infinite parts (negative density, or flux where the density vanishes)
    propagate as ``inf``.
    """
    g = pair.grid
    mc = pair.m_cell
    ham = spec.hamiltonian
    kinetic = float(g.integrate_cells(perspective(mc, pair.w, ham.L)))
    coupling = -float(g.integrate_cells(spec.coupling.F(mc)))
    terminal = float(g.integrate_space(np.asarray(u_T) * pair.m[-1]))
    convex = 0.0
    if mbar is not None:
        mb, c_f = _convexifier_cells(spec, mc, pair.grid.heat_semigroup(np.asarray(mbar)[:-1], g.dt / 2), M)
        if np.any(mc < 0):
            convex = math.inf
        else:
            convex = float(g.integrate_cells(_model._G(mc, mb, spec.alpha, c_f)))
    penalty = 0.0
    if eta > 0:
        k = g.N + 3
        pen = lambda q: eta / k * np.sum(q * q, axis=-1) ** (k / 2)  # noqa: E731
        penalty = float(g.integrate_cells(perspective(mc, pair.w, pen)))
    return EnergyBreakdown(kinetic, coupling, terminal, convex, penalty)


def optimal_flux(grid, m, u, hamiltonian):
    """``w[j] = -m_c[j] grad H(grad S(dt/2) u[j+1])``."""
    mc = grid.heat_semigroup(np.asarray(m)[:-1], grid.dt / 2)
    p = grid.gradient(grid.heat_semigroup(np.asarray(u)[1:], grid.dt / 2))
    return -mc[..., None] * hamiltonian.grad_H(p)


# -- reduced convex problem ---------------------------------------------------------------


class _Reduced:
    """Convexified energy as a function of the flux alone, with its gradient."""

    def __init__(self, problem: Problem, mbar=None, M=None):
        self.pb = problem
        g = self.g = problem.grid
        self.spec = problem.spec
        self.ham = problem.hamiltonian
        self.full = g.heat_multiplier(g.dt)
        self.half = g.heat_multiplier(g.dt / 2)
        self.D = g._derivative_symbols
        self.m0h = g.fft(problem.m0)
        self.uTh = g.fft(problem.u_T)
        self.mbar_cell = None
        if mbar is not None:
            self.mbar_cell, self.c_f = _convexifier_cells(self.spec, None, g.heat_semigroup(np.asarray(mbar)[:-1], g.dt / 2), M)
        self.n_eval = 0

    def inner(self, a, b):
        return self.g.dt * float(np.sum(a * b)) / (self.g.n ** self.g.N)

    # forward map w -> (m nodes, m cells)
    def density(self, w):
        g = self.g
        divh = sum(d * g.fft(w[..., i]) for i, d in enumerate(self.D))
        src = -g.dt * self.half * divh
        mh = np.empty((g.n_t + 1,) + self.full.shape, dtype=complex)
        mh[0] = self.m0h
        for j in range(g.n_t):
            mh[j + 1] = self.full * mh[j] + src[j]
        return g.ifft(mh), g.ifft(self.half * mh[:-1])

    def _C(self, mc):
        val = -self.spec.coupling.F(mc)
        if self.mbar_cell is not None:
            val = val + _model._G(mc, self.mbar_cell, self.spec.alpha, self.c_f)
        return val

    def _dC(self, mc):
        val = -self.spec.coupling.f(mc)
        if self.mbar_cell is not None:
            val = val + _model._g(mc, self.mbar_cell, self.spec.alpha, self.c_f)
        return val

    def value(self, w):
        """Objective and a cache for the gradient; ``inf`` outside the domain."""
        self.n_eval += 1
        g = self.g
        m, mc = self.density(w)
        if np.min(mc) <= 0:
            return math.inf, None
        q = -w / mc[..., None]
        with np.errstate(invalid="ignore"):
            J = g.integrate_cells(mc * self.ham.L(q) + self._C(mc)) + g.integrate_space(self.pb.u_T * m[-1])
        if not np.isfinite(J):
            return math.inf, None
        return float(J), (m, mc, q)

    def gradient(self, w, cache):
        g = self.g
        m, mc, q = cache
        gl = self.ham.grad_L(q)
        src = self.ham.L(q) - np.sum(q * gl, axis=-1) + self._dC(mc)
        srch = g.dt * self.half * g.fft(src)
        Uh = np.empty((g.n_t + 1,) + self.full.shape, dtype=complex)
        Uh[-1] = self.uTh
        for j in range(g.n_t - 1, -1, -1):
            Uh[j] = self.full * Uh[j + 1] + srch[j]
        Vh = self.half * Uh[1:]
        grad_u = np.stack([g.ifft(d * Vh) for d in self.D], axis=-1)
        return -gl + grad_u

    def hjb(self, mc):
        """Discrete HJB solution for the convexified source on the given cell densities."""
        g = self.g
        src = self.spec.coupling.f(mc)
        if self.mbar_cell is not None:
            src = src - _model._g(mc, self.mbar_cell, self.spec.alpha, self.c_f)
        u = np.empty((g.n_t + 1,) + g.shape)
        u[-1] = self.pb.u_T
        for j in range(g.n_t - 1, -1, -1):
            uh = g.heat_semigroup(u[j + 1], g.dt / 2)
            u[j] = g.heat_semigroup(uh - g.dt * (self.ham.H(g.gradient(uh)) + src[j]), g.dt / 2)
        return u

    def gap(self, w, cache):
        g = self.g
        m, mc, q = cache
        u = self.hjb(mc)
        p = g.gradient(g.heat_semigroup(u[1:], g.dt / 2))
        fy = self.ham.L(q) - np.sum(q * p, axis=-1) + self.ham.H(p)
        return float(g.integrate_cells(mc * fy)), u


def _lbfgs(rp: _Reduced, w0, gap_tol, max_iter, memory=12, gap_every=5, log=None):
    """Monotone L-BFGS in the space-time L2 metric; stops on the duality gap."""
    w = np.array(w0, dtype=float)
    J, cache = rp.value(w)
    if not np.isfinite(J):
        raise ValueError("initial flux gives an infeasible density")
    G = rp.gradient(w, cache)
    S, Y, R = [], [], []
    gap, u = rp.gap(w, cache)
    history = [(0, J, gap)]
    it = 0
    step0 = 1.0
    while gap > gap_tol and it < max_iter:
        it += 1
        # two-loop recursion
        d = -G
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(R)):
            a = rho * rp.inner(s, d)
            alphas.append(a)
            d = d - a * y
        if S:
            d = d * (rp.inner(S[-1], Y[-1]) / rp.inner(Y[-1], Y[-1]))
        else:
            d = d * step0 / max(1.0, math.sqrt(rp.inner(G, G)))
        for (s, y, rho), a in zip(zip(S, Y, R), reversed(alphas)):
            b = rho * rp.inner(y, d)
            d = d + (a - b) * s
        slope = rp.inner(G, d)
        if slope >= 0:
            S, Y, R = [], [], []
            d = -G / max(1.0, math.sqrt(rp.inner(G, G)))
            slope = rp.inner(G, d)
        t = 1.0
        for _ in range(60):
            Jn, cn = rp.value(w + t * d)
            if Jn <= J + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        wn = w + t * d
        Gn = rp.gradient(wn, cn)
        s, y = wn - w, Gn - G
        sy = rp.inner(s, y)
        if sy > 1e-16 * math.sqrt(rp.inner(s, s) * rp.inner(y, y)):
            S.append(s)
            Y.append(y)
            R.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), R.pop(0)
        stalled = J - Jn <= 1e-15 * (1 + abs(J))
        w, J, G, cache = wn, Jn, Gn, cn
        if it % gap_every == 0 or stalled:
            gap, u = rp.gap(w, cache)
            history.append((it, J, gap))
            if log:
                log(f"  lbfgs it={it} E={J:.12g} gap={gap:.3e}")
            if stalled and gap > gap_tol:
                break
    if history[-1][0] != it:
        gap, u = rp.gap(w, cache)
        history.append((it, J, gap))
    return w, J, gap, u, it, history


# -- primal-dual alternative ------------------------------------------------------------


def _prox_speed(r, tau_eff, b, m_of):
    """Bisection for ``m(s) s + tau s^(b-1) = r``; the left side increases in ``s``."""
    lo = np.zeros_like(r)
    hi = (r / tau_eff) ** (1.0 / (b - 1.0)) + 1e-300
    for _ in range(200):
        s = 0.5 * (lo + hi)
        res = m_of(s) * s + tau_eff * s ** (b - 1.0) - r
        lo = np.where(res < 0, s, lo)
        hi = np.where(res >= 0, s, hi)
        if np.all(hi - lo <= 1e-13 * (1.0 + hi)):
            break
    return 0.5 * (lo + hi)


def perspective_prox(a, c, tau, b, dC=None, d2C=None):
    """Pointwise prox of ``tau (m |w/m|^b / b + C(m))`` at ``(a, c)``.

    Stationarity forces ``w`` parallel to ``c`` and reduces the problem to a
    monotone scalar equation in the speed ``s = |w| / m``; the density then
    solves ``m + tau C'(m) = a + tau (b-1)/b s^b`` by Newton (``m >= 0``).
    """
    a = np.asarray(a, float)
    c = np.asarray(c, float)
    r = np.linalg.norm(c, axis=-1)

    def m_of(s):
        rhs = a + tau * (b - 1.0) / b * s**b
        if dC is None:
            return np.maximum(rhs, 0.0)
        m = np.maximum(rhs, 0.0)
        for _ in range(50):
            res = m + tau * dC(m) - rhs
            step = res / (1.0 + tau * d2C(m))
            m = np.maximum(m - step, 0.0)
            if np.all(np.abs(step) <= 1e-10 * (1.0 + m)):
                break
        return m

    s = _prox_speed(r, tau, b, m_of)
    m = m_of(s)
    scale = np.where(r > 0, m * s / np.where(r > 0, r, 1.0), 0.0)
    return m, c * scale[..., None]


class _PrimalDual:
    """Chambolle-Pock on cell densities and fluxes with the forward steps as linear constraints.

    Unknowns: cell densities ``mc[1:]`` (``mc[0] = S(dt/2) m0`` is data),
    fluxes ``w[0..n_t-1]`` and the final density ``mT``. Constraints::

        mc[j+1] - S(dt) (mc[j] - dt div w[j]) = 0      j < n_t - 1
        mT - S(dt/2) (mc[-1] - dt div w[-1]) = 0

    All pairings are space means summed over slices.
    """

    def __init__(self, rp: _Reduced):
        if not isinstance(rp.ham, _model.PowerHamiltonian):
            raise ValueError("the primal-dual method needs an unpenalised power Hamiltonian")
        if rp.mbar_cell is None:
            raise ValueError("the primal-dual method needs a convexifying reference")
        self.rp = rp
        g = self.g = rp.g
        self.mc0 = g.heat_semigroup(rp.pb.m0, g.dt / 2)
        self.b = rp.ham.gamma_conj

    def _S(self, y):
        g = self.g
        out = np.empty_like(y)
        out[:-1] = g.heat_semigroup(y[:-1], g.dt)
        out[-1] = g.heat_semigroup(y[-1], g.dt / 2)
        return out

    def K(self, mc, w, mT, first=None):
        """Linear part of the constraint map; ``first`` is the fixed first cell (zero for the pure operator)."""
        g = self.g
        first = np.zeros(g.shape) if first is None else first
        full = np.concatenate([first[None], mc])
        nxt = np.concatenate([mc, mT[None]])
        return nxt - self._S(full - g.dt * g.divergence(w))

    def Kt(self, y):
        g = self.g
        Sy = self._S(y)
        return y[:-1] - Sy[1:], -g.dt * g.gradient(Sy), y[-1]

    def norm_estimate(self, iters=50):
        g = self.g
        rng = np.random.default_rng(0)
        x = (rng.standard_normal((g.n_t - 1,) + g.shape), rng.standard_normal((g.n_t,) + g.shape + (g.N,)),
             rng.standard_normal(g.shape))
        lam = 1.0
        for _ in range(iters):
            z = self.Kt(self.K(*x))
            nz = math.sqrt(sum(float(np.sum(v * v)) for v in z))
            nx = math.sqrt(sum(float(np.sum(v * v)) for v in x))
            lam = nz / nx
            x = tuple(v / nz for v in z)
        return math.sqrt(lam)

    def _prox_fixed(self, c, tau):
        # density pinned to mc0: only the flux moves
        r = np.linalg.norm(c, axis=-1)
        s = _prox_speed(r, tau, self.b, lambda s: self.mc0)
        scale = np.where(r > 0, self.mc0 * s / np.where(r > 0, r, 1.0), 0.0)
        return c * scale[..., None]

    def solve(self, w0, gap_tol, max_iter, check_every=25, balance=None, log=None):
        rp, g, spec = self.rp, self.g, self.rp.spec
        m_nodes, mc_all = rp.density(w0)
        mc, w, mT = mc_all[1:].copy(), np.array(w0, float), m_nodes[-1].copy()
        # primal steps scaled up by 1/dt to match the dt-weighted objective
        omega = 1.0 / g.dt if balance is None else balance
        Lk = self.norm_estimate()
        tau, sigma = 0.95 * omega / Lk, 0.95 / (omega * Lk)
        # the objective is a space mean times dt per cell, so the prox weight is tau * dt
        te = tau * g.dt
        y = np.zeros((g.n_t,) + g.shape)
        xb = (mc, w, mT)
        mbar, alpha, c_f = rp.mbar_cell[1:], spec.alpha, rp.c_f
        dC = lambda m: -spec.coupling.f(m) + _model._g(m, mbar, alpha, c_f)  # noqa: E731
        d2C = lambda m: -spec.coupling.df(m) + _model._dg(m, alpha, c_f)  # noqa: E731
        hist = []
        J, gap, u, it = math.inf, math.inf, None, 0
        for it in range(1, max_iter + 1):
            y = y + sigma * self.K(*xb, first=self.mc0)
            gm, gw, gT = self.Kt(y)
            old = (mc, w, mT)
            cw = w - tau * gw
            mc, w_rest = perspective_prox(mc - tau * gm, cw[1:], te, self.b, dC, d2C)
            w = np.concatenate([self._prox_fixed(cw[0], te)[None], w_rest])
            mT = mT - tau * (gT + rp.pb.u_T)
            xb = tuple(2 * n - o for n, o in zip((mc, w, mT), old))
            if it % check_every == 0:
                Jw, cache = rp.value(w)
                if np.isfinite(Jw):
                    J = Jw
                    gap, u = rp.gap(w, cache)
                    hist.append((it, J, gap))
                    if log:
                        log(f"  pdhg it={it} E={J:.12g} gap={gap:.3e}")
                    if gap <= gap_tol:
                        break
        return w, J, gap, u, it, hist


# -- public solvers -------------------------------------------------------------------


@dataclass
class ConvexResult:
    """Minimiser of one convexified problem and its dual multiplier ``u``."""

    pair: FlowPair
    u: np.ndarray
    value: float
    gap: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def minimize_convex(problem: Problem, mbar, w0=None, *, gap_tol: float = 1e-12, max_iter: int = 50_000,
                    method: str = "lbfgs", M=None, log=None) -> ConvexResult:
    """Minimise the energy convexified around ``mbar`` (density on nodes).

    Parameters
    ----------
    w0 : ndarray, optional
        Starting flux (zero by default, i.e. the heat evolution of ``m0``).
    gap_tol : float
        Target for the duality gap.
    method : {"lbfgs", "pdhg"}
        Reduced-space L-BFGS (default) or Chambolle-Pock with per-point
        perspective proxes.

    Returns the pair, the HJB multiplier and the final gap; the pair is
    feasible to roundoff whatever the method.
    """
    g = problem.grid
    mbar = np.asarray(mbar, dtype=float)
    if np.any(mbar < 0):
        raise ValueError("reference density must be nonnegative")
    rp = _Reduced(problem, mbar, M)
    if w0 is None:
        w0 = np.zeros((g.n_t,) + g.shape + (g.N,))
    if method == "lbfgs":
        w, J, gap, u, it, hist = _lbfgs(rp, w0, gap_tol, max_iter, log=log)
    elif method == "pdhg":
        w, J, gap, u, it, hist = _PrimalDual(rp).solve(w0, gap_tol, max_iter, log=log)
    else:
        raise ValueError(f"unknown method {method!r}")
    m, _ = rp.density(w)
    return ConvexResult(FlowPair(g, m, w), u, J, gap, it, gap <= gap_tol, hist)


@dataclass
class Certificate:
    """Pass/fail record of the weak-solution clauses for one ``(m, w, u)``.

    Clause (i): the integrability quantities are finite. Clause (ii): the
    HJB subsolution defect and the terminal inequality. Clause (iii): the
    forward equation holds for the pair, nearly holds with the flux
    recovered from ``u`` (looser, since this inherits the solver's
    optimality error), and the two fluxes agree in ``L1``. Clause (iv): the energy identity
    ``int m (L(grad H(grad u)) - f) + int (m_T u_T - m0 u_0) = 0``.
    """

    integrability: dict
    subsolution_residual: float
    terminal_excess: float
    constraint_residual: float
    recovered_residual: float
    flux_mismatch: float
    identity_defect: float
    identity_scale: float
    min_density: float
    mass_defect: float
    lq_exponent: float
    tol_subsolution: float = 1e-6
    tol_constraint: float = 1e-6
    tol_recovered: float = 1e-4
    tol_flux: float = 1e-3
    tol_identity: float = 1e-4

    @property
    def clauses(self) -> dict:
        return {
            "i": all(math.isfinite(v) for v in self.integrability.values()),
            "ii": self.subsolution_residual <= self.tol_subsolution and self.terminal_excess <= self.tol_subsolution,
            "iii": (self.constraint_residual <= self.tol_constraint and self.recovered_residual <= self.tol_recovered
                    and self.flux_mismatch <= self.tol_flux
                    and self.min_density >= -1e-8 and self.mass_defect <= 1e-10),
            "iv": abs(self.identity_defect) <= self.tol_identity * (1.0 + self.identity_scale),
        }

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def summary(self) -> str:
        c = self.clauses
        lines = [
            f"clause (i)   {'pass' if c['i'] else 'FAIL'}  " + ", ".join(f"{k}={v:.6g}" for k, v in self.integrability.items()),
            f"clause (ii)  {'pass' if c['ii'] else 'FAIL'}  subsolution={self.subsolution_residual:.3e} terminal={self.terminal_excess:.3e}",
            f"clause (iii) {'pass' if c['iii'] else 'FAIL'}  residual={self.constraint_residual:.3e} recovered={self.recovered_residual:.3e} flux_l1={self.flux_mismatch:.3e} "
            f"min_m={self.min_density:.6g} mass={self.mass_defect:.3e}",
            f"clause (iv)  {'pass' if c['iv'] else 'FAIL'}  defect={self.identity_defect:.3e} scale={self.identity_scale:.6g}",
            f"L^q exponent of the weak formulation: {self.lq_exponent:.6g}",
        ]
        return "\n".join(lines)


def _lq_exponent(spec, N):
    a, gm = spec.alpha, spec.gamma
    if a * N <= gm:
        return math.inf
    return gm * (a + 1) * (1 + N) / (a * N - gm)


def recover_and_certify(pair: FlowPair, u, problem: Problem, recompute_u: bool = False, **tols) -> Certificate:
    """Check the weak-solution clauses for a pair and a value-function candidate.

    With ``recompute_u`` the candidate is replaced by the HJB solution for
    the pair's density (same time scheme as the solvers, no refinement).
    """
    g, spec = problem.grid, problem.spec
    ham = problem.hamiltonian
    if recompute_u:
        u = hjb_solve(g, problem.u_T, pair.m, spec, refine=False)
    u = np.asarray(u, dtype=float)
    mc = pair.m_cell
    p = g.gradient(g.heat_semigroup(u[1:], g.dt / 2))
    drift = ham.grad_H(p)
    w_star = -mc[..., None] * drift
    speed = np.linalg.norm(drift, axis=-1)
    lag = ham.L(drift)
    fm = spec.coupling.f(mc)
    integ = {
        "grad_u_Lgamma": float(g.integrate_cells(np.linalg.norm(p, axis=-1) ** spec.gamma) ** (1 / spec.gamma)),
        "m_L_drift": float(g.integrate_cells(mc * lag)),
        "m_drift": float(g.integrate_cells(mc * speed)),
    }
    sub = hjb_subsolution_residual(g, u, pair.m, spec)
    term = float(np.max(u[-1] - problem.u_T))
    res = constraint_residual(pair, problem.m0)
    res_star = constraint_residual(pair, problem.m0, flux=w_star)
    mismatch = float(g.integrate_cells(np.sum(np.abs(pair.w - w_star), axis=-1)))
    t1 = float(g.integrate_cells(mc * (lag - fm)))
    t2 = float(g.integrate_space(pair.m[-1] * problem.u_T))
    t3 = float(g.integrate_space(problem.m0 * u[0]))
    return Certificate(integ, sub, term, res, res_star, mismatch, t1 + t2 - t3, abs(t1) + abs(t2) + abs(t3),
                       pair.min_density, pair.mass_defect, _lq_exponent(spec, g.N), **tols)


@dataclass
class MinimizerReport:
    """Outcome of :func:`minimize_energy`.

    ``energy_trace[k]`` is the plain energy of the k-th reference density
    (entry 0 is the initial pair); ``outer_rows`` holds one row per outer
    step for the CSV output.
    """

    converged: bool
    outer_iterations: int
    final_G: float
    energy_trace: list
    pair: FlowPair
    u: np.ndarray
    certificate: Certificate | None
    breakdown: EnergyBreakdown
    outer_rows: list = field(default_factory=list)
    message: str = ""

    @property
    def energy(self) -> float:
        return self.breakdown.total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["outer", "energy", "energy_convexified", "convexifier", "reference_change", "gap", "inner_iterations"])
            for row in self.outer_rows:
                wr.writerow([row[0]] + [repr(float(x)) for x in row[1:6]] + [row[6]])


def minimize_energy(problem: Problem, initial: FlowPair | None = None, *, gap_tol: float = 1e-12,
                    max_inner: int = 50_000, max_outer: int = 100, tol_reference: float = 1e-6,
                    tol_G: float = 1e-6, method: str = "lbfgs", M=None, certify: bool = True,
                    allow_supercritical: bool = False, log=None) -> MinimizerReport:
    """Outer reference-update loop on the convexified energy.

    Starts from ``initial`` (default: the heat evolution of ``m0`` with zero
    flux), minimises the energy convexified around the current reference,
    and makes the minimiser the next reference. Stops when the reference
    moves by at most ``tol_reference`` in sup norm and the convexifier
    integral at the minimiser is at most ``tol_G``. Each step cannot raise
    the plain energy, because the convexifier is nonnegative and vanishes
    at its own reference.
    """
    g, spec = problem.grid, problem.spec
    if not allow_supercritical and not _model.classify_regime(spec, g.N).subcritical:
        raise ValueError("energy is unbounded below for alpha >= gamma'/N; pass allow_supercritical=True to run anyway")
    if initial is None:
        w = np.zeros((g.n_t,) + g.shape + (g.N,))
        rp = _Reduced(problem)
        mbar = rp.density(w)[0]
        initial = FlowPair(g, mbar, w)
    mbar, w = initial.m, initial.w
    e0 = energy(initial, spec, problem.u_T, eta=spec.eta)
    trace = [e0.total]
    rows = []
    converged, G_int, res = False, math.inf, None
    msg = f"no convergence in {max_outer} outer iterations"
    k = 0
    for k in range(1, max_outer + 1):
        res = minimize_convex(problem, mbar, w, gap_tol=gap_tol, max_iter=max_inner, method=method, M=M, log=log)
        eb = energy(res.pair, spec, problem.u_T, mbar=mbar, eta=spec.eta, M=M)
        G_int = eb.convexifier
        change = float(np.max(np.abs(res.pair.m - mbar)))
        e_cur = eb.total - eb.convexifier
        trace.append(e_cur)
        rows.append((k, e_cur, eb.total, G_int, change, res.gap, res.iterations))
        if log:
            log(f"outer {k}: E={e_cur:.12g} G={G_int:.3e} dm={change:.3e} gap={res.gap:.3e} inner={res.iterations}")
        if change <= tol_reference and G_int <= tol_G:
            converged, msg = True, f"converged in {k} outer iterations"
            break
        mbar, w = res.pair.m, res.pair.w
    pair = res.pair
    u = res.u
    cert = recover_and_certify(pair, u, problem, recompute_u=True) if certify else None
    if certify:
        u = hjb_solve(g, problem.u_T, pair.m, spec, refine=False)
    final = energy(pair, spec, problem.u_T, eta=spec.eta)
    return MinimizerReport(converged, k, G_int, trace, pair, u, cert, final, rows, msg)
