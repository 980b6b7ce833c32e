"""Hamiltonians, couplings, the convexifier and the regime classifier.

Points in momentum/velocity space are arrays with a trailing axis of
length ``N``; every evaluator is vectorised over the leading axes.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "LegendreError",
    "PowerHamiltonian",
    "CustomHamiltonian",
    "PenalizedHamiltonian",
    "PowerCoupling",
    "CustomCoupling",
    "ModelSpec",
    "Regime",
    "RegimeReport",
    "legendre",
    "convexifier_G",
    "convexifier_g",
    "penalized_L",
    "penalized_H",
    "classify_regime",
]


class LegendreError(RuntimeError):
    """Raised when the inner sup of a Legendre transform does not converge."""


def _norm(x):
    return np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2, axis=-1))


def _fd_hessian(grad, p, eps=1e-6):
    p = np.asarray(p, dtype=float)
    N = p.shape[-1]
    cols = []
    for i in range(N):
        e = np.zeros(N)
        e[i] = eps * (1.0 + np.max(np.abs(p)))
        cols.append((grad(p + e) - grad(p - e)) / (2 * e[i]))
    return np.stack(cols, axis=-1)


def legendre(func, grad, q, hess=None, x0=None, tol=1e-10, max_iter=200):
    """Numeric convex conjugate ``sup_p { p.q - func(p) }``.

    Damped Newton on the concave inner problem, vectorised over the leading
    axes of ``q``. Returns ``(value, argmax)``; the argmax is the gradient of
    the conjugate at ``q``.
    """
    q = np.asarray(q, dtype=float)
    p = np.array(q if x0 is None else x0, dtype=float, copy=True)
    if hess is None:
        hess = lambda x: _fd_hessian(grad, x)  # noqa: E731
    scale = 1.0 + _norm(q)
    for _ in range(max_iter):
        r = q - grad(p)
        if np.all(_norm(r) <= tol * scale):
            break
        Hm = hess(p)
        Hm = Hm + 1e-14 * np.eye(q.shape[-1])
        d = np.linalg.solve(Hm, r[..., None])[..., 0]
        phi0 = np.sum(p * q, axis=-1) - func(p)
        step = np.ones(q.shape[:-1])
        active = _norm(r) > tol * scale
        for _ls in range(60):
            trial = p + step[..., None] * d
            phi1 = np.sum(trial * q, axis=-1) - func(trial)
            bad = active & ~(phi1 >= phi0 - 1e-15 * np.abs(phi0))
            if not np.any(bad):
                break
            step = np.where(bad, 0.5 * step, step)
        p = np.where(active[..., None], p + step[..., None] * d, p)
    else:
        r = q - grad(p)
        if np.any(_norm(r) > tol * scale):
            raise LegendreError(f"Legendre transform did not converge in {max_iter} iterations "
                                f"(residual {np.max(_norm(r)):.2e})")
    return np.sum(p * q, axis=-1) - func(p), p


# -- Hamiltonians ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerHamiltonian:
    """``H(p) = |p|^gamma / gamma`` with conjugate ``L(q) = |q|^gamma' / gamma'``."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    @property
    def gamma_conj(self) -> float:
        return self.gamma / (self.gamma - 1.0)

    @staticmethod
    def _radial_grad(x, a):
        r = _norm(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(r > 0, r ** (a - 2.0), 0.0)
        return fac[..., None] * x

    def H(self, p):
        return _norm(p) ** self.gamma / self.gamma

    def grad_H(self, p):
        return self._radial_grad(p, self.gamma)

    def L(self, q):
        return _norm(q) ** self.gamma_conj / self.gamma_conj

    def grad_L(self, q):
        return self._radial_grad(q, self.gamma_conj)

    # radial profile of L, used by the penalised conjugate and the prox
    def L_radial(self, s):
        return s**self.gamma_conj / self.gamma_conj

    def dL_radial(self, s):
        return s ** (self.gamma_conj - 1.0)

    def d2L_radial(self, s):
        return (self.gamma_conj - 1.0) * s ** (self.gamma_conj - 2.0)

    @property
    def C_H(self) -> float:
        return self.gamma

    @property
    def C_L(self) -> float:
        return self.gamma_conj


class CustomHamiltonian:
    """User-supplied convex Hamiltonian; ``L`` and its gradient are computed numerically.

    ``gamma`` is the growth exponent the user vouches for; it feeds the
    regime classifier and the conjugate exponent.
    """

    def __init__(self, H, grad_H, gamma, hess_H=None, C_H=math.nan, C_L=math.nan):
        self._H = H
        self._grad_H = grad_H
        self._hess_H = hess_H
        self.gamma = float(gamma)
        self.C_H = C_H
        self.C_L = C_L

    @property
    def gamma_conj(self) -> float:
        return self.gamma / (self.gamma - 1.0)

    def H(self, p):
        return self._H(np.asarray(p, dtype=float))

    def grad_H(self, p):
        return self._grad_H(np.asarray(p, dtype=float))

    def L(self, q):
        return legendre(self._H, self._grad_H, q, hess=self._hess_H)[0]

    def grad_L(self, q):
        return legendre(self._H, self._grad_H, q, hess=self._hess_H)[1]


class PenalizedHamiltonian:
    """Hamiltonian whose Lagrangian is ``L(q) + eta/(N+3) |q|^(N+3)``.

    For a power base the conjugate reduces to a monotone scalar equation in
    ``|q|``; otherwise the generic numeric Legendre transform is used.
    """

    def __init__(self, base, eta: float, N: int):
        if not eta > 0:
            raise ValueError(f"penalisation needs eta > 0, got {eta}")
        self.base = base
        self.eta = float(eta)
        self.N = int(N)
        self.exponent = self.N + 3

    @property
    def gamma(self) -> float:
        return self.base.gamma

    @property
    def gamma_conj(self) -> float:
        return self.base.gamma_conj

    @property
    def C_H(self):
        return self.base.C_H

    @property
    def C_L(self):
        return self.base.C_L

    def L(self, q):
        return self.base.L(q) + self.eta / self.exponent * _norm(q) ** self.exponent

    def grad_L(self, q):
        r = _norm(q)
        return self.base.grad_L(q) + (self.eta * r ** (self.exponent - 2))[..., None] * q

    def _speed(self, r):
        """Solve ``dL(s) + eta s^(N+2) = r`` for ``s >= 0`` (vectorised)."""
        b = self.base
        r = np.asarray(r, dtype=float)
        hi = r ** (1.0 / (b.gamma_conj - 1.0))
        hi = np.minimum(hi, (r / self.eta) ** (1.0 / (self.exponent - 1)))
        lo = np.zeros_like(r)
        s = 0.5 * hi
        for _ in range(200):
            res = b.dL_radial(s) + self.eta * s ** (self.exponent - 1) - r
            lo = np.where(res < 0, s, lo)
            hi = np.where(res > 0, s, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = b.d2L_radial(s) + (self.exponent - 1) * self.eta * s ** (self.exponent - 2)
                s_new = s - res / d
            bad = ~np.isfinite(s_new) | (s_new <= lo) | (s_new >= hi)
            s_new = np.where(bad, 0.5 * (lo + hi), s_new)
            if np.all(np.abs(s_new - s) <= 1e-15 * (1.0 + s)):
                s = s_new
                break
            s = s_new
        return s

    def _conjugate(self, p):
        p = np.asarray(p, dtype=float)
        if isinstance(self.base, PowerHamiltonian):
            r = _norm(p)
            s = self._speed(r)
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(r[..., None] > 0, (s / r)[..., None] * p, 0.0)
            val = r * s - self.base.L_radial(s) - self.eta / self.exponent * s**self.exponent
            return val, q
        return legendre(self.L, self.grad_L, p)

    def H(self, p):
        return self._conjugate(p)[0]

    def grad_H(self, p):
        return self._conjugate(p)[1]


# -- couplings --------------------------------------------------------------------


@dataclass(frozen=True)
class PowerCoupling:
    """``f(m) = kappa m^alpha``; ``kappa`` may be a spatial field (separable case)."""

    alpha: float
    kappa: float | np.ndarray = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def f(self, m):
        return self.kappa * np.maximum(m, 0.0) ** self.alpha

    def df(self, m):
        m = np.maximum(m, 0.0)
        with np.errstate(divide="ignore"):
            return self.kappa * self.alpha * m ** (self.alpha - 1.0)

    def F(self, m):
        m = np.asarray(m, dtype=float)
        with np.errstate(invalid="ignore"):
            val = self.kappa * np.maximum(m, 0.0) ** (self.alpha + 1.0) / (self.alpha + 1.0)
        return np.where(m < 0, np.inf, val)

    @property
    def kappa_max(self) -> float:
        return float(np.max(self.kappa))

    @property
    def c_f(self) -> float:
        # |kappa alpha m^(alpha-1)| <= c_f (m+1)^(alpha-1) needs alpha >= 1
        return self.kappa_max * self.alpha if self.alpha >= 1 else math.inf

    @property
    def C_f(self) -> float:
        return self.kappa_max

    @property
    def C_F(self) -> float:
        return self.kappa_max / (self.alpha + 1.0)


class CustomCoupling:
    """User-supplied ``f`` with its derivative; ``F`` by adaptive quadrature unless given."""

    def __init__(self, f, df, alpha, F=None, c_f=math.nan, C_f=math.nan, C_F=math.nan):
        self._f = f
        self._df = df
        self._F = F
        self.alpha = float(alpha)
        self.c_f = c_f
        self.C_f = C_f
        self.C_F = C_F

    def f(self, m):
        return self._f(np.asarray(m, dtype=float))

    def df(self, m):
        return self._df(np.asarray(m, dtype=float))

    def F(self, m):
        m = np.asarray(m, dtype=float)
        if self._F is not None:
            return np.where(m < 0, np.inf, self._F(np.maximum(m, 0.0)))
        out = np.empty(m.shape)
        for idx, mi in np.ndenumerate(m):
            if mi < 0:
                out[idx] = np.inf
            else:
                out[idx] = integrate.quad(lambda s: float(self._f(np.asarray(s))), 0.0, mi,
                                          epsabs=1e-12, epsrel=1e-10)[0]
        return out


# -- model -----------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Hamiltonian, coupling and the growth constants of one MFG model.

    Constants left as ``None`` are derived from the power families; an
    explicit value overrides the derived one (with a warning when it does
    not satisfy the growth bound on a sample).
    """

    hamiltonian: PowerHamiltonian | CustomHamiltonian
    coupling: PowerCoupling | CustomCoupling
    eta: float = 0.0
    truncation: float | None = None
    smooth: bool = True
    b: float | None = None
    c: float | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation level M must be positive")
        unknown = set(self.overrides) - {"C_H", "C_L", "c_f", "C_f", "C_F"}
        if unknown:
            raise ValueError(f"unknown constant overrides: {sorted(unknown)}")
        for name, value in self.overrides.items():
            if not _constant_ok(self, name, value):
                warnings.warn(f"override {name}={value} violates its growth bound on a sample", stacklevel=3)

    @classmethod
    def power(cls, gamma, alpha, kappa=1.0, **kw) -> ModelSpec:
        return cls(PowerHamiltonian(gamma), PowerCoupling(alpha, kappa), **kw)

    @property
    def gamma(self) -> float:
        return self.hamiltonian.gamma

    @property
    def gamma_conj(self) -> float:
        return self.gamma / (self.gamma - 1.0)

    @property
    def alpha(self) -> float:
        return self.coupling.alpha

    def _const(self, name, source):
        return self.overrides.get(name, getattr(source, name))

    @property
    def C_H(self):
        return self._const("C_H", self.hamiltonian)

    @property
    def C_L(self):
        return self._const("C_L", self.hamiltonian)

    @property
    def c_f(self):
        return self._const("c_f", self.coupling)

    @property
    def C_f(self):
        return self._const("C_f", self.coupling)

    @property
    def C_F(self):
        return self._const("C_F", self.coupling)

    def effective_hamiltonian(self, N: int):
        """The Hamiltonian actually used in the equations (``H_eta`` when ``eta > 0``)."""
        if self.eta > 0:
            return PenalizedHamiltonian(self.hamiltonian, self.eta, N)
        return self.hamiltonian


def _constant_ok(spec: ModelSpec, name: str, value: float) -> bool:
    p = np.linspace(0.0, 20.0, 401)[:, None]
    m = np.linspace(0.0, 100.0, 1001)
    h, cp = spec.hamiltonian, spec.coupling
    if name == "C_H":
        Hv = h.H(p)
        return bool(np.all(p[:, 0] ** h.gamma / value <= Hv + 1e-12) and np.all(Hv <= value * (p[:, 0] ** h.gamma + 1)))
    if name == "C_L":
        Lv = h.L(p)
        gc = h.gamma_conj
        return bool(np.all(p[:, 0] ** gc / value - value <= Lv + 1e-12) and np.all(Lv <= value * (p[:, 0] ** gc + 1)))
    if name == "c_f":
        return bool(np.all(np.abs(cp.df(m[1:])) <= value * (m[1:] + 1) ** (cp.alpha - 1) + 1e-12))
    if name == "C_f":
        return bool(np.all(cp.f(m) <= value * (m**cp.alpha + 1) + 1e-12))
    if name == "C_F":
        return bool(np.all(cp.F(m) <= value * (m ** (cp.alpha + 1) + 1) + 1e-12))
    return True


# -- convexifier --------------------------------------------------------------------


def _truncate(mbar, M):
    return mbar if M is None else np.minimum(mbar, M)


def _G(m, mbar, alpha, c_f):
    a = (c_f + 1.0) / alpha
    return (a / (alpha + 1.0)) * ((m + 1.0) ** (alpha + 1.0) - (mbar + 1.0) ** (alpha + 1.0)) \
        - a * (mbar + 1.0) ** alpha * (m - mbar)


def _g(m, mbar, alpha, c_f):
    a = (c_f + 1.0) / alpha
    return a * ((m + 1.0) ** alpha - (mbar + 1.0) ** alpha)


def _dg(m, alpha, c_f):
    return (c_f + 1.0) * (m + 1.0) ** (alpha - 1.0)


def _check_nonneg(*arrays):
    for a in arrays:
        if np.any(np.asarray(a) < 0):
            raise ValueError("convexifier is defined for m, mbar >= 0 only")


def convexifier_G(m, mbar, alpha, c_f, M=None):
    """Nonnegative correction vanishing to second order at the reference ``mbar``."""
    _check_nonneg(m, mbar)
    return _G(np.asarray(m, float), _truncate(np.asarray(mbar, float), M), alpha, c_f)


def convexifier_g(m, mbar, alpha, c_f, M=None):
    """Derivative of :func:`convexifier_G` in ``m``."""
    _check_nonneg(m, mbar)
    return _g(np.asarray(m, float), _truncate(np.asarray(mbar, float), M), alpha, c_f)


# -- penalisation ----------------------------------------------------------------------


def penalized_L(spec: ModelSpec, q, eta: float, N: int | None = None):
    q = np.asarray(q, dtype=float)
    N = q.shape[-1] if N is None else N
    return PenalizedHamiltonian(spec.hamiltonian, eta, N).L(q)


def penalized_H(spec: ModelSpec, p, eta: float, N: int | None = None, check: bool = True):
    """``H_eta(p)``; with ``check`` the sandwich ``-L(0) <= H_eta <= H`` is enforced."""
    p = np.asarray(p, dtype=float)
    N = p.shape[-1] if N is None else N
    val = PenalizedHamiltonian(spec.hamiltonian, eta, N).H(p)
    if check:
        L0 = float(spec.hamiltonian.L(np.zeros(N)))
        upper = spec.hamiltonian.H(p)
        slack = 1e-9 * (1.0 + np.abs(upper))
        if np.any(val < -L0 - slack) or np.any(val > upper + slack):
            raise ArithmeticError("penalised Hamiltonian left the band -L(0) <= H_eta <= H")
    return val


# -- regimes ----------------------------------------------------------------------------


class Regime(enum.Enum):
    CLASSICAL = "classical"
    WEAK = "weak"
    CLASSICAL_PENALIZED = "classical-penalized"
    SHORT_TIME_ONLY = "short-time-only"
    OUT_OF_SCOPE = "out-of-scope"


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    subcritical: bool


def _rational(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    r = Fraction(x).limit_denominator(1000)
    return r if abs(float(r) - x) < 1e-9 else Fraction(x)


def classify_regime(spec_or_exponents, N: int) -> RegimeReport:
    """Existence regime for ``(gamma', alpha)`` in dimension ``N``.

    Accepts a :class:`ModelSpec` or a ``(gamma_conj, alpha)`` pair; rational
    inputs are compared exactly so that boundary cases are classified
    deterministically.
    """
    if isinstance(spec_or_exponents, ModelSpec):
        gc, alpha, smooth = spec_or_exponents.gamma_conj, spec_or_exponents.alpha, spec_or_exponents.smooth
    else:
        (gc, alpha), smooth = spec_or_exponents, True
    gc, alpha = _rational(gc), _rational(alpha)
    if not gc > 1 or not alpha > 0 or N < 1:
        raise ValueError(f"need gamma' > 1, alpha > 0, N >= 1; got {gc}, {alpha}, {N}")
    subcritical = alpha < gc / N
    if not subcritical:
        regime = Regime.SHORT_TIME_ONLY if smooth else Regime.OUT_OF_SCOPE
    elif gc > N + 2:
        regime = Regime.CLASSICAL
    elif gc > 2 and alpha < (gc - 2) / (N + 2 - gc):
        regime = Regime.CLASSICAL_PENALIZED
    else:
        regime = Regime.WEAK
    return RegimeReport(regime, bool(subcritical))
