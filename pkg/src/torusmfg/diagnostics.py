"""A-priori estimates as run-time monitors.

The interpolation exponents are computed exactly (as fractions) whenever
the model parameters are rational. The density estimate

    (int_Q m^(alpha+1))^delta <= C (E_kin + 1)

and the resulting lower bound on the energy hold with constants that are
only known to exist. Here they are fitted once, on a frozen corpus of
solver outputs, and asserted with headroom afterwards.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import model as _model
from .fokker_planck import FlowPair
from .grid import read_field, write_field
from .variational import energy

__all__ = [
    "ExponentTable",
    "exponents",
    "density_integral",
    "gn2_ratio",
    "GN2Check",
    "check_gn2",
    "fit_gn2",
    "LowerBoundCheck",
    "check_lower_bound",
    "CorpusEntry",
    "Corpus",
    "read_manifest",
    "write_manifest",
    "save_run",
]


@dataclass(frozen=True)
class ExponentTable:
    """Exponents of the Gagliardo-Nirenberg step, exact when the inputs are rational.

    ``r`` solves ``1/r = 1/g' + (1 - 1/g')/p``; ``eta_gn = r (N+1) / N``;
    ``theta`` solves ``1/(alpha+1) = (1 - theta) + theta/eta_gn``; and
    ``delta = (1 + g'(N+1)/(theta N) - g') / (alpha + 1)``.
    """

    N: int
    gamma_conj: Fraction | float
    alpha: Fraction | float
    p: Fraction | float
    r: Fraction | float
    eta_gn: Fraction | float
    theta: Fraction | float
    delta: Fraction | float

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("gamma_conj", "alpha", "p", "r", "eta_gn", "theta", "delta")}


def exponents(spec_or_pair, N: int, p=None) -> ExponentTable:
    """Exponent table for a :class:`~torusmfg.model.ModelSpec` or a ``(gamma', alpha)`` pair.

    Raises ``ValueError`` unless ``alpha < gamma'/N``.
    """
    if isinstance(spec_or_pair, _model.ModelSpec):
        gc, alpha = spec_or_pair.gamma_conj, spec_or_pair.alpha
    else:
        gc, alpha = spec_or_pair
    gc, alpha = _model._rational(gc), _model._rational(alpha)
    if not (alpha > 0 and gc > 1):
        raise ValueError(f"need alpha > 0 and gamma' > 1, got {alpha}, {gc}")
    if not alpha < gc / N:
        raise ValueError(f"supercritical: alpha={alpha} >= gamma'/N={gc / N}")
    p = alpha + 1 if p is None else _model._rational(p)
    one = Fraction(1)
    r = one / (one / gc + (one - one / gc) / p)
    eta = r * (N + 1) / N
    theta = (one - one / (alpha + 1)) / (one - one / eta)
    delta = (1 + gc * (N + 1) / (theta * N) - gc) / (alpha + 1)
    return ExponentTable(N, gc, alpha, p, r, eta, theta, delta)


# -- density estimate ------------------------------------------------------------------


def density_integral(pair: FlowPair, alpha: float) -> float:
    """``int_Q m^(alpha+1)`` with the cell rule used by the energy."""
    mc = np.maximum(pair.m_cell, 0.0)
    return float(pair.grid.integrate_cells(mc ** (alpha + 1.0)))


def gn2_ratio(pair: FlowPair, spec, table: ExponentTable | None = None) -> float:
    """``(int m^(alpha+1))^delta / (E_kin + 1)``."""
    table = table or exponents(spec, pair.grid.N)
    I = density_integral(pair, spec.alpha)
    return I ** float(table.delta) / (pair.kinetic_energy(spec.gamma_conj) + 1.0)


@dataclass(frozen=True)
class GN2Check:
    ratio: float
    fitted_C: float
    headroom: float

    @property
    def bound(self) -> float:
        return self.fitted_C * (1.0 + self.headroom)

    @property
    def margin(self) -> float:
        return self.bound - self.ratio

    @property
    def passed(self) -> bool:
        return math.isfinite(self.ratio) and self.ratio <= self.bound


def check_gn2(pair: FlowPair, spec, fitted_C: float, table=None, headroom: float = 0.1) -> GN2Check:
    """Compare the density ratio with a fitted constant plus ``headroom``."""
    return GN2Check(gn2_ratio(pair, spec, table), float(fitted_C), headroom)


def fit_gn2(pairs, spec, table=None) -> float:
    """Smallest constant bounding the ratio over ``pairs``."""
    return max(gn2_ratio(p, spec, table) for p in pairs)


@dataclass(frozen=True)
class LowerBoundCheck:
    """Energy against the two lower bounds of the a-priori chain.

    ``structural`` uses only the growth constants:
    ``E_kin/C_L - C_L T - C_F (I + T) - |u_T|_inf``. ``bound`` then replaces
    ``E_kin`` through the density estimate with the fitted constant.
    """

    energy: float
    structural: float
    bound: float

    @property
    def margin(self) -> float:
        return self.energy - self.bound

    @property
    def passed(self) -> bool:
        return self.energy >= self.structural - 1e-12 and self.energy >= self.bound - 1e-12


def check_lower_bound(pair: FlowPair, spec, u_T, fitted_C: float, table=None) -> LowerBoundCheck:
    """Check ``E >= I^delta/(C_L C) - C_F I - |u_T|_inf - const`` for a fitted ``C``."""
    g = pair.grid
    table = table or exponents(spec, g.N)
    C_L, C_F = float(spec.C_L), float(spec.C_F)
    I = density_integral(pair, spec.alpha)
    kin = pair.kinetic_energy(spec.gamma_conj)
    tail = C_L * g.T + C_F * (I + g.T) + float(np.max(np.abs(u_T)))
    structural = kin / C_L - tail
    bound = (I ** float(table.delta) / fitted_C - 1.0) / C_L - tail
    return LowerBoundCheck(energy(pair, spec, u_T).total, structural, bound)


# -- corpus ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusEntry:
    """One solver output: density snapshot plus one snapshot per flux component."""

    name: str
    m_path: str
    w_paths: tuple

    def load(self, root: str = "") -> FlowPair:
        grid, m = read_field(os.path.join(root, self.m_path))
        w = np.stack([read_field(os.path.join(root, p))[1] for p in self.w_paths], axis=-1)
        return FlowPair(grid, m, w)


@dataclass
class Corpus:
    """Frozen snapshots with the constants fitted on them."""

    entries: list
    constants: dict
    root: str = ""

    def pairs(self):
        return [e.load(self.root) for e in self.entries]


def write_manifest(path, corpus: Corpus) -> None:
    """Plain text: ``key = value`` constants, then ``run name m_path w_path[,w_path...]`` per entry."""
    lines = ["# torusmfg corpus manifest"]
    lines += [f"{k} = {v!r}" for k, v in corpus.constants.items()]
    lines += [f"run {e.name} {e.m_path} {','.join(e.w_paths)}" for e in corpus.entries]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> Corpus:
    entries, consts = [], {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("run "):
                parts = line.split()
                if len(parts) != 4:
                    raise ValueError(f"{path}:{ln}: expected 'run name m_path w_paths'")
                entries.append(CorpusEntry(parts[1], parts[2], tuple(parts[3].split(","))))
            elif "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                consts[k] = float(v)
            else:
                raise ValueError(f"{path}:{ln}: cannot parse {raw.strip()!r}")
    return Corpus(entries, consts, os.path.dirname(os.path.abspath(path)))


def save_run(directory, name: str, pair: FlowPair) -> CorpusEntry:
    """Write one pair's snapshots under ``directory`` and return its entry."""
    os.makedirs(directory, exist_ok=True)
    g = pair.grid
    mp = f"{name}.m.fmfg"
    write_field(os.path.join(directory, mp), g, pair.m)
    wps = []
    for i in range(g.N):
        wp = f"{name}.w{i}.fmfg"
        write_field(os.path.join(directory, wp), g, pair.w[..., i])
        wps.append(wp)
    return CorpusEntry(name, mp, tuple(wps))
