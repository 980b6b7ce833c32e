"""Regenerate the frozen diagnostics corpus (run from the repository root).

Ten energy-minimisation outputs on the N=1, gamma'=4, f(m)=m model with
cosine-bump initial data, five at T=0.05 and five at T=2. The density
estimate constant depends on the horizon, so the corpus spans a short one
and the long one used by the two-equilibria comparison. Each run stops
after at most 40 outer steps; the estimate concerns any feasible pair, and
every iterate is feasible. The test suite only reads the result.
"""

import os

from torusmfg import Grid, ModelSpec, Problem, cosine_bump, minimize_energy, uniform
from torusmfg.diagnostics import Corpus, density_integral, fit_gn2, save_run, write_manifest

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "corpus")
SPEC = ModelSpec.power(4 / 3, 1.0)


def main():
    entries = []
    for T, n_t in ((0.05, 40), (2.0, 100)):
        for amp in (0.1, 0.3, 0.5, 0.7, 0.9):
            g = Grid(1, 32, T, n_t)
            rep = minimize_energy(Problem(g, SPEC, cosine_bump(g, amp), uniform(g, 0.0)), max_outer=40, certify=False)
            entries.append(save_run(HERE, f"T{T:g}_a{amp:g}", rep.pair))
    corpus = Corpus(entries, {}, HERE)
    pairs = corpus.pairs()
    c1 = max(density_integral(p, SPEC.alpha) + p.kinetic_energy(SPEC.gamma_conj) for p in pairs)
    corpus.constants = {"model.gamma_conj": 4.0, "model.alpha": 1.0, "gn2_C": fit_gn2(pairs, SPEC), "c1": c1}
    write_manifest(os.path.join(HERE, "manifest.txt"), corpus)


if __name__ == "__main__":
    main()
