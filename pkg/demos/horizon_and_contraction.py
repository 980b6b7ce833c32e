"""How the fixed-point iteration degrades as the horizon grows."""

import numpy as np

from torusmfg import Grid, ModelSpec
from torusmfg.picard import picard_solve
from torusmfg.problem import Problem, cosine_bump

spec = ModelSpec.power(4 / 3, 1.0)

print(f"{'T':>8} {'n_t':>6} {'status':>9} {'iters':>6} {'rate':>8}")
for T in (0.01, 0.02, 0.05, 0.1, 0.5, 2.0, 50.0):
    n_t = max(200, int(round(40 * T)))
    g = Grid(1, 64, T, n_t)
    res = picard_solve(Problem(g, spec, cosine_bump(g, 0.3), np.zeros(g.shape)))
    print(f"{T:8g} {n_t:6d} {res.status:>9} {res.iterations:6d} {res.contraction_ratio:8.3f}")
