"""
Point-based value iteration on Tiger
====================================

Listening costs 1 and is right 85% of the time; opening the wrong door costs
100. The value over the belief simplex is convex and piecewise linear, and the
policy listens until the belief is lopsided enough.
"""

from importlib.resources import files

import numpy as np

import pomdp_iltl as pi
from pomdp_iltl import valueiter as vi
from pomdp_iltl.product import ProductState

model = pi.load_pomdp(files("pomdp_iltl") / "data" / "tiger.json")
aut = pi.universal_automaton()

grid = np.linspace(0.0, 1.0, 41)
beliefs = np.column_stack([grid, 1 - grid])
res = pi.solve_pbvi(model, aut, [], beliefs, pi.SolverConfig(tol=1e-6))
print(f"{res.iterations} sweeps, {res.fam_r.size()} alpha vectors kept")

sure = vi.AlphaSetFamily(2)
for a in model.actions:
    sure.add("q0", pi.ProductAction.base(a), [1.0, 1.0])

for p in (0.0, 0.05, 0.2, 0.5, 0.8, 0.95, 1.0):
    ps = ProductState([p, 1 - p], "q0")
    act = pi.extract_policy(res.fam_r, sure, model, aut, ps)
    print(f"b(tiger-left)={p:4.2f}  V={pi.eval_v(res.fam_r, ps):8.3f}  act={act.name}")
