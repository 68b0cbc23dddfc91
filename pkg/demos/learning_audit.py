"""
Learning a constrained policy from simulation
=============================================

The learner explores the guarded model, stores every product transition, and
builds both value families from empirical successor counts. Afterwards we audit
the store and evaluate the greedy safe policy by simulation.
"""

from importlib.resources import files

import pomdp_iltl as pi
from pomdp_iltl import logic, product, valueiter as vi

data = files("pomdp_iltl") / "data"
model = pi.load_pomdp(data / "guarded.json")
table = logic.load_ap_table(data / "guarded_aps.json", model.states)
aut = pi.load_ldba(data / "fg_or_fg.json")
aps = [table[n] for n in aut.ap_names]

cfg = pi.LearnerConfig(seed=0, gamma_b=0.9, max_steps=100_000, tol=1e-3, min_steps=20_000)
res = pi.learn(model, aut, aps, cfg)
start = product.initial_state(model, aut)
print(f"converged after {res.steps} steps, {len(res.store)} stored transitions")
print(f"constrained V_r at start = {vi.constrained_value(res.fam_r, res.fam_p, start):.4f}")

# every exploiting step picked from the set that was allowed at the time;
# where no action was safe (e.g. after the automaton rejected) that set is the max-Q_p actions
greedy = [r for r in res.store.records if not r.explored]
fallback = [r for r in greedy if r.fallback]
print(f"{sum(r.action in r.allowed for r in greedy)}/{len(greedy)} exploiting steps allowed, "
      f"{len(fallback)} of them from the max-Q_p fallback")

rep = pi.evaluate_policy(model, aut, aps, res.fam_r, res.fam_p, runs=200, horizon=100, seed=1)
agg = rep["aggregate"]
print(f"mean discounted reward {agg['mean_reward']:.3f} +- {agg['stderr_reward']:.3f}, "
      f"window rate {agg['window_rate']:.2f}")
