"""
Model-based synthesis under F G safe1 | F G goal2
=================================================

The bundled three-state model offers a risky action with higher reward and a
careful one. The constraint asks the belief to settle either where safe1 holds
or where goal2 holds. We solve the product of the belief MDP with the LDBA and
compare the best reward with and without the constraint.
"""

from importlib.resources import files

import numpy as np

import pomdp_iltl as pi
from pomdp_iltl import logic, product, valueiter as vi

data = files("pomdp_iltl") / "data"
model = pi.load_pomdp(data / "guarded.json")
table = logic.load_ap_table(data / "guarded_aps.json", model.states)
formula = pi.parse_formula("F G safe1 | F G goal2", table)
kind, names = pi.template_for_formula(formula)
aut = pi.template_automaton(kind, names)
aps = [table[n] for n in aut.ap_names]
print(f"formula {pi.to_text(formula)!r} -> {kind} automaton with {len(aut.states)} states")

states, _ = product.enumerate_product(model, aut, aps)
print(f"reachable product states: {len(states)}")

cfg = pi.SolverConfig(gamma_b=0.9, constrain_reward=True)
res = pi.solve_pbvi(model, aut, aps, np.eye(3), cfg)
start = product.initial_state(model, aut)
print(f"solved in {res.iterations} sweeps, residual {res.residual:.1e}")
print(f"unconstrained V_r = {pi.raw_value(res.fam_r, start.belief, 'q0'):.4f}")
print(f"constrained   V_r = {vi.constrained_value(res.fam_r, res.fam_p, start):.4f}")

# walk the policy from the initial product state
rng = np.random.default_rng(0)
ps, hidden = start, pi.HiddenState.sample(model, start.belief, rng)
for t in range(6):
    act = pi.extract_policy(res.fam_r, res.fam_p, model, aut, ps)
    if act.is_epsilon:
        ps = pi.product_step(model, aut, aps, ps, act)
        print(f"t={t}  jump {act} -> automaton state {ps.aut_state}")
        continue
    hidden, o = pi.simulate_step(model, hidden, act.name)
    ps = pi.product_step(model, aut, aps, ps, act, o)
    print(f"t={t}  {act.name:8s} observe {model.observations[o]}  now {ps!r}")
