"""
Belief filtering and belief labels
==================================

A two-state system that never moves, watched through a noisy sensor. Each
reading sharpens the belief, and an affine proposition over the belief decides
when we are confident enough to say "goal".
"""

import numpy as np

import pomdp_iltl as pi
from pomdp_iltl import logic

# identity dynamics, sensor reports o1 with probability 0.8 in s1 and 0.4 in s2
model = pi.Pomdp(
    states=["s1", "s2"], actions=["wait"], observations=["o1", "o2"],
    transition=np.stack([np.eye(2)], axis=1),
    observation_model=[[0.8, 0.2], [0.4, 0.6]],
    initial=[0.5, 0.5], reward=[[0.0], [0.0]], discount=0.9,
)

# goal holds once b(s2) exceeds 0.8
goal = logic.indicator("goal", ["s2"], model.states, shift=-0.8)

b = model.initial
for o in ["o2", "o2", "o1", "o2", "o2", "o2"]:
    lik = pi.observation_likelihood(model, b, "wait", o)
    b = pi.belief_update(model, b, "wait", o)
    print(f"saw {o} (p={lik:.3f})  belief {np.round(b, 4)}  label {sorted(pi.label(b, [goal]))}")

# the Bayes filter refuses observations that cannot happen
certain = pi.Pomdp(["s1", "s2"], ["wait"], ["o1", "o2"], np.stack([np.eye(2)], axis=1),
                   np.eye(2), [1.0, 0.0], [[0.0], [0.0]], 0.9)
try:
    pi.belief_update(certain, [1.0, 0.0], "wait", "o2")
except pi.ZeroLikelihoodObservation as exc:
    print("rejected:", exc)
