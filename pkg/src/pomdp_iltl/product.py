"""Product of the belief MDP with an LDBA.

A product state pairs a belief with an automaton state. Base actions advance
the POMDP and move the automaton on the label of the *source* belief; epsilon
actions jump the automaton and leave the belief untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import automata, logic, pomdp
from .errors import EpsilonUnavailable


@dataclass(frozen=True, order=True)
class ProductAction:
    kind: str   # "base" | "eps"
    name: str

    @classmethod
    def base(cls, name):
        return cls("base", name)

    @classmethod
    def epsilon(cls, name):
        return cls("eps", name)

    @property
    def is_epsilon(self):
        return self.kind == "eps"

    def __str__(self):
        return self.name if self.kind == "base" else f"<{self.name}>"

    def to_dict(self):
        return {"kind": self.kind, "name": self.name}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["name"])


@dataclass(frozen=True, eq=False)
class ProductState:
    belief: np.ndarray
    aut_state: str

    def __post_init__(self):
        b = np.array(self.belief, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "belief", b)

    def __eq__(self, other):
        if not isinstance(other, ProductState):
            return NotImplemented
        return (self.aut_state == other.aut_state
                and pomdp.beliefs_equal(self.belief, other.belief))

    def __hash__(self):
        return hash((self.aut_state, pomdp.belief_key(self.belief)))

    def key(self):
        return (pomdp.belief_key(self.belief), self.aut_state)

    def __repr__(self):
        probs = ", ".join(f"{x:.4g}" for x in self.belief)
        return f"ProductState(({probs}), {self.aut_state!r})"


def initial_state(model, aut):
    return ProductState(model.initial, aut.initial)


def base_actions(model):
    return [ProductAction.base(a) for a in model.actions]


def available_actions(model, aut, ps):
    """All base actions, then one epsilon action per epsilon move leaving ``ps.aut_state``."""
    acts = base_actions(model)
    acts += [ProductAction.epsilon(mv.name) for mv in aut.epsilon_from(ps.aut_state)]
    return acts


def label_of(belief, aps, aut, eps_label=0.0):
    """L(b) restricted to the automaton alphabet."""
    used = [f for f in aps if f.name in aut.ap_names]
    return logic.label(belief, used, eps_label)


def label_key(belief, aps, aut, eps_label=0.0):
    """Canonical string for L(b), e.g. ``"{goal2,safe1}"``."""
    return "{" + ",".join(sorted(label_of(belief, aps, aut, eps_label))) + "}"


def next_aut_state(aut, aps, q, belief, eps_label=0.0):
    return automata.step(aut, q, label_of(belief, aps, aut, eps_label))


def product_step(model, aut, aps, ps, act, o=None, eps_label=0.0):
    """Successor product state for a base action with observation ``o`` or for an epsilon move."""
    if act.is_epsilon:
        if o is not None:
            raise ValueError("epsilon moves consume no observation")
        target = automata.epsilon_target(aut, ps.aut_state, act.name)
        if target is None:
            raise EpsilonUnavailable(f"{act.name!r} is not available at {ps.aut_state!r}")
        return ProductState(ps.belief, target)
    if o is None:
        raise ValueError("base actions need an observation")
    b_next = pomdp.belief_update(model, ps.belief, act.name, o)
    q_next = next_aut_state(aut, aps, ps.aut_state, ps.belief, eps_label)
    return ProductState(b_next, q_next)


def product_successors(model, aut, aps, ps, act, eps_label=0.0):
    """Distribution over successor product states as a list of (prob, obs, state).

    Observations leading to the same posterior are merged (first observation kept).
    """
    if act.is_epsilon:
        return [(1.0, None, product_step(model, aut, aps, ps, act))]
    probs = pomdp.observation_distribution(model, ps.belief, act.name)
    out = []
    for o, p in enumerate(probs):
        if p <= pomdp.LIKELIHOOD_FLOOR:
            continue
        succ = product_step(model, aut, aps, ps, act, o, eps_label)
        for i, (p_old, o_old, s_old) in enumerate(out):
            if s_old == succ:
                out[i] = (p_old + float(p), o_old, s_old)
                break
        else:
            out.append((float(p), o, succ))
    return out


def product_reward(model, ps, act):
    """Belief reward for base actions; epsilon moves are free."""
    if act.is_epsilon:
        return 0.0
    return pomdp.belief_reward(model, ps.belief, act.name)


def is_buchi(ps, aut):
    return ps.aut_state in aut.accepting


def enumerate_product(model, aut, aps, start=None, limit=10_000, eps_label=0.0):
    """Breadth-first enumeration of reachable product states.

    Only terminates when the reachable belief set is finite (e.g. deterministic
    observations); raises ``RuntimeError`` once ``limit`` states are exceeded.
    Returns (states, edges) with edges[(i, act)] = [(prob, j), ...].
    """
    start = start or initial_state(model, aut)
    states, index = [start], {start.key(): 0}
    edges = {}
    i = 0
    while i < len(states):
        ps = states[i]
        for act in available_actions(model, aut, ps):
            row = []
            for p, _, succ in product_successors(model, aut, aps, ps, act, eps_label):
                k = succ.key()
                if k not in index:
                    if len(states) >= limit:
                        raise RuntimeError(f"more than {limit} reachable product states")
                    index[k] = len(states)
                    states.append(succ)
                row.append((p, index[k]))
            edges[(i, act)] = row
        i += 1
    return states, edges
