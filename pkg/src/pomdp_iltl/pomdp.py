"""Finite POMDP model, exact Bayesian belief filter, and hidden-state simulation.

Arrays are indexed by the declared orderings of the model:

* ``transition[s, a, s']``  -- probability of moving from ``s`` to ``s'`` under ``a``
* ``observation_model[s', o]`` -- probability of emitting ``o`` in ``s'``
* ``reward[s, a]``
* ``initial[s]``

Beliefs are plain 1-d float arrays over the state ordering.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ModelValidationError, ZeroLikelihoodObservation

PROB_TOL = 1e-9
BELIEF_TOL = 1e-9
LIKELIHOOD_FLOOR = 1e-12
KEY_DIGITS = 6

_MODEL_FIELDS = {
    "states", "actions", "observations", "transition",
    "observation_model", "initial", "reward", "discount",
}


@dataclass(frozen=True)
class Violation:
    where: str
    message: str
    magnitude: float = 0.0

    def __str__(self):
        return f"{self.where}: {self.message} (magnitude {self.magnitude:.3g})"


@dataclass(frozen=True, eq=False)
class Pomdp:
    states: tuple
    actions: tuple
    observations: tuple
    transition: np.ndarray
    observation_model: np.ndarray
    initial: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        for name in ("states", "actions", "observations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("transition", "observation_model", "initial", "reward"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))
        n, m, l = len(self.states), len(self.actions), len(self.observations)
        expected = {
            "transition": (n, m, n),
            "observation_model": (n, l),
            "initial": (n,),
            "reward": (n, m),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise FormatError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_actions(self):
        return len(self.actions)

    @property
    def n_observations(self):
        return len(self.observations)

    def state_index(self, s):
        return s if isinstance(s, (int, np.integer)) else self.states.index(s)

    def action_index(self, a):
        return a if isinstance(a, (int, np.integer)) else self.actions.index(a)

    def observation_index(self, o):
        return o if isinstance(o, (int, np.integer)) else self.observations.index(o)

    def to_dict(self):
        def dist(row, names):
            return {names[j]: float(p) for j, p in enumerate(row) if p != 0.0}

        return {
            "states": list(self.states),
            "actions": list(self.actions),
            "observations": list(self.observations),
            "transition": {
                s: {a: dist(self.transition[i, k], self.states)
                    for k, a in enumerate(self.actions)}
                for i, s in enumerate(self.states)
            },
            "observation_model": {
                s: dist(self.observation_model[i], self.observations)
                for i, s in enumerate(self.states)
            },
            "initial": dist(self.initial, self.states),
            "reward": {
                s: {a: float(self.reward[i, k]) for k, a in enumerate(self.actions)}
                for i, s in enumerate(self.states)
            },
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise FormatError("model must be a JSON object")
        unknown = set(data) - _MODEL_FIELDS
        if unknown:
            raise FormatError(f"unknown model fields: {sorted(unknown)}")
        missing = _MODEL_FIELDS - set(data)
        if missing:
            raise FormatError(f"missing model fields: {sorted(missing)}")
        states = _id_list(data["states"], "states")
        actions = _id_list(data["actions"], "actions")
        observations = _id_list(data["observations"], "observations")
        s_ix = {s: i for i, s in enumerate(states)}
        a_ix = {a: i for i, a in enumerate(actions)}
        o_ix = {o: i for i, o in enumerate(observations)}
        n, m, l = len(states), len(actions), len(observations)

        T = np.zeros((n, m, n))
        for s, per_action in _mapping(data["transition"], "transition").items():
            for a, row in _mapping(per_action, f"transition[{s}]").items():
                for s2, p in _mapping(row, f"transition[{s}][{a}]").items():
                    T[_lookup(s_ix, s, "state"), _lookup(a_ix, a, "action"),
                      _lookup(s_ix, s2, "state")] = _number(p)
        Z = np.zeros((n, l))
        for s, row in _mapping(data["observation_model"], "observation_model").items():
            for o, p in _mapping(row, f"observation_model[{s}]").items():
                Z[_lookup(s_ix, s, "state"), _lookup(o_ix, o, "observation")] = _number(p)
        p0 = np.zeros(n)
        for s, p in _mapping(data["initial"], "initial").items():
            p0[_lookup(s_ix, s, "state")] = _number(p)
        R = np.zeros((n, m))
        for s, per_action in _mapping(data["reward"], "reward").items():
            for a, r in _mapping(per_action, f"reward[{s}]").items():
                R[_lookup(s_ix, s, "state"), _lookup(a_ix, a, "action")] = _number(r)
        return cls(states, actions, observations, T, Z, p0, R, _number(data["discount"]))


def _id_list(value, name):
    if not isinstance(value, list) or not value:
        raise FormatError(f"{name} must be a nonempty list")
    if any(not isinstance(v, str) for v in value):
        raise FormatError(f"{name} entries must be strings")
    if len(set(value)) != len(value):
        raise FormatError(f"{name} contains duplicates")
    return value


def _mapping(value, where):
    if not isinstance(value, dict):
        raise FormatError(f"{where} must be an object")
    return value


def _lookup(index, key, kind):
    try:
        return index[key]
    except KeyError:
        raise FormatError(f"unknown {kind} {key!r}") from None


def _number(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"expected a number, got {value!r}")
    return float(value)


def load_pomdp(path, validate=True):
    """Read a model file; raise ``ModelValidationError`` if ``validate`` and invalid."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    model = Pomdp.from_dict(data)
    if validate:
        violations = validate_model(model)
        if violations:
            raise ModelValidationError(violations)
    return model


def save_pomdp(model, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


def validate_model(model):
    """Return every violated model invariant; an empty list means the model is valid."""
    out = []
    S, A, O = model.states, model.actions, model.observations
    T, Z, p0 = model.transition, model.observation_model, model.initial

    for i, s in enumerate(S):
        for k, a in enumerate(A):
            row = T[i, k]
            for j in np.flatnonzero((row < 0) | (row > 1) | ~np.isfinite(row)):
                out.append(Violation(f"transition[{s}][{a}][{S[j]}]",
                                     "probability outside [0, 1]", float(row[j])))
            total = row.sum()
            if abs(total - 1.0) > PROB_TOL:
                out.append(Violation(f"transition[{s}][{a}]",
                                     f"row sums to {total:.12g}", abs(total - 1.0)))
    for i, s in enumerate(S):
        row = Z[i]
        for j in np.flatnonzero((row < 0) | (row > 1) | ~np.isfinite(row)):
            out.append(Violation(f"observation_model[{s}][{O[j]}]",
                                 "probability outside [0, 1]", float(row[j])))
        total = row.sum()
        if abs(total - 1.0) > PROB_TOL:
            out.append(Violation(f"observation_model[{s}]",
                                 f"row sums to {total:.12g}", abs(total - 1.0)))
    for j in np.flatnonzero((p0 < 0) | (p0 > 1) | ~np.isfinite(p0)):
        out.append(Violation(f"initial[{S[j]}]", "probability outside [0, 1]", float(p0[j])))
    if abs(p0.sum() - 1.0) > PROB_TOL:
        out.append(Violation("initial", f"sums to {p0.sum():.12g}", abs(p0.sum() - 1.0)))
    if not np.all(np.isfinite(model.reward)):
        out.append(Violation("reward", "non-finite entries", float("nan")))
    if not 0.0 < model.discount < 1.0:
        out.append(Violation("discount", "must lie in (0, 1)", model.discount))
    return out


# -- beliefs -----------------------------------------------------------------

def is_belief(b, n=None, tol=BELIEF_TOL):
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or (n is not None and b.shape[0] != n):
        return False
    return bool(np.all(b >= -tol) and abs(b.sum() - 1.0) <= tol)


def beliefs_equal(b1, b2, tol=BELIEF_TOL):
    """Max-norm equality; the notion of "same belief" used everywhere."""
    return bool(np.max(np.abs(np.asarray(b1) - np.asarray(b2))) <= tol)


def belief_key(b, digits=KEY_DIGITS):
    """Hashable key of a belief, rounded to ``digits`` decimals."""
    # + 0.0 folds -0.0 into 0.0
    return tuple(float(x) + 0.0 for x in np.round(np.asarray(b, dtype=float), digits))


def one_hot(n, i):
    b = np.zeros(n)
    b[i] = 1.0
    return b


def predicted_state(model, b, a):
    """Distribution of the next hidden state before observing: sum_s T(s,a,.) b(s)."""
    return np.asarray(b, dtype=float) @ model.transition[:, model.action_index(a), :]


def observation_likelihood(model, b, a, o):
    """P(o | b, a) = sum_{s'} Omega(s', o) sum_s T(s, a, s') b(s)."""
    pred = predicted_state(model, b, a)
    return float(pred @ model.observation_model[:, model.observation_index(o)])


def observation_distribution(model, b, a):
    return predicted_state(model, b, a) @ model.observation_model


def belief_update(model, b, a, o):
    """Bayes filter step. Raises ``ZeroLikelihoodObservation`` instead of renormalizing."""
    pred = predicted_state(model, b, a)
    unnorm = model.observation_model[:, model.observation_index(o)] * pred
    z = unnorm.sum()
    if z <= LIKELIHOOD_FLOOR:
        raise ZeroLikelihoodObservation(
            f"observation {o!r} has likelihood {z:.3g} after action {a!r}")
    return unnorm / z


def belief_reward(model, b, a):
    return float(np.asarray(b, dtype=float) @ model.reward[:, model.action_index(a)])


# -- simulation ----------------------------------------------------------------

@dataclass(frozen=True)
class HiddenState:
    """The true (unobserved) state together with the random stream that drives it.

    The generator is owned by whoever holds the ``HiddenState``; successive
    ``simulate_step`` calls advance the same stream.
    """
    current: int
    rng: np.random.Generator = field(repr=False, compare=False)

    @classmethod
    def sample(cls, model, b, rng):
        return cls(_draw(np.asarray(b, dtype=float), rng), rng)


def _draw(p, rng):
    u = rng.random()
    acc, last = 0.0, 0
    for i, x in enumerate(p.tolist()):
        acc += x
        if x > 0:
            last = i
            if u < acc:
                return i
    # cumulative sum rounded below 1
    return last


def simulate_step(model, hidden, a):
    """Sample s' ~ T(current, a, .) then o ~ Omega(s', .). Returns (HiddenState, obs index)."""
    k = model.action_index(a)
    s_next = _draw(model.transition[hidden.current, k], hidden.rng)
    o = _draw(model.observation_model[s_next], hidden.rng)
    return HiddenState(s_next, hidden.rng), o


# -- belief sets -------------------------------------------------------------

def reachable_beliefs(model, limit=200, start=None):
    """Breadth-first beliefs reachable from ``start`` (default p0), at most ``limit`` of them."""
    start = model.initial if start is None else np.asarray(start, dtype=float)
    out, seen = [start], {belief_key(start)}
    i = 0
    while i < len(out) and len(out) < limit:
        b = out[i]
        for k in range(model.n_actions):
            for o, p in enumerate(observation_distribution(model, b, k)):
                if p <= LIKELIHOOD_FLOOR:
                    continue
                b2 = belief_update(model, b, k, o)
                key = belief_key(b2)
                if key not in seen and len(out) < limit:
                    seen.add(key)
                    out.append(b2)
        i += 1
    return np.array(out)


def simplex_grid(n, resolution):
    """All beliefs over ``n`` states whose entries are multiples of 1/resolution."""
    pts = []

    def fill(prefix, left):
        if len(prefix) == n - 1:
            pts.append(prefix + [left])
            return
        for k in range(left + 1):
            fill(prefix + [k], left - k)

    fill([], resolution)
    return np.array(pts, dtype=float) / resolution
