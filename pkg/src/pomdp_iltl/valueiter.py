"""Alpha-vector value functions on the product belief MDP.

Two families are maintained side by side:

* the reward family, representing Q_r((b, q), a) = max_{theta in Theta_{q,a}} theta . b
* the Büchi family, representing Q_p with the same structure.

The Büchi family is solved through the discounted surrogate: a step taken from
an accepting automaton state earns ``1 - gamma_b``; every base step is
discounted by ``gamma_b``; epsilon moves are free and undiscounted. Values of
accepting automaton states are *reported* as exactly 1 by :func:`eval_v`
(``clamp``); backups read the raw vectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import pomdp
from .errors import EmptySet, InconsistentSamples, NoSafeAction, NonConvergence
from .product import (
    ProductAction, ProductState, available_actions, label_key, next_aut_state,
)

log = logging.getLogger(__name__)

DEFAULT_SAFE_THRESHOLD = 1.0 - 1e-6
_DUP_TOL = 1e-12
_LP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class AlphaVector:
    theta: np.ndarray
    owner_q: str
    owner_a: ProductAction
    provenance: int = 0
    tag: str = ""

    def __eq__(self, other):
        if not isinstance(other, AlphaVector):
            return NotImplemented
        return (self.owner_q == other.owner_q and self.owner_a == other.owner_a
                and np.array_equal(self.theta, other.theta))

    def __hash__(self):
        return hash((self.owner_q, self.owner_a, self.theta.tobytes()))

    def value(self, b):
        return float(self.theta @ np.asarray(b, dtype=float))


class AlphaSetFamily:
    """Finite vector sets Theta_{q,a}, stored as stacked row matrices.

    A base action moves the automaton on the label of the current belief, so a
    vector backed up at ``b`` is only valid on beliefs with the same label L(b).
    Such rows carry that label as a tag (see ``label_key``); untagged rows, such
    as the initial bounds, are valid at every belief. A family with tagged rows
    must be bound to its automaton and propositions before evaluation.
    """

    def __init__(self, n_states, clamp=()):
        self.n = n_states
        self.clamp = frozenset(clamp)
        self._sets = {}
        self._prov = {}
        self._tags = {}
        self._actions = {}
        self.labeler = None

    def bind(self, aut, aps, eps_label=0.0):
        cache = {}

        def labels(beliefs):
            out = []
            for b in beliefs:
                key = b.tobytes()
                if key not in cache:
                    if len(cache) > 100_000:
                        cache.clear()
                    cache[key] = label_key(b, aps, aut, eps_label)
                out.append(cache[key])
            return np.array(out)
        self.labeler = labels
        return self

    def register(self, q, a):
        if (q, a) not in self._sets:
            self._sets[(q, a)] = np.zeros((0, self.n))
            self._prov[(q, a)] = np.zeros(0, dtype=int)
            self._tags[(q, a)] = np.zeros(0, dtype=str)
            self._actions.setdefault(q, []).append(a)

    def automaton_states(self):
        return list(self._actions)

    def actions(self, q):
        return list(self._actions.get(q, ()))

    def keys(self):
        return list(self._sets)

    def vectors(self, q, a):
        try:
            return self._sets[(q, a)]
        except KeyError:
            raise EmptySet(f"no vector set registered for ({q!r}, {a})") from None

    def provenance(self, q, a):
        return self._prov[(q, a)]

    def tags(self, q, a):
        return self._tags[(q, a)]

    def add(self, q, a, theta, provenance=0, tags=""):
        self.register(q, a)
        theta = np.asarray(theta, dtype=float).reshape(-1, self.n)
        k = theta.shape[0]
        self._sets[(q, a)] = np.vstack([self._sets[(q, a)], theta])
        self._prov[(q, a)] = np.concatenate(
            [self._prov[(q, a)], np.broadcast_to(np.asarray(provenance, dtype=int), (k,))])
        self._tags[(q, a)] = np.concatenate(
            [self._tags[(q, a)], np.broadcast_to(np.asarray(tags, dtype=str), (k,))])

    def set(self, q, a, matrix, provenance, tags=""):
        self.register(q, a)
        M = np.asarray(matrix, dtype=float).reshape(-1, self.n)
        self._sets[(q, a)] = M
        self._prov[(q, a)] = np.array(np.broadcast_to(np.asarray(provenance, dtype=int),
                                                      (M.shape[0],)))
        self._tags[(q, a)] = np.array(np.broadcast_to(np.asarray(tags, dtype=str), (M.shape[0],)))

    def keep_rows(self, q, a, rows):
        self.set(q, a, self._sets[(q, a)][rows], self._prov[(q, a)][rows],
                 self._tags[(q, a)][rows])

    def alpha_vectors(self, q, a):
        return [AlphaVector(row.copy(), q, a, int(p), str(t))
                for row, p, t in zip(self._sets[(q, a)], self._prov[(q, a)], self._tags[(q, a)])]

    def stacked(self, q):
        """Theta_q: the union over actions, with the owning action index and tag of each row."""
        acts = self.actions(q)
        mats = [self._sets[(q, a)] for a in acts]
        if not mats:
            return np.zeros((0, self.n)), np.zeros(0, dtype=int), np.zeros(0, dtype=str), acts
        owners = np.concatenate([np.full(m.shape[0], i, dtype=int) for i, m in enumerate(mats)])
        tags = np.concatenate([self._tags[(q, a)] for a in acts])
        return np.vstack(mats), owners, tags, acts

    def valid(self, beliefs, tags):
        """Mask (N, k): which rows with ``tags`` apply at each belief."""
        tagged = tags != ""
        if not tagged.any():
            return np.ones((beliefs.shape[0], len(tags)), dtype=bool)
        if self.labeler is None:
            raise ValueError("family holds label-specific vectors; bind it to an automaton first")
        return ~tagged[None, :] | (tags[None, :] == self.labeler(beliefs)[:, None])

    def values(self, q, a, beliefs):
        """theta . b for every row of Theta_{q,a}; inapplicable rows give -inf."""
        beliefs = np.atleast_2d(beliefs)
        M = self.vectors(q, a)
        if M.shape[0] == 0:
            raise EmptySet(f"empty alpha-vector set at ({q!r}, {a})")
        return np.where(self.valid(beliefs, self._tags[(q, a)]), beliefs @ M.T, -np.inf)

    def size(self):
        return sum(m.shape[0] for m in self._sets.values())

    def copy(self):
        out = AlphaSetFamily(self.n, self.clamp)
        out._sets = {k: v.copy() for k, v in self._sets.items()}
        out._prov = {k: v.copy() for k, v in self._prov.items()}
        out._tags = {k: v.copy() for k, v in self._tags.items()}
        out._actions = {k: list(v) for k, v in self._actions.items()}
        out.labeler = self.labeler
        return out

    def to_dict(self):
        return {
            "n_states": self.n,
            "clamp": sorted(self.clamp),
            "sets": [
                {"q": q, "action": a.to_dict(),
                 "vectors": [[float(x) for x in row] for row in self._sets[(q, a)]],
                 "provenance": [int(p) for p in self._prov[(q, a)]],
                 "tags": [str(t) for t in self._tags[(q, a)]]}
                for (q, a) in self._sets
            ],
        }

    @classmethod
    def from_dict(cls, data):
        fam = cls(int(data["n_states"]), data.get("clamp", ()))
        for entry in data["sets"]:
            a = ProductAction.from_dict(entry["action"])
            vecs = np.array(entry["vectors"], dtype=float).reshape(-1, fam.n)
            prov = entry.get("provenance", [0] * vecs.shape[0])
            fam.set(entry["q"], a, vecs, prov, entry.get("tags", ""))
        return fam

    def equals(self, other):
        if self.keys() != other.keys() or self.clamp != other.clamp:
            return False
        return all(np.array_equal(self._sets[k], other._sets[k])
                   and np.array_equal(self._tags[k], other._tags[k]) for k in self._sets)


@dataclass(frozen=True)
class WitnessSet:
    beliefs: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.array(self.beliefs, dtype=float))
        keep = []
        for i, w in enumerate(W):
            if not pomdp.is_belief(w):
                raise ValueError(f"witness {i} is not a belief")
            if all(not pomdp.beliefs_equal(w, W[j]) for j in keep):
                keep.append(i)
        object.__setattr__(self, "beliefs", W[keep])


# -- evaluation --------------------------------------------------------------------

def _q_value(fam, q, a, belief):
    v = float(np.max(fam.values(q, a, np.asarray(belief, dtype=float))))
    if v == -np.inf:
        raise EmptySet(f"no vector of ({q!r}, {a}) applies at this belief")
    return v


def eval_q(fam, ps, a):
    """max over the applicable vectors of Theta_{q,a} of theta . b."""
    return _q_value(fam, ps.aut_state, a, ps.belief)


def raw_value(fam, belief, q, actions=None):
    acts = fam.actions(q) if actions is None else actions
    if not acts:
        raise EmptySet(f"no actions registered at {q!r}")
    return max(_q_value(fam, q, a, belief) for a in acts)


def eval_v(fam, ps, actions=None):
    """max over actions of eval_q; reported as 1 at clamped (accepting) automaton states."""
    if ps.aut_state in fam.clamp:
        return 1.0
    return raw_value(fam, ps.belief, ps.aut_state, actions)


def greedy(fam, ps, actions):
    """(action, value) maximizing eval_q over ``actions``; ties go to the earliest."""
    best, best_v = None, -np.inf
    for a in actions:
        v = eval_q(fam, ps, a)
        if v > best_v:
            best, best_v = a, v
    if best is None:
        raise EmptySet("no actions to choose from")
    return best, best_v


def safe_actions(fam_p, ps, actions, threshold=DEFAULT_SAFE_THRESHOLD):
    """Actions whose Büchi Q-value reaches ``threshold``; may be empty."""
    return [a for a in actions if eval_q(fam_p, ps, a) >= threshold]


def fallback_actions(fam_p, ps, actions):
    """Actions of maximal Büchi Q-value (used when no action is safe)."""
    vals = [eval_q(fam_p, ps, a) for a in actions]
    top = max(vals)
    return [a for a, v in zip(actions, vals) if v >= top - _DUP_TOL]


def constrained_value(fam_r, fam_p, ps, threshold=DEFAULT_SAFE_THRESHOLD):
    """Best reward value over the safe actions at ``ps`` (max-Q_p actions if none is safe)."""
    acts = fam_r.actions(ps.aut_state)
    allowed = safe_actions(fam_p, ps, acts, threshold) or fallback_actions(fam_p, ps, acts)
    return greedy(fam_r, ps, allowed)[1]


def extract_policy(fam_r, fam_p, model, aut, ps, threshold=DEFAULT_SAFE_THRESHOLD):
    """Greedy reward action among the safe actions at ``ps``."""
    acts = available_actions(model, aut, ps)
    safe = safe_actions(fam_p, ps, acts, threshold)
    if not safe:
        raise NoSafeAction(f"no action reaches Büchi value {threshold} at {ps!r}")
    return greedy(fam_r, ps, safe)[0]


# -- initialization ----------------------------------------------------------------

def init_reward_family(model, aut, value=None):
    """Pessimistic constant vectors min r / (1 - gamma) for every (q, a)."""
    if value is None:
        value = float(model.reward.min()) / (1.0 - model.discount)
    fam = AlphaSetFamily(model.n_states)
    for q in aut.states:
        for a in available_actions(model, aut, ProductState(model.initial, q)):
            fam.add(q, a, np.full(model.n_states, value))
    return fam


def init_buchi_family(model, aut, clamp=True):
    fam = AlphaSetFamily(model.n_states, aut.accepting if clamp else ())
    for q in aut.states:
        for a in available_actions(model, aut, ProductState(model.initial, q)):
            fam.add(q, a, np.zeros(model.n_states))
    return fam


# -- backups -------------------------------------------------------------------------

@dataclass
class Constraint:
    """Restrict successor maximization to actions safe under ``fam_p``."""
    fam_p: AlphaSetFamily
    threshold: float = DEFAULT_SAFE_THRESHOLD


def _select(fam, q, beliefs, constraint=None):
    """Row-wise argmax vector of Theta_q at each belief (first index on ties), with its tag."""
    M, owners, tags, acts = fam.stacked(q)
    if M.shape[0] == 0:
        raise EmptySet(f"Theta_{q} is empty")
    vals = np.where(fam.valid(beliefs, tags), beliefs @ M.T, -np.inf)
    if constraint is not None:
        allowed = _allowed_mask(constraint, q, beliefs, acts)
        vals = np.where(allowed[:, owners], vals, -np.inf)
    best = np.argmax(vals, axis=1)
    return M[best], tags[best]


def _allowed_mask(constraint, q, beliefs, acts):
    qp = np.column_stack([np.max(constraint.fam_p.values(q, a, beliefs), axis=1)
                          for a in acts])
    safe = qp >= constraint.threshold
    top = qp >= qp.max(axis=1, keepdims=True) - _DUP_TOL
    none = ~safe.any(axis=1)
    safe[none] = top[none]
    return safe


def _base_backup(model, fam, q_next, beliefs, k, reward_vec, discount, constraint=None):
    """Point-based backup of base action ``k`` at each row of ``beliefs`` (all with successor q_next)."""
    Ta = model.transition[:, k, :]
    Z = model.observation_model
    pred = beliefs @ Ta
    G = np.zeros_like(beliefs)
    fill = None
    for o in range(model.n_observations):
        unnorm = pred * Z[:, o]
        lik = unnorm.sum(axis=1)
        live = lik > pomdp.LIKELIHOOD_FLOOR
        if live.any():
            post = unnorm[live] / lik[live, None]
            star = _select(fam, q_next, post, constraint)[0]
            G[live] += (star * Z[:, o]) @ Ta.T
        if not live.all():
            # impossible at b but not elsewhere: any vector of Theta_q' keeps the bound sound
            if fill is None:
                fill = _select(fam, q_next, pred, constraint)[0]
            G[~live] += (fill[~live] * Z[:, o]) @ Ta.T
    return reward_vec[None, :] + discount * G


def _labels_next(model, aut, aps, q, beliefs, eps_label):
    return [next_aut_state(aut, aps, q, b, eps_label) for b in beliefs]


def backup_many(fam, model, aut, aps, q, a, beliefs, *, reward_vec, discount,
                constraint=None, eps_label=0.0):
    """Backed-up vectors for (q, a) at each row of ``beliefs``.

    Returns (vectors of shape (N, n), tags): a base-action vector is tagged with
    the label of the belief it was computed at; an epsilon backup copies a row of
    the target state's set and keeps that row's tag.
    """
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    if a.is_epsilon:
        target = next(mv.target for mv in aut.epsilon_from(q) if mv.name == a.name)
        rows, tags = _select(fam, target, beliefs, constraint)
        return rows.copy(), tags.copy()
    k = model.action_index(a.name)
    out = np.empty_like(beliefs)
    q_next = _labels_next(model, aut, aps, q, beliefs, eps_label)
    for qn in dict.fromkeys(q_next):
        rows = np.array([i for i, x in enumerate(q_next) if x == qn])
        out[rows] = _base_backup(model, fam, qn, beliefs[rows], k, reward_vec, discount, constraint)
    return out, np.array([label_key(b, aps, aut, eps_label) for b in beliefs])


def reward_terms(model, a):
    return model.reward[:, model.action_index(a.name)], model.discount


def buchi_terms(model, aut, q, gamma_b):
    gain = (1.0 - gamma_b) if q in aut.accepting else 0.0
    return np.full(model.n_states, gain), gamma_b


def backup_exact(fam, model, aut, aps, q, a, b, *, constraint=None, eps_label=0.0, provenance=0):
    """Point-based reward backup at belief ``b``; tight at ``b``, a lower bound elsewhere."""
    r, g = reward_terms(model, a) if not a.is_epsilon else (None, None)
    vecs, tags = backup_many(fam, model, aut, aps, q, a, b, reward_vec=r, discount=g,
                             constraint=constraint, eps_label=eps_label)
    return AlphaVector(vecs[0], q, a, provenance, str(tags[0]))


def backup_p(fam_p, model, aut, aps, q, a, b, *, gamma_b=0.99, samples=None, weights=None,
             form="projected", eps_label=0.0, provenance=0):
    """Büchi-surrogate backup, exact (``samples=None``) or from sampled successors."""
    gain, disc = buchi_terms(model, aut, q, gamma_b)
    if samples is not None and not a.is_epsilon:
        vec, tag = _empirical_vector(fam_p, model, aut, aps, q, a, b, samples, weights,
                                     gain, disc, form, None, eps_label)
        return AlphaVector(vec, q, a, provenance, tag)
    vecs, tags = backup_many(fam_p, model, aut, aps, q, a, b, reward_vec=gain, discount=disc,
                             eps_label=eps_label)
    return AlphaVector(vecs[0], q, a, provenance, str(tags[0]))


@dataclass(frozen=True, eq=False)
class Sample:
    """One sampled successor: the observation and the posterior it produced."""
    observation: int
    belief: np.ndarray
    aut_state: str = None


def _empirical_vector(fam, model, aut, aps, q, a, b, samples, weights, reward_vec, discount,
                      form, constraint, eps_label):
    if not samples:
        raise InconsistentSamples("need at least one sample")
    b = np.asarray(b, dtype=float)
    w = np.full(len(samples), 1.0 / len(samples)) if weights is None \
        else np.asarray(weights, dtype=float) / np.sum(weights)
    q_next = next_aut_state(aut, aps, q, b, eps_label)
    k = model.action_index(a.name)
    Ta = model.transition[:, k, :]
    Z = model.observation_model
    posts = []
    for smp in samples:
        if smp.aut_state is not None and smp.aut_state != q_next:
            raise InconsistentSamples(
                f"sample automaton state {smp.aut_state!r} != delta(q, L(b)) = {q_next!r}")
        try:
            expect = pomdp.belief_update(model, b, a.name, smp.observation)
        except Exception as exc:
            raise InconsistentSamples(str(exc)) from exc
        if not pomdp.beliefs_equal(expect, smp.belief):
            raise InconsistentSamples("sampled successor is not reachable from (b, a)")
        posts.append(np.asarray(smp.belief, dtype=float))
    stars = _select(fam, q_next, np.array(posts), constraint)[0]
    if form == "literal":
        cont = w @ stars
    elif form == "projected":
        cont = np.zeros(model.n_states)
        for wi, smp, star in zip(w, samples, stars):
            lik = pomdp.observation_likelihood(model, b, a.name, smp.observation)
            cont += wi * ((star * Z[:, smp.observation]) @ Ta.T) / lik
        dead = pomdp.observation_distribution(model, b, a.name) <= pomdp.LIKELIHOOD_FLOOR
        if dead.any():
            fill = _select(fam, q_next, (b @ Ta)[None, :], constraint)[0][0]
            for o in np.flatnonzero(dead):
                cont += (fill * Z[:, o]) @ Ta.T
    else:
        raise ValueError(f"unknown form {form!r}")
    return reward_vec + discount * cont, label_key(b, aps, aut, eps_label)


def backup_empirical(fam, model, aut, aps, samples, q, a, b, *, weights=None, form="projected",
                     constraint=None, add=True, eps_label=0.0, provenance=0):
    """Reward backup from sampled successor beliefs b'_1..b'_n of (b, a).

    ``form="literal"`` returns r + (gamma/n) sum_i theta*_i. ``form="projected"``
    maps each theta*_i back through the Bayes update so that the vector's value at
    ``b`` equals r.b + (gamma/n) sum_i theta*_i . b'_i, and the result coincides
    with :func:`backup_exact` when samples are stratified by observation likelihood.
    """
    r, g = reward_terms(model, a)
    vec, tag = _empirical_vector(fam, model, aut, aps, q, a, b, samples, weights, r, g,
                                 form, constraint, eps_label)
    if add:
        fam.add(q, a, vec, provenance, tag)
    return AlphaVector(vec, q, a, provenance, tag)


# -- pruning -----------------------------------------------------------------------

def _as_matrix(theta):
    if isinstance(theta, np.ndarray):
        return np.atleast_2d(theta), None
    items = list(theta)
    if items and isinstance(items[0], AlphaVector):
        return np.array([v.theta for v in items]), items
    return np.atleast_2d(np.array(items, dtype=float)), None


def _dedupe_dominated(M):
    """Drop near-duplicates (keeping the first) and entrywise-dominated rows."""
    keep = []
    for i in range(M.shape[0]):
        if not any(np.max(np.abs(M[i] - M[j])) <= _DUP_TOL for j in keep):
            keep.append(i)
    return [i for i in keep
            if not any(j != i and np.all(M[i] <= M[j] + _DUP_TOL) for j in keep)]


def lp_keep_indices(M, tol=_LP_TOL):
    """Indices of a minimal subset of rows with the same upper envelope on the simplex."""
    M = np.atleast_2d(M)
    idx = _dedupe_dominated(M)
    n = M.shape[1]
    kept = list(idx)
    # a strict winner at a vertex or the barycenter needs no LP
    probe = np.vstack([np.eye(n), np.full((1, n), 1.0 / n)]) @ M[idx].T
    sure = set()
    for c, i in enumerate(idx):
        rest = np.delete(probe, c, axis=1)
        if rest.shape[1] == 0 or np.max(probe[:, c] - rest.max(axis=1)) > tol:
            sure.add(i)
    for i in list(idx):
        others = [j for j in kept if j != i]
        if not others or i in sure:
            continue
        D = M[others] - M[i]
        A_ub = np.hstack([D, np.ones((len(others), 1))])
        res = linprog(
            c=np.r_[np.zeros(n), -1.0], A_ub=A_ub, b_ub=np.zeros(len(others)),
            A_eq=np.r_[np.ones(n), 0.0][None, :], b_eq=[1.0],
            bounds=[(0.0, 1.0)] * n + [(None, None)], method="highs")
        if res.status == 0 and -res.fun <= tol:
            kept.remove(i)
    return kept


def pointbased_keep_indices(M, W):
    M = np.atleast_2d(M)
    W = W.beliefs if isinstance(W, WitnessSet) else np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 0:
        raise ValueError("witness set must be nonempty")
    return sorted(set(np.argmax(W @ M.T, axis=1).tolist()))


def prune_lp(theta):
    """Remove vectors that never strictly attain the maximum on the belief simplex."""
    M, items = _as_matrix(theta)
    keep = lp_keep_indices(M)
    return [items[i] for i in keep] if items is not None else M[keep]


def prune_pointbased(theta, W):
    """Keep the vectors that attain the maximum at some witness belief."""
    M, items = _as_matrix(theta)
    keep = pointbased_keep_indices(M, W)
    return [items[i] for i in keep] if items is not None else M[keep]


def _witness_matrix(W):
    return W.beliefs if isinstance(W, WitnessSet) else np.atleast_2d(np.asarray(W, dtype=float))


def prune_family(fam, mode="lp", witnesses=None, lp_cap=30):
    """Prune every Theta_{q,a} in place.

    LP pruning works per tag group. Point-based pruning keeps the applicable
    argmax at each witness plus the best untagged row, so that some vector
    applies at every belief.
    """
    if mode not in ("lp", "point", "none"):
        raise ValueError(f"unknown pruning mode {mode!r}")
    for (q, a) in fam.keys():
        M, tags = fam.vectors(q, a), fam.tags(q, a)
        if M.shape[0] <= 1 or mode == "none":
            continue
        if mode == "point" or (M.shape[0] > lp_cap and witnesses is not None):
            W = _witness_matrix(witnesses)
            keep = set(np.argmax(fam.values(q, a, W), axis=1).tolist())
            free = np.flatnonzero(tags == "")
            if free.size:
                keep |= set(free[np.argmax(W @ M[free].T, axis=1)].tolist())
            keep = sorted(keep)
        else:
            keep = sorted(int(rows[i]) for tag in dict.fromkeys(tags.tolist())
                          for rows in [np.flatnonzero(tags == tag)]
                          for i in lp_keep_indices(M[rows]))
        fam.keep_rows(q, a, keep)


# -- solver ------------------------------------------------------------------------

@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 10_000
    gamma_b: float = 0.99
    prune: str = "lp"                 # "lp" | "point" | "none"
    lp_cap: int = 30
    constrain_reward: bool = False
    safe_threshold: float = DEFAULT_SAFE_THRESHOLD
    eps_label: float = 0.0
    clamp_accepting: bool = True

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SolveResult:
    fam_r: AlphaSetFamily
    fam_p: AlphaSetFamily
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def _tracked_values(fam, beliefs, states):
    return np.array([[raw_value(fam, b, q) for b in beliefs] for q in states])


def solve_pbvi(model, aut, aps, belief_set, config=None):
    """Point-based value iteration for both families over a fixed belief set.

    Each sweep backs up every (belief, q, a) from a snapshot of the previous
    sweep; the unconstrained reward and Büchi families accumulate vectors
    (union, then prune), the constrained reward family is rebuilt each sweep.
    Raises ``NonConvergence`` carrying the best-so-far result.
    """
    cfg = config or SolverConfig()
    B = np.atleast_2d(np.asarray(belief_set, dtype=float))
    if B.shape[0] == 0:
        raise ValueError("belief_set must be nonempty")
    W = WitnessSet(B)
    fam_r = init_reward_family(model, aut).bind(aut, aps, cfg.eps_label)
    fam_p = init_buchi_family(model, aut, clamp=cfg.clamp_accepting).bind(aut, aps, cfg.eps_label)
    states = list(aut.states)
    prev = np.stack([_tracked_values(fam_r, B, states), _tracked_values(fam_p, B, states)])
    history = []
    residual = np.inf
    for it in range(1, cfg.max_iter + 1):
        snap_p = fam_p.copy()
        for q in states:
            gain, disc = buchi_terms(model, aut, q, cfg.gamma_b)
            for a in snap_p.actions(q):
                new, tags = backup_many(snap_p, model, aut, aps, q, a, B, reward_vec=gain,
                                        discount=disc, eps_label=cfg.eps_label)
                fam_p.add(q, a, new, it, tags)
        prune_family(fam_p, cfg.prune, W, cfg.lp_cap)

        snap_r = fam_r.copy()
        constraint = Constraint(fam_p, cfg.safe_threshold) if cfg.constrain_reward else None
        for q in states:
            for a in snap_r.actions(q):
                r, g = reward_terms(model, a) if not a.is_epsilon else (None, None)
                new, tags = backup_many(snap_r, model, aut, aps, q, a, B, reward_vec=r,
                                        discount=g, constraint=constraint,
                                        eps_label=cfg.eps_label)
                if cfg.constrain_reward:
                    # rebuild from the untagged initial bound plus this sweep's vectors
                    fam_r.keep_rows(q, a, np.flatnonzero(fam_r.provenance(q, a) == 0))
                fam_r.add(q, a, new, it, tags)
        prune_family(fam_r, cfg.prune, W, cfg.lp_cap)

        cur = np.stack([_tracked_values(fam_r, B, states), _tracked_values(fam_p, B, states)])
        res_r = float(np.max(np.abs(cur[0] - prev[0])))
        res_p = float(np.max(np.abs(cur[1] - prev[1])))
        residual = max(res_r, res_p)
        history.append({"iteration": it, "residual_r": res_r, "residual_p": res_p,
                        "size_r": fam_r.size(), "size_p": fam_p.size()})
        prev = cur
        if residual < cfg.tol:
            log.debug("solve_pbvi converged after %d sweeps (residual %.3e)", it, residual)
            return SolveResult(fam_r, fam_p, it, residual, True, history)
    result = SolveResult(fam_r, fam_p, cfg.max_iter, residual, False, history)
    raise NonConvergence(f"solve_pbvi did not converge in {cfg.max_iter} sweeps",
                         residual, result)


# -- export ------------------------------------------------------------------------

def value_export(fam, objective, iteration, residual):
    d = fam.to_dict()
    d.update({"objective": objective, "iteration": int(iteration), "residual": float(residual)})
    return d


def policy_export(fam_r, fam_p, threshold=DEFAULT_SAFE_THRESHOLD):
    """Per automaton state, the pruned Theta_q of both families with owning actions."""
    out = {"n_states": fam_r.n, "threshold": threshold, "clamp": sorted(fam_p.clamp),
           "automaton_states": {}}
    for q in fam_r.automaton_states():
        entry = {}
        for name, fam in (("reward", fam_r), ("buchi", fam_p)):
            entry[name] = [
                {"action": a.to_dict(), "theta": [float(x) for x in row], "tag": str(t)}
                for a in fam.actions(q) for row, t in zip(fam.vectors(q, a), fam.tags(q, a))
            ]
            entry[name + "_actions"] = [a.to_dict() for a in fam.actions(q)]
        out["automaton_states"][q] = entry
    return out


def policy_import(data, aut=None, aps=None, eps_label=0.0):
    """Inverse of :func:`policy_export`: returns (fam_r, fam_p, threshold).

    Pass the automaton and propositions to get families ready for evaluation.
    """
    n = int(data["n_states"])
    fam_r = AlphaSetFamily(n)
    fam_p = AlphaSetFamily(n, data.get("clamp", ()))
    for q, entry in data["automaton_states"].items():
        for name, fam in (("reward", fam_r), ("buchi", fam_p)):
            for a in entry[name + "_actions"]:
                fam.register(q, ProductAction.from_dict(a))
            for item in entry[name]:
                fam.add(q, ProductAction.from_dict(item["action"]), item["theta"],
                        tags=item.get("tag", ""))
    if aut is not None:
        fam_r.bind(aut, aps or [], eps_label)
        fam_p.bind(aut, aps or [], eps_label)
    return fam_r, fam_p, float(data["threshold"])
