"""Off-policy constrained learning on the product belief MDP.

The loop keeps an episode store of product transitions, an empirical model of
belief transitions keyed by rounded beliefs, and two alpha-vector families
(reward and Büchi surrogate). Actions are drawn epsilon-greedily from the safe
set, i.e. actions whose Büchi Q-value reaches the safety threshold.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import pomdp
from .errors import InconsistentRecord, NoSafeAction, NonConvergence
from .product import (
    ProductAction, ProductState, available_actions, initial_state, is_buchi,
    product_step,
)
from .valueiter import (
    DEFAULT_SAFE_THRESHOLD, AlphaSetFamily, Constraint, Sample, WitnessSet,
    _empirical_vector, backup_many, buchi_terms, eval_q, extract_policy,
    fallback_actions, greedy, init_buchi_family, init_reward_family, prune_family,
    raw_value, reward_terms, safe_actions,
)

log = logging.getLogger(__name__)

__all__ = [
    "LearnerConfig", "TransitionRecord", "EpisodeStore", "EmpiricalModel",
    "safe_actions", "choose_action", "record_transition", "learn", "Learner",
    "LearnResult", "evaluate_policy",
]


@dataclass
class LearnerConfig:
    epsilon: float = 0.1
    gamma_b: float = 0.99
    safe_threshold: float = DEFAULT_SAFE_THRESHOLD
    samples_per_update: int = 1
    max_steps: int = 100_000
    seed: int = 0
    pruning: str = "lp"            # "lp" | "point" | "store" | "none"
    lp_cap: int = 30
    exploit: str = "greedy"        # "greedy" | "uniform"
    strict_safety: bool = False
    constrain_reward: bool = True
    restart_prob: float = 1.0
    replay_every: int = 100
    tol: float = 1e-6
    min_steps: int = 0
    form: str = "projected"
    eps_label: float = 0.0
    key_digits: int = pomdp.KEY_DIGITS

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if not 0.0 < self.gamma_b < 1.0:
            raise ValueError("gamma_b must lie in (0, 1)")
        if not 0.0 < self.safe_threshold <= 1.0:
            raise ValueError("safe_threshold must lie in (0, 1]")
        if self.samples_per_update < 1 or self.replay_every < 1:
            raise ValueError("samples_per_update and replay_every must be positive")
        if self.pruning not in ("lp", "point", "store", "none"):
            raise ValueError(f"unknown pruning mode {self.pruning!r}")
        if self.exploit not in ("greedy", "uniform"):
            raise ValueError(f"unknown exploit mode {self.exploit!r}")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- store ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransitionRecord:
    step: int
    source: ProductState
    action: ProductAction
    observation: int
    target: ProductState
    explored: bool = False
    fallback: bool = False
    allowed: tuple = ()

    def to_dict(self):
        return {
            "step": self.step,
            "source": {"belief": self.source.belief.tolist(), "q": self.source.aut_state},
            "action": self.action.to_dict(),
            "observation": self.observation,
            "target": {"belief": self.target.belief.tolist(), "q": self.target.aut_state},
            "explored": self.explored,
            "fallback": self.fallback,
            "allowed": [a.to_dict() for a in self.allowed],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["step"],
            ProductState(d["source"]["belief"], d["source"]["q"]),
            ProductAction.from_dict(d["action"]),
            d["observation"],
            ProductState(d["target"]["belief"], d["target"]["q"]),
            d["explored"], d["fallback"],
            tuple(ProductAction.from_dict(a) for a in d["allowed"]),
        )


class EpisodeStore:
    """Append-only transition log with an index from (belief key, q) to positions."""

    def __init__(self, key_digits=pomdp.KEY_DIGITS):
        self.key_digits = key_digits
        self.records = []
        self.index = {}
        self.states = {}      # (belief key, q) -> representative ProductState, insertion order

    def key(self, ps):
        return (pomdp.belief_key(ps.belief, self.key_digits), ps.aut_state)

    def remember(self, ps):
        self.states.setdefault(self.key(ps), ps)

    def append(self, rec):
        self.index.setdefault(self.key(rec.source), []).append(len(self.records))
        self.records.append(rec)
        self.remember(rec.source)
        self.remember(rec.target)

    def __len__(self):
        return len(self.records)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")

    @classmethod
    def read_jsonl(cls, path, key_digits=pomdp.KEY_DIGITS):
        store = cls(key_digits)
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    store.append(TransitionRecord.from_dict(json.loads(line)))
        return store


class EmpiricalModel:
    """Counts of sampled successors per (belief key, base action)."""

    def __init__(self, key_digits=pomdp.KEY_DIGITS):
        self.key_digits = key_digits
        self.counts = {}      # (bkey, action) -> {(obs, succ key): count}
        self.totals = {}
        self.reps = {}        # succ key -> belief
        self.sources = {}     # bkey -> belief

    def add(self, b, action, o, b_next):
        bkey = pomdp.belief_key(b, self.key_digits)
        skey = pomdp.belief_key(b_next, self.key_digits)
        self.sources.setdefault(bkey, np.asarray(b, dtype=float))
        self.reps.setdefault(skey, np.asarray(b_next, dtype=float))
        row = self.counts.setdefault((bkey, action), {})
        row[(o, skey)] = row.get((o, skey), 0) + 1
        self.totals[(bkey, action)] = self.totals.get((bkey, action), 0) + 1

    def total(self, bkey, action):
        return self.totals.get((bkey, action), 0)

    def distribution(self, bkey, action):
        """Estimated T_D(b, a, .) as {successor key: probability}."""
        n = self.total(bkey, action)
        out = {}
        for (o, skey), c in self.counts.get((bkey, action), {}).items():
            out[skey] = out.get(skey, 0) + c
        return {k: c / n for k, c in out.items()}

    def samples(self, bkey, action):
        row = self.counts.get((bkey, action), {})
        samples = [Sample(o, self.reps[skey]) for (o, skey) in row]
        return samples, np.array(list(row.values()), dtype=float)

    def to_dict(self):
        return {
            "counts": [
                {"source": list(bk), "action": a, "obs": o, "succ": list(sk), "count": c}
                for (bk, a), row in self.counts.items() for (o, sk), c in row.items()
            ],
            "reps": [{"key": list(k), "belief": v.tolist()} for k, v in self.reps.items()],
            "sources": [{"key": list(k), "belief": v.tolist()} for k, v in self.sources.items()],
        }

    @classmethod
    def from_dict(cls, d, key_digits=pomdp.KEY_DIGITS):
        emp = cls(key_digits)
        emp.reps = {tuple(e["key"]): np.array(e["belief"]) for e in d["reps"]}
        emp.sources = {tuple(e["key"]): np.array(e["belief"]) for e in d["sources"]}
        for e in d["counts"]:
            k = (tuple(e["source"]), e["action"])
            emp.counts.setdefault(k, {})[(e["obs"], tuple(e["succ"]))] = e["count"]
            emp.totals[k] = emp.totals.get(k, 0) + e["count"]
        return emp


def replay_record(model, aut, aps, rec, eps_label=0.0):
    """Recompute a stored transition's successor from its source."""
    o = None if rec.action.is_epsilon else rec.observation
    return product_step(model, aut, aps, rec.source, rec.action, o, eps_label)


def record_transition(store, empirical, rec, model=None, aut=None, aps=None, eps_label=0.0):
    """Append ``rec`` to the store and count it; with a model, check it is reproducible."""
    if model is not None:
        try:
            again = replay_record(model, aut, aps, rec, eps_label)
        except Exception as exc:
            raise InconsistentRecord(f"record {rec.step} cannot be replayed: {exc}") from exc
        if again != rec.target:
            raise InconsistentRecord(f"record {rec.step}: stored successor does not match replay")
    store.append(rec)
    if not rec.action.is_epsilon:
        empirical.add(rec.source.belief, rec.action.name, rec.observation, rec.target.belief)
    return store, empirical


# -- action choice ----------------------------------------------------------------

def _choose(safe, all_actions, epsilon, rng, scores=None, strict=False):
    if not all_actions:
        raise ValueError("action list is empty")
    if rng.random() < epsilon:
        return all_actions[int(rng.integers(len(all_actions)))], True
    if not safe:
        if strict:
            raise NoSafeAction("safe action set is empty")
        safe = all_actions
    if scores is None:
        return safe[int(rng.integers(len(safe)))], False
    best = max(range(len(safe)), key=lambda i: (scores[i], -i))
    return safe[best], False


def choose_action(safe, all_actions, epsilon, rng, scores=None, strict=True):
    """Epsilon-greedy over the safe set: with probability epsilon any action uniformly,
    otherwise a safe action (uniform, or the first maximizer of ``scores``)."""
    return _choose(safe, all_actions, epsilon, rng, scores, strict)[0]


# -- learning loop ----------------------------------------------------------------

@dataclass
class LearnResult:
    fam_r: AlphaSetFamily
    fam_p: AlphaSetFamily
    store: EpisodeStore
    empirical: EmpiricalModel
    steps: int
    residual: float
    converged: bool
    metrics: list = field(default_factory=list)


class Learner:
    """Resumable state of one learning run; ``run`` advances it."""

    def __init__(self, model, aut, aps, config=None):
        self.model, self.aut, self.aps = model, aut, aps
        self.cfg = config or LearnerConfig()
        self.rng = np.random.Generator(np.random.PCG64(self.cfg.seed))
        self.fam_r = init_reward_family(model, aut).bind(aut, aps, self.cfg.eps_label)
        self.fam_p = init_buchi_family(model, aut).bind(aut, aps, self.cfg.eps_label)
        self.store = EpisodeStore(self.cfg.key_digits)
        self.empirical = EmpiricalModel(self.cfg.key_digits)
        self.current = initial_state(model, aut)
        self.hidden = pomdp.HiddenState.sample(model, self.current.belief, self.rng)
        self.store.remember(self.current)
        self.steps = 0
        self.residual = float("inf")
        self.converged = False
        self.metrics = []
        self._support = {}         # belief key -> integer owner id for vector replacement
        self._last_values = None

    # vectors learned at a support belief replace that belief's previous vector
    # owner 0 is reserved for the initial bounds
    def _owner(self, bkey):
        return self._support.setdefault(bkey, len(self._support) + 1)

    def _put(self, fam, q, a, vec, owner, tag):
        fam.keep_rows(q, a, np.flatnonzero(fam.provenance(q, a) != owner))
        fam.add(q, a, vec, owner, tag)

    def _update(self, ps, a):
        cfg, model, aut, aps = self.cfg, self.model, self.aut, self.aps
        bkey = pomdp.belief_key(ps.belief, cfg.key_digits)
        owner = self._owner(bkey)
        q = ps.aut_state
        gain, disc = buchi_terms(model, aut, q, cfg.gamma_b)
        constraint = Constraint(self.fam_p, cfg.safe_threshold) if cfg.constrain_reward else None
        if a.is_epsilon:
            vp, tp = backup_many(self.fam_p, model, aut, aps, q, a, ps.belief,
                                 reward_vec=gain, discount=disc, eps_label=cfg.eps_label)
            self._put(self.fam_p, q, a, vp[0], owner, tp[0])
            vr, tr = backup_many(self.fam_r, model, aut, aps, q, a, ps.belief, reward_vec=None,
                                 discount=None, constraint=constraint, eps_label=cfg.eps_label)
            self._put(self.fam_r, q, a, vr[0], owner, tr[0])
            return
        samples, weights = self._samples_at(ps.belief, bkey, a)
        if not samples:
            return
        vp, tag = _empirical_vector(self.fam_p, model, aut, aps, q, a, ps.belief, samples,
                                    weights, gain, disc, cfg.form, None, cfg.eps_label)
        self._put(self.fam_p, q, a, vp, owner, tag)
        r, g = reward_terms(model, a)
        vr, tag = _empirical_vector(self.fam_r, model, aut, aps, q, a, ps.belief, samples,
                                    weights, r, g, cfg.form, constraint, cfg.eps_label)
        self._put(self.fam_r, q, a, vr, owner, tag)

    def _samples_at(self, b, bkey, a):
        """Counted observations for the key of ``b``, with posteriors recomputed from ``b``.

        Beliefs sharing a rounded key differ slightly, so the stored successors
        of another member of the key are not exact successors of ``b``.
        """
        samples, weights = self.empirical.samples(bkey, a.name)
        out, w = [], []
        for smp, c in zip(samples, weights):
            lik = pomdp.observation_likelihood(self.model, b, a.name, smp.observation)
            if lik > pomdp.LIKELIHOOD_FLOOR:
                out.append(Sample(smp.observation,
                                  pomdp.belief_update(self.model, b, a.name, smp.observation)))
                w.append(c)
        return out, np.array(w)

    def _witnesses(self):
        return WitnessSet(np.array([ps.belief for ps in self.store.states.values()]))

    def _prune(self):
        mode = self.cfg.pruning
        if mode == "none":
            return
        W = self._witnesses()
        if mode == "store":
            prune_family(self.fam_r, "point", W)
            prune_family(self.fam_p, "point", W)
        else:
            prune_family(self.fam_r, mode, W, self.cfg.lp_cap)
            prune_family(self.fam_p, mode, W, self.cfg.lp_cap)

    def _tracked(self):
        keys = list(self.store.states)
        vals = np.array([[raw_value(self.fam_r, ps.belief, ps.aut_state),
                          raw_value(self.fam_p, ps.belief, ps.aut_state)]
                         for ps in self.store.states.values()])
        return keys, vals

    def replay_sweep(self):
        """Back up every visited product state under every action with data, then prune."""
        for ps in list(self.store.states.values()):
            for a in available_actions(self.model, self.aut, ps):
                self._update(ps, a)
        self._prune()
        keys, vals = self._tracked()
        res_r = res_p = float("inf")
        if self._last_values is not None:
            old_keys, old_vals = self._last_values
            m = len(old_keys)  # states are only ever appended
            if m:
                diff = np.abs(vals[:m] - old_vals)
                res_r, res_p = float(diff[:, 0].max()), float(diff[:, 1].max())
            if len(keys) > m:
                res_r = res_p = float("inf")
        self._last_values = (keys, vals)
        acts = available_actions(self.model, self.aut, self.current)
        self.metrics.append({
            "step": self.steps, "residual_r": res_r, "residual_p": res_p,
            "size_r": self.fam_r.size(), "size_p": self.fam_p.size(),
            "safe_size": len(safe_actions(self.fam_p, self.current, acts, self.cfg.safe_threshold)),
        })
        self.residual = max(res_r, res_p)
        return self.residual

    def step_once(self):
        cfg, model, aut, aps = self.cfg, self.model, self.aut, self.aps
        ps = self.current
        acts = available_actions(model, aut, ps)
        safe = safe_actions(self.fam_p, ps, acts, cfg.safe_threshold)
        fallback = False
        if not safe:
            if cfg.strict_safety:
                raise NoSafeAction(f"no safe action at {ps!r}")
            safe = fallback_actions(self.fam_p, ps, acts)
            fallback = True
            log.debug("step %d: empty safe set at %r, falling back to max-Q_p actions",
                      self.steps, ps)
        scores = [eval_q(self.fam_r, ps, a) for a in safe] if cfg.exploit == "greedy" else None
        a, explored = _choose(safe, acts, cfg.epsilon, self.rng, scores)

        if a.is_epsilon:
            succ = product_step(model, aut, aps, ps, a)
            record_transition(self.store, self.empirical, TransitionRecord(
                self.steps, ps, a, None, succ, explored, fallback, tuple(safe)))
            nxt_hidden = self.hidden
        else:
            succ, nxt_hidden = None, None
            for i in range(cfg.samples_per_update):
                hidden = self.hidden if i == 0 else \
                    pomdp.HiddenState.sample(model, ps.belief, self.rng)
                hidden, o = pomdp.simulate_step(model, hidden, a.name)
                target = product_step(model, aut, aps, ps, a, o, cfg.eps_label)
                record_transition(self.store, self.empirical, TransitionRecord(
                    self.steps, ps, a, o, target, explored, fallback, tuple(safe)))
                if i == 0:
                    succ, nxt_hidden = target, hidden
        self._update(ps, a)
        self.steps += 1

        if self.rng.random() < cfg.restart_prob:
            states = list(self.store.states.values())
            self.current = states[int(self.rng.integers(len(states)))]
            self.hidden = pomdp.HiddenState.sample(model, self.current.belief, self.rng)
        else:
            self.current, self.hidden = succ, nxt_hidden

    def run(self, max_steps=None):
        """Advance until convergence or until ``max_steps`` total steps have been taken."""
        budget = self.cfg.max_steps if max_steps is None else max_steps
        while self.steps < budget and not self.converged:
            self.step_once()
            if self.steps % self.cfg.replay_every == 0:
                res = self.replay_sweep()
                if res < self.cfg.tol and self.steps >= self.cfg.min_steps:
                    self.converged = True
        return self.result()

    def result(self):
        return LearnResult(self.fam_r, self.fam_p, self.store, self.empirical, self.steps,
                           self.residual, self.converged, list(self.metrics))

    # -- checkpointing --

    def state_dict(self):
        return {
            "config": asdict(self.cfg),
            "steps": self.steps,
            "residual": self.residual,
            "converged": self.converged,
            "rng": self.rng.bit_generator.state,
            "current": {"belief": self.current.belief.tolist(), "q": self.current.aut_state},
            "hidden": self.hidden.current,
            "fam_r": self.fam_r.to_dict(),
            "fam_p": self.fam_p.to_dict(),
            "empirical": self.empirical.to_dict(),
            "support": [{"key": list(k), "id": v} for k, v in self._support.items()],
            "visited": [{"belief": ps.belief.tolist(), "q": ps.aut_state}
                        for ps in self.store.states.values()],
            "last_values": None if self._last_values is None else {
                "keys": [[list(k[0]), k[1]] for k in self._last_values[0]],
                "values": self._last_values[1].tolist()},
            "metrics": self.metrics,
        }

    @classmethod
    def from_state(cls, model, aut, aps, state, records, config=None):
        cfg = config or LearnerConfig.from_dict(state["config"])
        self = cls(model, aut, aps, cfg)
        self.steps = state["steps"]
        self.residual = state["residual"]
        self.converged = state["converged"]
        self.rng.bit_generator.state = state["rng"]
        self.current = ProductState(state["current"]["belief"], state["current"]["q"])
        self.hidden = pomdp.HiddenState(state["hidden"], self.rng)
        self.fam_r = AlphaSetFamily.from_dict(state["fam_r"]).bind(aut, aps, cfg.eps_label)
        self.fam_p = AlphaSetFamily.from_dict(state["fam_p"]).bind(aut, aps, cfg.eps_label)
        self.empirical = EmpiricalModel.from_dict(state["empirical"], cfg.key_digits)
        self._support = {tuple(e["key"]): e["id"] for e in state["support"]}
        self.store = EpisodeStore(cfg.key_digits)
        for v in state["visited"]:
            self.store.remember(ProductState(v["belief"], v["q"]))
        for rec in records:
            self.store.records.append(rec)
            self.store.index.setdefault(self.store.key(rec.source), []).append(
                len(self.store.records) - 1)
        lv = state["last_values"]
        self._last_values = None if lv is None else (
            [(tuple(k[0]), k[1]) for k in lv["keys"]], np.array(lv["values"]).reshape(-1, 2))
        self.metrics = list(state["metrics"])
        return self

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.store.write_jsonl(directory / "store.jsonl")
        (directory / "checkpoint.json").write_text(json.dumps(self.state_dict()))

    @classmethod
    def load(cls, model, aut, aps, directory, config=None):
        directory = Path(directory)
        state = json.loads((directory / "checkpoint.json").read_text())
        records = EpisodeStore.read_jsonl(directory / "store.jsonl").records
        return cls.from_state(model, aut, aps, state, records, config)


def learn(model, aut, aps, config=None):
    """Run the learning loop to convergence or budget.

    Returns a ``LearnResult``; raises ``NonConvergence`` (with the result
    attached) when the step budget runs out first.
    """
    learner = Learner(model, aut, aps, config)
    result = learner.run()
    if not result.converged:
        raise NonConvergence(f"learning stopped after {result.steps} steps",
                             result.residual, result)
    return result


# -- evaluation ----------------------------------------------------------------------

def _policy_action(model, aut, fam_r, fam_p, ps, threshold, eps_run, max_eps):
    acts = available_actions(model, aut, ps)
    if eps_run >= max_eps:
        acts = [a for a in acts if not a.is_epsilon]
    safe = safe_actions(fam_p, ps, acts, threshold)
    if safe:
        return greedy(fam_r, ps, safe)[0], False
    return greedy(fam_r, ps, fallback_actions(fam_p, ps, acts))[0], True


def _windows_ok(visits, horizon, window):
    if horizon < window:
        return bool(visits) or horizon == 0
    hits = np.zeros(horizon + 1, dtype=int)
    for t in visits:
        if t < horizon:
            hits[t + 1] = 1
    csum = np.cumsum(hits)
    return all(csum[t + window] - csum[t] > 0 for t in range(horizon - window + 1))


def _simulate_run(model, aut, aps, fam_r, fam_p, horizon, rng, threshold, window, eps_label):
    ps = initial_state(model, aut)
    hidden = pomdp.HiddenState.sample(model, ps.belief, rng)
    total, disc, t, eps_run, fallbacks = 0.0, 1.0, 0, 0, 0
    visits = []
    max_eps = len(aut.states)
    while t < horizon:
        if is_buchi(ps, aut):
            visits.append(t)
        a, fb = _policy_action(model, aut, fam_r, fam_p, ps, threshold, eps_run, max_eps)
        fallbacks += fb
        if a.is_epsilon:
            ps = product_step(model, aut, aps, ps, a)
            eps_run += 1
            continue
        eps_run = 0
        total += disc * model.reward[hidden.current, model.action_index(a.name)]
        disc *= model.discount
        hidden, o = pomdp.simulate_step(model, hidden, a.name)
        ps = product_step(model, aut, aps, ps, a, o, eps_label)
        t += 1
    return {"discounted_reward": float(total), "visits": len(set(visits)),
            "window_ok": _windows_ok(sorted(set(visits)), horizon, window),
            "fallbacks": fallbacks}


def evaluate_policy(model, aut, aps, fam_r, fam_p, runs, horizon, seed=0, window=50,
                    threshold=DEFAULT_SAFE_THRESHOLD, threads=1, eps_label=0.0):
    """Monte-Carlo evaluation of the greedy safe policy.

    Each run gets its own random stream spawned from ``seed``, so results do not
    depend on ``threads``. A run passes the window check when every ``window``
    consecutive time steps contain a visit to an accepting product state.
    """
    if horizon <= 0 or runs <= 0:
        return {"runs": [], "aggregate": {"runs": 0, "horizon": horizon, "mean_reward": 0.0,
                                          "window_rate": None, "window": window}}
    streams = [np.random.Generator(np.random.PCG64(s))
               for s in np.random.SeedSequence(seed).spawn(runs)]

    def one(i):
        out = _simulate_run(model, aut, aps, fam_r, fam_p, horizon, streams[i], threshold,
                            window, eps_label)
        out["run"] = i
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(runs)))
    else:
        rows = [one(i) for i in range(runs)]
    rewards = np.array([r["discounted_reward"] for r in rows])
    return {
        "runs": rows,
        "aggregate": {
            "runs": runs, "horizon": horizon, "window": window,
            "mean_reward": float(rewards.mean()),
            "stderr_reward": float(rewards.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0,
            "window_rate": float(np.mean([r["window_ok"] for r in rows])),
        },
    }
