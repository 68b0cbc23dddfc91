"""Limit-deterministic Büchi automata over labels drawn from 2^AP.

A label is a ``frozenset`` of AP names. Transitions on labels are total and
deterministic; epsilon moves are named and only leave the initial component.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import networkx as nx

from . import logic
from .errors import (
    FormatError, IltlSyntaxError, InvalidRun, LdbaValidationError,
    UnknownProposition, UnsupportedPattern,
)

_LDBA_FIELDS = {"states", "aps", "initial", "accepting", "initial_component",
                "accepting_component", "transitions", "epsilon"}


def all_labels(ap_names):
    """Every subset of ``ap_names`` in a fixed order (by size, then lexicographic)."""
    names = list(ap_names)
    return [frozenset(c) for r in range(len(names) + 1)
            for c in itertools.combinations(names, r)]


@dataclass(frozen=True)
class EpsilonMove:
    source: str
    target: str
    name: str


@dataclass(frozen=True, eq=False)
class Ldba:
    states: tuple
    ap_names: tuple
    step_table: dict          # (state, frozenset label) -> state
    epsilon_moves: tuple      # EpsilonMove, in declaration order
    initial: str
    accepting: frozenset
    initial_component: frozenset
    accepting_component: frozenset

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "ap_names", tuple(self.ap_names))
        object.__setattr__(self, "epsilon_moves", tuple(self.epsilon_moves))
        for name in ("accepting", "initial_component", "accepting_component"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))

    @property
    def epsilon_table(self):
        table = {q: set() for q in self.states}
        for mv in self.epsilon_moves:
            table[mv.source].add(mv.target)
        return table

    def epsilon_from(self, q):
        return [mv for mv in self.epsilon_moves if mv.source == q]

    def restrict_label(self, lbl):
        return frozenset(lbl) & frozenset(self.ap_names)


def check_ldba(aut):
    """List every violated LDBA structural condition (empty when valid)."""
    problems = []
    Q = set(aut.states)
    if len(Q) != len(aut.states):
        problems.append("duplicate state names")
    if aut.initial not in Q:
        problems.append(f"initial state {aut.initial!r} is not a state")
    qi, qa = set(aut.initial_component), set(aut.accepting_component)
    if qi | qa != Q:
        problems.append(f"components do not cover states: missing {sorted(Q - (qi | qa))}")
    if qi & qa:
        problems.append(f"components overlap on {sorted(qi & qa)}")
    if not set(aut.accepting) <= qa:
        problems.append(f"accepting states outside the accepting component: "
                        f"{sorted(set(aut.accepting) - qa)}")
    labels = all_labels(aut.ap_names)
    for q in aut.states:
        for lbl in labels:
            succ = aut.step_table.get((q, lbl))
            if succ is None:
                problems.append(f"state {q!r} has no successor on label {sorted(lbl)}")
            elif succ not in Q:
                problems.append(f"state {q!r} steps to unknown state {succ!r}")
            elif q in qa and succ not in qa:
                problems.append(f"accepting-component state {q!r} leaves the component "
                                f"to {succ!r} on label {sorted(lbl)}")
    seen = set()
    for mv in aut.epsilon_moves:
        if mv.source not in Q or mv.target not in Q:
            problems.append(f"epsilon move {mv.name!r} references unknown states")
        if mv.source in qa:
            problems.append(f"accepting-component state {mv.source!r} has epsilon move {mv.name!r}")
        if (mv.source, mv.name) in seen:
            problems.append(f"epsilon name {mv.name!r} repeated at state {mv.source!r}")
        seen.add((mv.source, mv.name))
    return problems


def step(aut, q, lbl):
    """The unique successor of ``q`` on label ``lbl`` (APs outside the alphabet are ignored)."""
    return aut.step_table[(q, aut.restrict_label(lbl))]


def epsilon_successors(aut, q):
    return {mv.target for mv in aut.epsilon_moves if mv.source == q}


def epsilon_target(aut, q, name):
    for mv in aut.epsilon_moves:
        if mv.source == q and mv.name == name:
            return mv.target
    return None


# -- acceptance ------------------------------------------------------------------

@dataclass(frozen=True)
class LassoRun:
    prefix: tuple
    cycle: tuple

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(self.prefix))
        object.__setattr__(self, "cycle", tuple(self.cycle))


def _connected(aut, q, q2):
    if q2 in epsilon_successors(aut, q):
        return True
    return any(aut.step_table[(q, lbl)] == q2 for lbl in all_labels(aut.ap_names))


def lasso_accepted(aut, run):
    """Büchi acceptance of a prefix-plus-cycle run: some cycle state is accepting."""
    if not run.cycle:
        raise InvalidRun("cycle must be nonempty")
    states = list(run.prefix) + list(run.cycle)
    if states[0] != aut.initial:
        raise InvalidRun(f"run starts at {states[0]!r}, not the initial state {aut.initial!r}")
    pairs = list(zip(states, states[1:])) + [(run.cycle[-1], run.cycle[0])]
    for q, q2 in pairs:
        if q not in aut.states or q2 not in aut.states:
            raise InvalidRun(f"unknown state in run: {q!r} -> {q2!r}")
        if not _connected(aut, q, q2):
            raise InvalidRun(f"no transition {q!r} -> {q2!r}")
    return any(q in aut.accepting for q in run.cycle)


def word_accepted(aut, prefix_labels, cycle_labels):
    """Does the automaton accept the ultimately periodic word prefix.cycle^omega?

    Searches the product of automaton states and word positions for a reachable
    cycle through an accepting state.
    """
    word = [aut.restrict_label(l) for l in prefix_labels] + \
           [aut.restrict_label(l) for l in cycle_labels]
    p, c = len(prefix_labels), len(cycle_labels)
    if c == 0:
        raise InvalidRun("cycle must be nonempty")

    def nxt(i):
        return i + 1 if i + 1 < p + c else p

    g = nx.DiGraph()
    start = (aut.initial, 0)
    stack, seen = [start], {start}
    g.add_node(start)
    while stack:
        q, i = stack.pop()
        succs = [(aut.step_table[(q, word[i])], nxt(i))]
        succs += [(t, i) for t in epsilon_successors(aut, q)]
        for node in succs:
            g.add_edge((q, i), node)
            if node not in seen:
                seen.add(node)
                stack.append(node)
    for comp in nx.strongly_connected_components(g):
        node = next(iter(comp))
        nontrivial = len(comp) > 1 or g.has_edge(node, node)
        if nontrivial and any(q in aut.accepting for q, _ in comp):
            return True
    return False


# -- guards and files ---------------------------------------------------------

def _guard_labels(guard, ap_names):
    """Labels (subsets of ``ap_names``) satisfying a propositional guard expression."""
    if isinstance(guard, bool):
        guard = "true" if guard else "false"
    if not isinstance(guard, str):
        raise FormatError(f"guard must be a string, got {guard!r}")
    table = {name: name for name in ap_names}
    try:
        phi = logic.parse_formula(guard, table)
    except (IltlSyntaxError, UnknownProposition) as exc:
        raise FormatError(f"bad guard {guard!r}: {exc}") from exc

    def sat(node, lbl):
        if isinstance(node, logic.TrueF):
            return True
        if isinstance(node, logic.AP):
            return node.name in lbl
        if isinstance(node, logic.Not):
            return not sat(node.arg, lbl)
        if isinstance(node, logic.And):
            return sat(node.left, lbl) and sat(node.right, lbl)
        if isinstance(node, logic.Or):
            return sat(node.left, lbl) or sat(node.right, lbl)
        if isinstance(node, logic.Implies):
            return (not sat(node.left, lbl)) or sat(node.right, lbl)
        raise FormatError(f"guard {guard!r} uses a temporal operator")

    return [lbl for lbl in all_labels(ap_names) if sat(phi, lbl)]


def ldba_from_dict(data):
    """Build and validate an LDBA from its JSON form."""
    if not isinstance(data, dict):
        raise FormatError("automaton must be a JSON object")
    unknown = set(data) - _LDBA_FIELDS
    if unknown:
        raise FormatError(f"unknown automaton fields: {sorted(unknown)}")
    missing = _LDBA_FIELDS - {"epsilon"} - set(data)
    if missing:
        raise FormatError(f"missing automaton fields: {sorted(missing)}")
    states = data["states"]
    aps = data["aps"]
    if not isinstance(states, list) or not all(isinstance(s, str) for s in states):
        raise FormatError("states must be a list of strings")
    if not isinstance(aps, list) or not all(isinstance(a, str) for a in aps):
        raise FormatError("aps must be a list of strings")
    table = {}
    for tr in data["transitions"]:
        if not isinstance(tr, dict) or set(tr) != {"from", "guard", "to"}:
            raise FormatError(f"transition entries need exactly from/guard/to: {tr!r}")
        for lbl in _guard_labels(tr["guard"], aps):
            key = (tr["from"], lbl)
            if key in table:
                raise FormatError(f"overlapping guards at state {tr['from']!r} "
                                  f"on label {sorted(lbl)}")
            table[key] = tr["to"]
    moves = []
    for ep in data.get("epsilon", []):
        if not isinstance(ep, dict) or set(ep) != {"from", "to", "name"}:
            raise FormatError(f"epsilon entries need exactly from/to/name: {ep!r}")
        moves.append(EpsilonMove(ep["from"], ep["to"], ep["name"]))
    aut = Ldba(states, aps, table, moves, data["initial"], data["accepting"],
               data["initial_component"], data["accepting_component"])
    problems = check_ldba(aut)
    if problems:
        raise LdbaValidationError(problems)
    return aut


def load_ldba(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return ldba_from_dict(data)


def _minterm(lbl, ap_names):
    lits = [a if a in lbl else f"!{a}" for a in ap_names]
    return " & ".join(lits) if lits else "true"


def ldba_to_dict(aut):
    """JSON form; guards are written as disjunctions of full minterms."""
    labels = all_labels(aut.ap_names)
    transitions = []
    for q in aut.states:
        by_target = {}
        for lbl in labels:
            by_target.setdefault(aut.step_table[(q, lbl)], []).append(lbl)
        for target, lbls in by_target.items():
            if len(lbls) == len(labels):
                guard = "true"
            else:
                guard = " | ".join(f"({_minterm(l, aut.ap_names)})" for l in lbls)
            transitions.append({"from": q, "guard": guard, "to": target})
    return {
        "states": list(aut.states),
        "aps": list(aut.ap_names),
        "initial": aut.initial,
        "accepting": sorted(aut.accepting, key=aut.states.index),
        "initial_component": sorted(aut.initial_component, key=aut.states.index),
        "accepting_component": sorted(aut.accepting_component, key=aut.states.index),
        "transitions": transitions,
        "epsilon": [{"from": mv.source, "to": mv.target, "name": mv.name}
                    for mv in aut.epsilon_moves],
    }


def save_ldba(aut, path):
    Path(path).write_text(json.dumps(ldba_to_dict(aut), indent=2))


def isomorphic(a1, a2):
    """Structural isomorphism (state renaming) preserving labels, epsilon names and sets."""
    if len(a1.states) != len(a2.states) or set(a1.ap_names) != set(a2.ap_names):
        return False
    labels = all_labels(a1.ap_names)
    mapping = {a1.initial: a2.initial}
    queue = [a1.initial]
    while queue:
        q = queue.pop()
        q2 = mapping[q]
        pairs = [(a1.step_table[(q, l)], a2.step_table[(q2, l)]) for l in labels]
        e1 = {mv.name: mv.target for mv in a1.epsilon_from(q)}
        e2 = {mv.name: mv.target for mv in a2.epsilon_from(q2)}
        if set(e1) != set(e2):
            return False
        pairs += [(e1[n], e2[n]) for n in e1]
        for s, t in pairs:
            if s in mapping:
                if mapping[s] != t:
                    return False
            else:
                mapping[s] = t
                queue.append(s)
    if len(set(mapping.values())) != len(mapping):
        return False
    if len(mapping) != len(a1.states):
        # unreachable states: fall back to comparing counts only
        return False
    return all(
        (q in a1.accepting) == (mapping[q] in a2.accepting)
        and (q in a1.accepting_component) == (mapping[q] in a2.accepting_component)
        for q in mapping
    )


# -- templates -------------------------------------------------------------------

def template_automaton(kind, ap_names):
    """Standard LDBAs for ``GF f``, ``FG f`` and ``FG f | FG g``.

    ``kind`` is one of ``"gf"``, ``"fg"``, ``"fg-or-fg"``.
    """
    ap_names = list(ap_names)
    if len(set(ap_names)) != len(ap_names):
        raise UnsupportedPattern(f"AP names must be distinct: {ap_names}")
    labels = all_labels(ap_names)
    table = {}
    if kind == "gf" and len(ap_names) == 1:
        (f,) = ap_names
        for q in ("q0", "q1"):
            for lbl in labels:
                table[(q, lbl)] = "q1" if f in lbl else "q0"
        return Ldba(("q0", "q1"), ap_names, table, (), "q0", {"q1"}, (), {"q0", "q1"})
    if kind == "fg" and len(ap_names) == 1:
        (f,) = ap_names
        for lbl in labels:
            table[("q0", lbl)] = "q0"
            table[("q1", lbl)] = "q1" if f in lbl else "q2"
            table[("q2", lbl)] = "q2"
        return Ldba(("q0", "q1", "q2"), ap_names, table,
                    (EpsilonMove("q0", "q1", "eps1"),), "q0", {"q1"},
                    {"q0"}, {"q1", "q2"})
    if kind == "fg-or-fg" and len(ap_names) == 2:
        f, g = ap_names
        for lbl in labels:
            table[("q0", lbl)] = "q0"
            table[("q1", lbl)] = "q1" if f in lbl else "q2"
            table[("q2", lbl)] = "q2"
            table[("q3", lbl)] = "q3" if g in lbl else "q4"
            table[("q4", lbl)] = "q4"
        return Ldba(("q0", "q1", "q2", "q3", "q4"), ap_names, table,
                    (EpsilonMove("q0", "q1", "eps1"), EpsilonMove("q0", "q3", "eps2")),
                    "q0", {"q1", "q3"}, {"q0"}, {"q1", "q2", "q3", "q4"})
    raise UnsupportedPattern(f"no template for {kind!r} over {len(ap_names)} AP(s)")


def universal_automaton(ap_names=()):
    """One accepting state with self-loops: imposes no constraint."""
    table = {("q0", lbl): "q0" for lbl in all_labels(ap_names)}
    return Ldba(("q0",), ap_names, table, (), "q0", {"q0"}, (), {"q0"})


def template_for_formula(phi):
    """Match ``GF f``, ``FG f`` or ``FG f | FG g`` (unbounded) and return (kind, ap names)."""
    L = logic

    def fg(node):
        if (isinstance(node, L.Eventually) and node.bound is None
                and isinstance(node.arg, L.Always) and node.arg.bound is None
                and isinstance(node.arg.arg, L.AP)):
            return node.arg.arg.name
        return None

    if (isinstance(phi, L.Always) and phi.bound is None and isinstance(phi.arg, L.Eventually)
            and phi.arg.bound is None and isinstance(phi.arg.arg, L.AP)):
        return "gf", [phi.arg.arg.name]
    if fg(phi):
        return "fg", [fg(phi)]
    if isinstance(phi, L.Or) and fg(phi.left) and fg(phi.right) and fg(phi.left) != fg(phi.right):
        return "fg-or-fg", [fg(phi.left), fg(phi.right)]
    raise UnsupportedPattern(f"no template matches {logic.to_text(phi)}")
