"""iLTL over belief distributions: atomic propositions, formula AST, parser, evaluation.

Concrete syntax (loosest to tightest binding)::

    phi ::= phi -> phi                 (right associative)
          | phi | phi
          | phi & phi
          | phi U[T] phi               (left associative, bound optional)
          | ! phi | X phi | F[T] phi | G[T] phi
          | true | false | IDENT | ( phi )

Bare ``U``/``F``/``G`` are unbounded; only the automaton layer gives them meaning.
"""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (
    DimensionMismatch, FormatError, IltlSyntaxError, TraceTooShort,
    UnboundedOperator, UnknownProposition,
)

BOUNDARY_TOL = 1e-12

_NONLINEAR: dict[str, Callable[[np.ndarray], float]] = {}


class BoundaryWarning(UserWarning):
    """An atomic proposition evaluated within float noise of its threshold 0."""


def register_nonlinear(name, fn):
    """Register ``fn(belief) -> float`` as the evaluator for weightless APs called ``name``."""
    _NONLINEAR[name] = fn


@dataclass(frozen=True, eq=False)
class AtomicProposition:
    """f(b) = weights . b + offset; holds at b iff f(b) > 0.

    With ``weights=None`` the value comes from the evaluator registered under
    ``name`` via :func:`register_nonlinear`.
    """
    name: str
    weights: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", float(self.offset))

    def __eq__(self, other):
        if not isinstance(other, AtomicProposition):
            return NotImplemented
        if self.name != other.name or self.offset != other.offset:
            return False
        if self.weights is None or other.weights is None:
            return self.weights is None and other.weights is None
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.name)

    def scaled(self, c):
        return AtomicProposition(self.name, None if self.weights is None else c * self.weights,
                                 c * self.offset)


def indicator(name, subset, states, scale=1.0, shift=0.0):
    """AP ``scale * I_subset(b) + shift`` where I_subset(b) is the mass of ``subset``."""
    w = np.array([1.0 if s in set(subset) else 0.0 for s in states])
    unknown = set(subset) - set(states)
    if unknown:
        raise FormatError(f"indicator {name!r} names unknown states {sorted(unknown)}")
    return AtomicProposition(name, scale * w, shift)


def evaluate_ap(f, b):
    b = np.asarray(b, dtype=float)
    if f.weights is None:
        try:
            fn = _NONLINEAR[f.name]
        except KeyError:
            raise UnknownProposition(f.name) from None
        return float(fn(b))
    if f.weights.shape != b.shape:
        raise DimensionMismatch(
            f"AP {f.name!r} has {f.weights.shape[0]} weights, belief has {b.shape[0]} entries")
    return float(f.weights @ b + f.offset)


def label(b, aps, eps_label=0.0):
    """Names of the APs strictly positive at ``b`` (beyond ``eps_label``)."""
    out = set()
    for f in aps:
        v = evaluate_ap(f, b)
        if abs(v) <= BOUNDARY_TOL:
            warnings.warn(f"AP {f.name!r} evaluates to {v:.3g}, within float noise of 0",
                          BoundaryWarning, stacklevel=2)
        if v > eps_label:
            out.add(f.name)
    return frozenset(out)


def load_ap_table(path, states):
    """Read an AP table file: name -> {weights, offset} | {indicator, scale, shift}."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return ap_table_from_dict(data, states)


def ap_table_from_dict(data, states):
    if not isinstance(data, dict):
        raise FormatError("AP table must be a JSON object")
    table = {}
    for name, spec in data.items():
        if not _IDENT.fullmatch(name) or name in _KEYWORDS:
            raise FormatError(f"invalid AP name {name!r}")
        if not isinstance(spec, dict):
            raise FormatError(f"AP {name!r}: entry must be an object")
        keys = set(spec)
        if "weights" in keys:
            if keys - {"weights", "offset"}:
                raise FormatError(f"AP {name!r}: unexpected keys {sorted(keys - {'weights', 'offset'})}")
            w = spec["weights"]
            if not isinstance(w, list) or len(w) != len(states):
                raise FormatError(f"AP {name!r}: weights must list {len(states)} numbers")
            table[name] = AtomicProposition(name, np.array(w, dtype=float),
                                            float(spec.get("offset", 0.0)))
        elif "indicator" in keys:
            if keys - {"indicator", "scale", "shift"}:
                raise FormatError(f"AP {name!r}: unexpected keys {sorted(keys - {'indicator', 'scale', 'shift'})}")
            table[name] = indicator(name, spec["indicator"], states,
                                    float(spec.get("scale", 1.0)), float(spec.get("shift", 0.0)))
        else:
            raise FormatError(f"AP {name!r}: needs 'weights' or 'indicator'")
    return table


def ap_table_to_dict(table):
    out = {}
    for name, f in table.items():
        if f.weights is None:
            raise FormatError(f"AP {name!r} is nonlinear and cannot be serialized")
        out[name] = {"weights": [float(x) for x in f.weights], "offset": f.offset}
    return out


# -- AST ---------------------------------------------------------------------

class Formula:
    __slots__ = ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class AP(Formula):
    prop: AtomicProposition

    @property
    def name(self):
        return self.prop.name


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula
    bound: Optional[int] = None


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula
    bound: Optional[int] = None


@dataclass(frozen=True)
class Always(Formula):
    arg: Formula
    bound: Optional[int] = None


def propositions(phi):
    """Distinct APs of ``phi`` in first-occurrence order."""
    seen = {}

    def walk(node):
        if isinstance(node, AP):
            seen.setdefault(node.name, node.prop)
        for child in _children(node):
            walk(child)

    walk(phi)
    return list(seen.values())


def _children(node):
    if isinstance(node, (Not, Next, Eventually, Always)):
        return (node.arg,)
    if isinstance(node, (And, Or, Implies, Until)):
        return (node.left, node.right)
    return ()


def is_bounded(phi):
    if isinstance(phi, (Until, Eventually, Always)) and phi.bound is None:
        return False
    return all(is_bounded(c) for c in _children(phi))


def horizon(phi):
    """Largest shift t such that evaluating ``phi`` on sigma reads sigma(t)."""
    if isinstance(phi, (TrueF, AP)):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.arg)
    if isinstance(phi, (And, Or, Implies)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, Next):
        return 1 + horizon(phi.arg)
    if phi.bound is None:
        raise UnboundedOperator(f"{to_text(phi)} has no bound")
    if isinstance(phi, Until):
        return phi.bound + max(horizon(phi.left), horizon(phi.right))
    return phi.bound + horizon(phi.arg)


def desugar(phi):
    """Rewrite into the core syntax {AP, true, !, &, X, U_T}."""
    if isinstance(phi, (TrueF, AP)):
        return phi
    if isinstance(phi, Not):
        return Not(desugar(phi.arg))
    if isinstance(phi, And):
        return And(desugar(phi.left), desugar(phi.right))
    if isinstance(phi, Or):
        return Not(And(Not(desugar(phi.left)), Not(desugar(phi.right))))
    if isinstance(phi, Implies):
        return Not(And(desugar(phi.left), Not(desugar(phi.right))))
    if isinstance(phi, Next):
        return Next(desugar(phi.arg))
    if isinstance(phi, Until):
        return Until(desugar(phi.left), desugar(phi.right), phi.bound)
    if isinstance(phi, Eventually):
        return Until(TrueF(), desugar(phi.arg), phi.bound)
    if isinstance(phi, Always):
        return Not(Until(TrueF(), Not(desugar(phi.arg)), phi.bound))
    raise TypeError(f"not a formula: {phi!r}")


# -- bounded evaluation --------------------------------------------------------

def eval_bounded(phi, trace, eps_label=0.0):
    """Satisfaction of a fully bounded formula on a finite belief trace, at position 0."""
    if not is_bounded(phi):
        raise UnboundedOperator(f"{to_text(phi)} contains an unbounded operator")
    trace = [np.asarray(b, dtype=float) for b in trace]
    if not trace:
        raise TraceTooShort("trace is empty")
    need = horizon(phi) + 1
    if len(trace) < need:
        raise TraceTooShort(f"formula needs {need} beliefs, trace has {len(trace)}")
    cache = {}

    def holds(node, t):
        key = (id(node), t)
        if key in cache:
            return cache[key]
        if isinstance(node, TrueF):
            v = True
        elif isinstance(node, AP):
            v = evaluate_ap(node.prop, trace[t]) > eps_label
        elif isinstance(node, Not):
            v = not holds(node.arg, t)
        elif isinstance(node, And):
            v = holds(node.left, t) and holds(node.right, t)
        elif isinstance(node, Or):
            v = holds(node.left, t) or holds(node.right, t)
        elif isinstance(node, Implies):
            v = (not holds(node.left, t)) or holds(node.right, t)
        elif isinstance(node, Next):
            v = holds(node.arg, t + 1)
        elif isinstance(node, Until):
            v = False
            for k in range(node.bound + 1):
                if holds(node.right, t + k):
                    v = True
                    break
                if not holds(node.left, t + k):
                    break
        elif isinstance(node, Eventually):
            v = any(holds(node.arg, t + k) for k in range(node.bound + 1))
        elif isinstance(node, Always):
            v = all(holds(node.arg, t + k) for k in range(node.bound + 1))
        else:
            raise TypeError(f"not a formula: {node!r}")
        cache[key] = v
        return v

    return holds(phi, 0)


# -- parsing -------------------------------------------------------------------

_IDENT = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")
_KEYWORDS = {"X", "F", "G", "U", "true", "false"}
_TOKEN = re.compile(r"\s*(?:(->)|([!&|()])|(\[\s*\d+\s*\])|([a-zA-Z_][a-zA-Z0-9_]*))")


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise IltlSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        start = m.start(m.lastindex)
        tok = m.group(m.lastindex)
        kind = {1: "op", 2: "op", 3: "bound", 4: "ident"}[m.lastindex]
        if kind == "ident" and tok in _KEYWORDS:
            kind = "kw"
        tokens.append((kind, tok, _byte_offset(text, start)))
        pos = m.end()
    tokens.append(("eof", "", _byte_offset(text, n)))
    return tokens


def _byte_offset(text, pos):
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, ap_table):
        self.tokens = _tokenize(text)
        self.i = 0
        self.ap_table = ap_table

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, tok, off = self.take()
        if tok != value:
            raise IltlSyntaxError(f"expected {value!r}, found {tok or 'end of input'!r}", off)

    def parse(self):
        phi = self.implication()
        kind, tok, off = self.peek()
        if kind != "eof":
            raise IltlSyntaxError(f"unexpected {tok!r}", off)
        return phi

    def implication(self):
        left = self.disjunction()
        if self.peek()[1] == "->":
            self.take()
            return Implies(left, self.implication())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.peek()[1] == "|":
            self.take()
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.until()
        while self.peek()[1] == "&":
            self.take()
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        while self.peek()[1] == "U":
            self.take()
            bound = self.bound()
            left = Until(left, self.unary(), bound)
        return left

    def bound(self):
        kind, tok, _ = self.peek()
        if kind == "bound":
            self.take()
            return int(tok.strip("[] \t"))
        return None

    def unary(self):
        kind, tok, off = self.peek()
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "X":
            self.take()
            return Next(self.unary())
        if tok in ("F", "G"):
            self.take()
            bound = self.bound()
            arg = self.unary()
            return Eventually(arg, bound) if tok == "F" else Always(arg, bound)
        return self.atom()

    def atom(self):
        kind, tok, off = self.take()
        if tok == "(":
            phi = self.implication()
            self.expect(")")
            return phi
        if tok == "true":
            return TrueF()
        if tok == "false":
            return Not(TrueF())
        if kind == "ident":
            if tok not in self.ap_table:
                raise UnknownProposition(tok)
            prop = self.ap_table[tok]
            if isinstance(prop, str):
                prop = AtomicProposition(prop)
            return AP(prop)
        raise IltlSyntaxError(f"unexpected {tok or 'end of input'!r}", off)


def parse_formula(text, ap_table):
    """Parse iLTL text; identifiers resolve through ``ap_table`` (name -> AP)."""
    return _Parser(text, ap_table).parse()


def _b(bound):
    return "" if bound is None else f"[{bound}]"


def to_text(phi):
    """Print ``phi`` so that parsing the result yields an identical AST."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, AP):
        return phi.name
    if isinstance(phi, Not):
        return f"!{_wrap(phi.arg)}"
    if isinstance(phi, Next):
        return f"X {_wrap(phi.arg)}"
    if isinstance(phi, Eventually):
        return f"F{_b(phi.bound)} {_wrap(phi.arg)}"
    if isinstance(phi, Always):
        return f"G{_b(phi.bound)} {_wrap(phi.arg)}"
    if isinstance(phi, And):
        return f"{_wrap(phi.left)} & {_wrap(phi.right)}"
    if isinstance(phi, Or):
        return f"{_wrap(phi.left)} | {_wrap(phi.right)}"
    if isinstance(phi, Implies):
        return f"{_wrap(phi.left)} -> {_wrap(phi.right)}"
    if isinstance(phi, Until):
        return f"{_wrap(phi.left)} U{_b(phi.bound)} {_wrap(phi.right)}"
    raise TypeError(f"not a formula: {phi!r}")


def _wrap(phi):
    if isinstance(phi, (TrueF, AP)):
        return to_text(phi)
    return f"({to_text(phi)})"
