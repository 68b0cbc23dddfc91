"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 I/O or parse failure,
3 non-convergence (artifacts are still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import automata, logic, pomdp
from .errors import (
    FormatError, IltlSyntaxError, LdbaValidationError, ModelValidationError, NonConvergence,
    PomdpIltlError, UnknownProposition, UnsupportedPattern,
)
from .learner import Learner, LearnerConfig, evaluate_policy
from .product import ProductAction, initial_state, product_step
from .valueiter import (
    SolverConfig, constrained_value, extract_policy, policy_export, policy_import,
    raw_value, solve_pbvi, value_export,
)

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NONCONVERGED = 0, 1, 2, 3
OUT_ENV = "POMDP_ILTL_OUT"

log = logging.getLogger("pomdp_iltl")


class _IOProblem(Exception):
    pass


# -- manifest ----------------------------------------------------------------------

def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise _IOProblem(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise _IOProblem(f"{path}: {exc}") from None


def _load_model(args, validate=True):
    if not args.model:
        raise _IOProblem("--model is required")
    if not Path(args.model).exists():
        raise _IOProblem(f"file not found: {args.model}")
    return pomdp.load_pomdp(args.model, validate=validate)


def _load_aps(args, model):
    if not args.ap_table:
        return {}
    if not Path(args.ap_table).exists():
        raise _IOProblem(f"file not found: {args.ap_table}")
    return logic.load_ap_table(args.ap_table, model.states)


def _load_automaton(args, table):
    """Automaton from --automaton, --template/--aps, --formula, or the universal one."""
    if args.automaton:
        if not Path(args.automaton).exists():
            raise _IOProblem(f"file not found: {args.automaton}")
        return automata.load_ldba(args.automaton)
    if args.template:
        names = [a for a in (args.aps or "").split(",") if a]
        return automata.template_automaton(args.template, names)
    if args.formula:
        phi = logic.parse_formula(args.formula, table)
        kind, names = automata.template_for_formula(phi)
        return automata.template_automaton(kind, names)
    return automata.universal_automaton()


def _bundle(args):
    model = _load_model(args)
    table = _load_aps(args, model)
    aut = _load_automaton(args, table)
    missing = [n for n in aut.ap_names if n not in table]
    if missing:
        raise UnknownProposition(missing[0])
    aps = [table[n] for n in aut.ap_names]
    return model, aut, aps


def _config(args):
    return _read_json(args.config) if args.config else {}


def _out_dir(args):
    out = Path(args.out or os.environ.get(OUT_ENV) or "pomdp-iltl-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _belief_set(model, spec):
    kind = spec.get("kind", "reachable")
    if kind == "reachable":
        B = pomdp.reachable_beliefs(model, int(spec.get("limit", 200)))
        return np.vstack([B, np.eye(model.n_states)])
    if kind == "grid":
        return pomdp.simplex_grid(model.n_states, int(spec.get("resolution", 10)))
    if kind == "explicit":
        return np.array(spec["beliefs"], dtype=float)
    raise FormatError(f"unknown belief_set kind {kind!r}")


# -- commands -----------------------------------------------------------------------

def cmd_validate(args):
    model = _load_model(args, validate=False)
    violations = [str(v) for v in pomdp.validate_model(model)]
    problems = []
    try:
        table = _load_aps(args, model)
        aut = _load_automaton(args, table)
        problems = automata.check_ldba(aut)
    except LdbaValidationError as exc:
        problems = exc.problems
    report = {"model_violations": violations, "automaton_problems": [str(p) for p in problems]}
    print(json.dumps(report, indent=2))
    return EXIT_INVALID if violations or problems else EXIT_OK


def _summary_values(model, aut, fam_r, fam_p, threshold):
    ps = initial_state(model, aut)
    return {
        "V_r": raw_value(fam_r, ps.belief, ps.aut_state),
        "V_r_constrained": constrained_value(fam_r, fam_p, ps, threshold),
        "V_p": raw_value(fam_p, ps.belief, ps.aut_state),
    }


def _write_families(out, fam_r, fam_p, iteration, residual, threshold):
    _write_json(out / "values_r.json", value_export(fam_r, "reward", iteration, residual))
    _write_json(out / "values_p.json", value_export(fam_p, "buchi", iteration, residual))
    _write_json(out / "policy.json", policy_export(fam_r, fam_p, threshold))


def cmd_solve(args):
    model, aut, aps = _bundle(args)
    cfg_data = _config(args)
    cfg = SolverConfig.from_dict(cfg_data.get("solver", {}))
    B = _belief_set(model, cfg_data.get("belief_set", {}))
    out = _out_dir(args)
    code = EXIT_OK
    try:
        res = solve_pbvi(model, aut, aps, B, cfg)
    except NonConvergence as exc:
        res, code = exc.result, EXIT_NONCONVERGED
    _write_families(out, res.fam_r, res.fam_p, res.iterations, res.residual, cfg.safe_threshold)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["iteration", "residual_r", "residual_p", "size_r", "size_p"])
        w.writeheader()
        w.writerows(res.history)
    summary = {"iterations": res.iterations, "residual": res.residual,
               "converged": res.converged, "belief_set_size": int(len(B))}
    summary.update(_summary_values(model, aut, res.fam_r, res.fam_p, cfg.safe_threshold))
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=2))
    return code


def _learner_config(args, cfg_data):
    d = dict(cfg_data.get("learner", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    return LearnerConfig.from_dict(d)


def cmd_learn(args):
    model, aut, aps = _bundle(args)
    cfg = _learner_config(args, _config(args))
    out = _out_dir(args)
    if args.resume:
        ckpt = Path(args.resume)
        if not (ckpt / "checkpoint.json").exists():
            raise _IOProblem(f"no checkpoint in {ckpt}")
        learner = Learner.load(model, aut, aps, ckpt, cfg)
    else:
        learner = Learner(model, aut, aps, cfg)
    res = learner.run(args.steps)
    learner.save(out)
    _write_families(out, res.fam_r, res.fam_p, res.steps, res.residual, cfg.safe_threshold)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["step", "residual_r", "residual_p", "size_r", "size_p",
                                "safe_size"])
        w.writeheader()
        w.writerows(res.metrics)
    summary = {"steps": res.steps, "residual": res.residual, "converged": res.converged,
               "records": len(res.store), "config": asdict(cfg)}
    summary.update(_summary_values(model, aut, res.fam_r, res.fam_p, cfg.safe_threshold))
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _load_policy(args, out, aut, aps):
    path = Path(args.policy) if args.policy else out / "policy.json"
    if not path.exists():
        raise _IOProblem(f"policy file not found: {path}")
    return policy_import(_read_json(path), aut, aps)


def cmd_evaluate(args):
    model, aut, aps = _bundle(args)
    cfg_data = _config(args).get("evaluate", {})
    out = _out_dir(args)
    fam_r, fam_p, threshold = _load_policy(args, out, aut, aps)
    runs = args.runs if args.runs is not None else int(cfg_data.get("runs", 100))
    horizon = args.horizon if args.horizon is not None else int(cfg_data.get("horizon", 200))
    window = args.window if args.window is not None else int(cfg_data.get("window", 50))
    seed = args.seed if args.seed is not None else int(cfg_data.get("seed", 0))
    rep = evaluate_policy(model, aut, aps, fam_r, fam_p, runs, horizon, seed=seed, window=window,
                          threshold=threshold, threads=args.threads)
    with open(out / "evaluation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["run", "discounted_reward", "visits", "window_ok", "fallbacks"])
        w.writeheader()
        w.writerows(rep["runs"])
    _write_json(out / "evaluation.json", rep["aggregate"])
    print(json.dumps(rep["aggregate"], indent=2))
    return EXIT_OK


def cmd_simulate(args):
    model, aut, aps = _bundle(args)
    out = _out_dir(args)
    policy = _load_policy(args, out, aut, aps) if (args.policy or
                                                   (out / "policy.json").exists()) else None
    rng = np.random.Generator(np.random.PCG64(args.seed or 0))
    ps = initial_state(model, aut)
    hidden = pomdp.HiddenState.sample(model, ps.belief, rng)
    horizon = args.horizon if args.horizon is not None else 20
    rows = []
    for t in range(horizon):
        if policy is not None:
            act = extract_policy(policy[0], policy[1], model, aut, ps, policy[2])
            while act.is_epsilon:
                ps = product_step(model, aut, aps, ps, act)
                act = extract_policy(policy[0], policy[1], model, aut, ps, policy[2])
            a = act.name
        else:
            a = model.actions[int(rng.integers(model.n_actions))]
        s = model.states[hidden.current]
        hidden, o = pomdp.simulate_step(model, hidden, a)
        nxt = product_step(model, aut, aps, ps, ProductAction.base(a), o)
        rows.append({"t": t, "state": s, "q": ps.aut_state, "action": a,
                     "observation": model.observations[o],
                     "belief": json.dumps([round(float(x), 6) for x in ps.belief])})
        ps = nxt
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["t", "state", "q", "action", "observation", "belief"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} steps to {out / 'trajectory.csv'}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="pomdp-iltl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--automaton", help="LDBA JSON file")
        g.add_argument("--template", choices=["gf", "fg", "fg-or-fg"])
        sp.add_argument("--aps", help="comma-separated AP names for --template")
        sp.add_argument("--ap-table", help="AP table JSON file")
        sp.add_argument("--formula", help="iLTL formula; picks a template if no automaton given")
        sp.add_argument("--config", help="JSON config with solver/learner/evaluate sections")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)

    for name, fn in (("validate", cmd_validate), ("solve", cmd_solve), ("learn", cmd_learn),
                     ("evaluate", cmd_evaluate), ("simulate", cmd_simulate)):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(func=fn)
        if name == "learn":
            sp.add_argument("--resume", help="directory holding a checkpoint to continue from")
            sp.add_argument("--steps", type=int, help="total step budget (overrides config)")
        if name in ("evaluate", "simulate"):
            sp.add_argument("--policy", help="policy export (default OUT/policy.json)")
            sp.add_argument("--horizon", type=int)
        if name == "evaluate":
            sp.add_argument("--runs", type=int)
            sp.add_argument("--window", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ModelValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except LdbaValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (_IOProblem, FormatError, IltlSyntaxError, UnknownProposition, UnsupportedPattern,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except PomdpIltlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
