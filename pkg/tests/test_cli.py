import csv
import json

import numpy as np
import pytest

import oracles
import pomdp_iltl as pi
from pomdp_iltl import logic
from pomdp_iltl.cli import main

from test_learner import home_bundle


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def home_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("home")
    m, aut, aps = home_bundle()
    pi.save_pomdp(m, d / "model.json")
    (d / "aps.json").write_text(json.dumps(logic.ap_table_to_dict({f.name: f for f in aps})))
    pi.save_ldba(aut, d / "aut.json")
    (d / "config.json").write_text(json.dumps({
        "learner": {"gamma_b": 0.9, "max_steps": 20000},
        "solver": {"gamma_b": 0.9, "constrain_reward": True, "tol": 1e-10},
        "belief_set": {"kind": "explicit", "beliefs": [[1, 0], [0, 1]]},
    }))
    return d


def bundle_args(d):
    return ["--model", d / "model.json", "--automaton", d / "aut.json",
            "--ap-table", d / "aps.json", "--config", d / "config.json"]


class TestValidate:
    def test_clean_bundle(self, capsys, data_dir):
        code, out = run(capsys, "validate", "--model", data_dir / "guarded.json",
                        "--automaton", data_dir / "fg_or_fg.json",
                        "--ap-table", data_dir / "guarded_aps.json")
        assert code == 0
        report = json.loads(out.out)
        assert report == {"model_violations": [], "automaton_problems": []}

    def test_bad_row_sum(self, capsys, tmp_path, tiger):
        d = tiger.to_dict()
        d["transition"]["tiger-left"]["listen"] = {"tiger-left": 0.5}
        (tmp_path / "bad.json").write_text(json.dumps(d))
        code, out = run(capsys, "validate", "--model", tmp_path / "bad.json")
        assert code == 1
        (line,) = json.loads(out.out)["model_violations"]
        assert "transition[tiger-left][listen]" in line

    def test_bad_automaton(self, capsys, tmp_path, data_dir):
        d = json.loads((data_dir / "fg_or_fg.json").read_text())
        d["accepting"] = ["q0"]
        (tmp_path / "aut.json").write_text(json.dumps(d))
        code, out = run(capsys, "validate", "--model", data_dir / "guarded.json",
                        "--automaton", tmp_path / "aut.json")
        assert code == 1 and json.loads(out.out)["automaton_problems"]

    def test_missing_file(self, capsys, data_dir, tmp_path):
        code, out = run(capsys, "validate", "--model", data_dir / "guarded.json",
                        "--automaton", tmp_path / "nope.json")
        assert code == 2 and "not found" in out.err

    def test_unparsable_model(self, capsys, tmp_path):
        (tmp_path / "m.json").write_text("{")
        code, _ = run(capsys, "validate", "--model", tmp_path / "m.json")
        assert code == 2


class TestSolve:
    def test_constant(self, capsys, tmp_path, data_dir):
        code, out = run(capsys, "solve", "--model", data_dir / "constant.json",
                        "--out", tmp_path)
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["V_r"] == pytest.approx(20.0, abs=1e-5)
        assert json.loads(out.out) == summary
        for name in ("values_r.json", "values_p.json", "policy.json", "convergence.csv"):
            assert (tmp_path / name).exists()
        fam = pi.AlphaSetFamily.from_dict(json.loads((tmp_path / "values_r.json").read_text()))
        assert fam.size() >= 1

    def test_deterministic_bundle(self, capsys, tmp_path, home_files):
        code, _ = run(capsys, "solve", *bundle_args(home_files), "--out", tmp_path)
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        m, aut, aps = home_bundle()
        nodes, _, acts = oracles.finite_product(m, aut, aps)
        _, Qp = oracles.surrogate_vi(nodes, acts, aut.accepting, 0.9)
        safe, _ = oracles.safe_sets(Qp, 1 - 1e-6)
        V, _ = oracles.tabular_vi(acts, m.discount, allowed=safe)
        assert summary["V_r_constrained"] == pytest.approx(V[0], abs=1e-6)
        assert summary["V_p"] == pytest.approx(1.0, abs=1e-6)

    def test_template_flags(self, capsys, tmp_path, data_dir):
        code, _ = run(capsys, "solve", "--model", data_dir / "guarded.json",
                      "--template", "fg-or-fg", "--aps", "safe1,goal2",
                      "--ap-table", data_dir / "guarded_aps.json", "--out", tmp_path)
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        # default gamma_b = 0.99 leaves the surrogate within tol / (1 - gamma_b) of 1
        assert 0.999 <= summary["V_p"] <= 1.0

    def test_formula_selects_template(self, capsys, tmp_path, data_dir):
        code, _ = run(capsys, "solve", "--model", data_dir / "guarded.json",
                      "--formula", "F G safe1 | F G goal2",
                      "--ap-table", data_dir / "guarded_aps.json", "--out", tmp_path)
        assert code == 0

    def test_unknown_proposition(self, capsys, tmp_path, data_dir):
        code, _ = run(capsys, "solve", "--model", data_dir / "guarded.json",
                      "--template", "gf", "--aps", "nowhere",
                      "--ap-table", data_dir / "guarded_aps.json", "--out", tmp_path)
        assert code == 2

    def test_non_convergence(self, capsys, tmp_path, data_dir):
        (tmp_path / "c.json").write_text(json.dumps({"solver": {"max_iter": 2}}))
        code, _ = run(capsys, "solve", "--model", data_dir / "tiger.json",
                      "--config", tmp_path / "c.json", "--out", tmp_path / "o")
        assert code == 3
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["converged"] is False and summary["iterations"] == 2

    def test_output_directory_from_environment(self, capsys, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv("POMDP_ILTL_OUT", str(tmp_path / "env"))
        code, _ = run(capsys, "solve", "--model", data_dir / "constant.json")
        assert code == 0 and (tmp_path / "env" / "summary.json").exists()


class TestLearn:
    def test_byte_identical_reruns(self, capsys, tmp_path, home_files):
        for name in ("a", "b"):
            code, _ = run(capsys, "learn", *bundle_args(home_files), "--seed", 1,
                          "--out", tmp_path / name)
            assert code == 0
        for name in ("values_r.json", "values_p.json", "policy.json", "store.jsonl",
                     "metrics.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume(self, capsys, tmp_path, home_files):
        run(capsys, "learn", *bundle_args(home_files), "--out", tmp_path / "whole")
        run(capsys, "learn", *bundle_args(home_files), "--steps", 300, "--out", tmp_path / "half")
        code, _ = run(capsys, "learn", *bundle_args(home_files), "--resume", tmp_path / "half",
                      "--out", tmp_path / "rest")
        assert code == 0
        whole = json.loads((tmp_path / "whole" / "summary.json").read_text())
        rest = json.loads((tmp_path / "rest" / "summary.json").read_text())
        assert abs(whole["residual"] - rest["residual"]) <= 1e-12
        assert whole["steps"] == rest["steps"]
        assert (tmp_path / "whole" / "values_r.json").read_bytes() == \
            (tmp_path / "rest" / "values_r.json").read_bytes()

    def test_residual_p_nonincreasing_after_warmup(self, capsys, tmp_path, home_files):
        run(capsys, "learn", *bundle_args(home_files), "--out", tmp_path)
        res = [float(r["residual_p"]) for r in read_csv(tmp_path / "metrics.csv")]
        finite = [x for x in res if np.isfinite(x)]
        assert len(finite) >= 5
        assert all(b <= a for a, b in zip(finite, finite[1:]))

    def test_budget_exhausted(self, capsys, tmp_path, home_files):
        code, _ = run(capsys, "learn", *bundle_args(home_files), "--steps", 100,
                      "--out", tmp_path)
        assert code == 3 and (tmp_path / "checkpoint.json").exists()

    def test_missing_checkpoint(self, capsys, tmp_path, home_files):
        code, _ = run(capsys, "learn", *bundle_args(home_files), "--resume", tmp_path / "none",
                      "--out", tmp_path)
        assert code == 2


class TestEvaluate:
    def test_zero_runs(self, capsys, tmp_path, data_dir):
        run(capsys, "solve", "--model", data_dir / "constant.json", "--out", tmp_path)
        code, out = run(capsys, "evaluate", "--model", data_dir / "constant.json",
                        "--runs", 0, "--out", tmp_path)
        assert code == 0
        assert json.loads(out.out)["runs"] == 0
        assert read_csv(tmp_path / "evaluation.csv") == []

    def test_constant_closed_form(self, capsys, tmp_path, data_dir):
        run(capsys, "solve", "--model", data_dir / "constant.json", "--out", tmp_path)
        code, _ = run(capsys, "evaluate", "--model", data_dir / "constant.json",
                      "--runs", 5, "--horizon", 30, "--out", tmp_path)
        agg = json.loads((tmp_path / "evaluation.json").read_text())
        assert code == 0
        assert agg["mean_reward"] == pytest.approx(2 * (1 - 0.9 ** 30) / 0.1, abs=1e-12)

    def test_window_rate(self, capsys, tmp_path, home_files):
        run(capsys, "solve", *bundle_args(home_files), "--out", tmp_path)
        code, _ = run(capsys, "evaluate", *bundle_args(home_files), "--runs", 100,
                      "--horizon", 200, "--out", tmp_path, "--threads", 2)
        assert code == 0
        assert json.loads((tmp_path / "evaluation.json").read_text())["window_rate"] == 1.0

    def test_missing_policy(self, capsys, tmp_path, data_dir):
        code, _ = run(capsys, "evaluate", "--model", data_dir / "constant.json",
                      "--out", tmp_path)
        assert code == 2


class TestSimulate:
    def test_random_actions(self, capsys, tmp_path, data_dir):
        code, _ = run(capsys, "simulate", "--model", data_dir / "tiger.json", "--seed", 4,
                      "--horizon", 15, "--out", tmp_path)
        assert code == 0
        rows = read_csv(tmp_path / "trajectory.csv")
        assert len(rows) == 15 and rows[0]["belief"] == "[0.5, 0.5]"

    def test_policy_rollout_is_deterministic(self, capsys, tmp_path, home_files):
        run(capsys, "solve", *bundle_args(home_files), "--out", tmp_path)
        traj = []
        for _ in range(2):
            code, _ = run(capsys, "simulate", *bundle_args(home_files), "--seed", 2,
                          "--out", tmp_path)
            assert code == 0
            traj.append((tmp_path / "trajectory.csv").read_bytes())
        assert traj[0] == traj[1]
        rows = read_csv(tmp_path / "trajectory.csv")
        assert {r["action"] for r in rows} == {"stay"}
        assert {r["q"] for r in rows} == {"q1"}
