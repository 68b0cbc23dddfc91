import copy
import itertools
import json

import pytest

import oracles
import pomdp_iltl as pi
from pomdp_iltl import automata, logic
from pomdp_iltl.errors import FormatError, InvalidRun, LdbaValidationError, UnsupportedPattern

SG = ["safe1", "goal2"]


@pytest.fixture(scope="module")
def fig2(data_dir):
    return pi.load_ldba(data_dir / "fg_or_fg.json")


@pytest.fixture(scope="module")
def fig2_dict(data_dir):
    return json.loads((data_dir / "fg_or_fg.json").read_text())


def lbl(*names):
    return frozenset(names)


class TestLoad:
    def test_fig2(self, fig2):
        assert [mv.name for mv in fig2.epsilon_from("q0")] == ["eps1", "eps2"]
        assert fig2.accepting == {"q1", "q3"}
        assert automata.check_ldba(fig2) == []

    def test_universal(self):
        d = {"states": ["q0"], "aps": ["f"], "initial": "q0", "accepting": ["q0"],
             "initial_component": [], "accepting_component": ["q0"],
             "transitions": [{"from": "q0", "guard": "true", "to": "q0"}]}
        aut = automata.ldba_from_dict(d)
        assert automata.step(aut, "q0", lbl("f")) == "q0"

    def test_epsilon_in_accepting_component(self, fig2_dict):
        d = copy.deepcopy(fig2_dict)
        d["epsilon"].append({"from": "q1", "to": "q3", "name": "eps3"})
        with pytest.raises(LdbaValidationError) as err:
            automata.ldba_from_dict(d)
        assert any("'q1'" in p and "eps3" in p for p in err.value.problems)

    def test_every_condition_reported(self, fig2_dict):
        d = copy.deepcopy(fig2_dict)
        d["accepting"] = ["q0", "q1"]
        d["transitions"] = [t for t in d["transitions"] if t["from"] != "q4"]
        d["initial_component"] = ["q0", "q1"]
        with pytest.raises(LdbaValidationError) as err:
            automata.ldba_from_dict(d)
        text = "\n".join(err.value.problems)
        assert "overlap" in text and "outside the accepting component" in text
        assert "'q4' has no successor" in text

    def test_leaving_accepting_component(self, fig2_dict):
        d = copy.deepcopy(fig2_dict)
        d["transitions"] = [t for t in d["transitions"] if t["from"] != "q2"]
        d["transitions"].append({"from": "q2", "guard": "true", "to": "q0"})
        with pytest.raises(LdbaValidationError, match="leaves the component"):
            automata.ldba_from_dict(d)

    def test_overlapping_guards(self, fig2_dict):
        d = copy.deepcopy(fig2_dict)
        d["transitions"].append({"from": "q1", "guard": "safe1 & goal2", "to": "q2"})
        with pytest.raises(FormatError, match="overlapping"):
            automata.ldba_from_dict(d)

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(extra=1),
        lambda d: d.pop("states"),
        lambda d: d["transitions"].append({"from": "q0", "to": "q0"}),
        lambda d: d["transitions"].append({"from": "q0", "guard": "F safe1", "to": "q0"}),
        lambda d: d["transitions"].append({"from": "q0", "guard": "bogus", "to": "q0"}),
    ])
    def test_format_errors(self, fig2_dict, mutate):
        d = copy.deepcopy(fig2_dict)
        mutate(d)
        with pytest.raises(FormatError):
            automata.ldba_from_dict(d)

    def test_file_round_trip(self, fig2, tmp_path):
        pi.save_ldba(fig2, tmp_path / "a.json")
        again = pi.load_ldba(tmp_path / "a.json")
        assert automata.isomorphic(fig2, again)
        assert again.step_table == fig2.step_table

    @pytest.mark.parametrize("kind, names", [("gf", ["f"]), ("fg", ["f"]),
                                             ("fg-or-fg", ["f", "g"])])
    def test_templates_round_trip(self, kind, names, tmp_path):
        aut = pi.template_automaton(kind, names)
        pi.save_ldba(aut, tmp_path / "t.json")
        assert automata.isomorphic(aut, pi.load_ldba(tmp_path / "t.json"))
        assert automata.check_ldba(aut) == []


class TestStep:
    def test_universal(self):
        u = pi.universal_automaton(["f"])
        assert automata.step(u, "q0", lbl("f")) == "q0" == automata.step(u, "q0", lbl())

    def test_fig2_goal_component(self, fig2):
        assert automata.step(fig2, "q3", lbl("goal2")) == "q3"
        assert automata.step(fig2, "q3", lbl("safe1")) == "q4"

    def test_foreign_aps_ignored(self, fig2):
        assert automata.step(fig2, "q3", lbl("goal2", "other")) == "q3"

    def test_epsilon_successors(self, fig2):
        assert automata.epsilon_successors(fig2, "q0") == {"q1", "q3"}
        for q in fig2.accepting_component:
            assert automata.epsilon_successors(fig2, q) == set()
        assert automata.epsilon_successors(pi.universal_automaton(), "q0") == set()


class TestLasso:
    def test_accepting_cycle(self, fig2):
        assert pi.lasso_accepted(fig2, pi.LassoRun(["q0"], ["q3"]))

    def test_cycle_in_initial_component(self, fig2):
        assert not pi.lasso_accepted(fig2, pi.LassoRun([], ["q0"]))

    def test_goal_branch(self, fig2):
        # q0 --eps2--> q3, then goal2 labels keep it in q3 forever
        run = pi.LassoRun(["q0", "q0"], ["q3"])
        assert pi.lasso_accepted(fig2, run)
        assert pi.word_accepted(fig2, [lbl(), lbl("safe1")], [lbl("goal2")])

    def test_invalid_runs(self, fig2):
        with pytest.raises(InvalidRun):
            pi.lasso_accepted(fig2, pi.LassoRun(["q1"], ["q1"]))
        with pytest.raises(InvalidRun):
            pi.lasso_accepted(fig2, pi.LassoRun(["q0"], ["q2", "q1"]))
        with pytest.raises(InvalidRun):
            pi.lasso_accepted(fig2, pi.LassoRun(["q0"], []))


class TestTemplates:
    def test_fig2_isomorphic(self, fig2):
        assert automata.isomorphic(pi.template_automaton("fg-or-fg", SG), fig2)

    def test_gf_shape(self):
        aut = pi.template_automaton("gf", ["f"])
        assert len(aut.states) == 2 and not aut.epsilon_moves
        assert all(aut.step_table[(q, lbl("f"))] in aut.accepting for q in aut.states)

    def test_fg_shape(self):
        aut = pi.template_automaton("fg", ["f"])
        (mv,) = aut.epsilon_moves
        assert mv.target in aut.accepting
        assert aut.step_table[(mv.target, lbl("f"))] == mv.target

    @pytest.mark.parametrize("kind, names", [("gf", ["f", "g"]), ("fg-or-fg", ["f", "f"]),
                                             ("until", ["f"])])
    def test_unsupported(self, kind, names):
        with pytest.raises(UnsupportedPattern):
            pi.template_automaton(kind, names)

    def test_template_for_formula(self):
        table = {"f": "f", "g": "g"}
        assert pi.template_for_formula(logic.parse_formula("G F f", table)) == ("gf", ["f"])
        assert pi.template_for_formula(logic.parse_formula("F G g", table)) == ("fg", ["g"])
        assert pi.template_for_formula(logic.parse_formula("F G f | F G g", table)) == \
            ("fg-or-fg", ["f", "g"])
        with pytest.raises(UnsupportedPattern):
            pi.template_for_formula(logic.parse_formula("F[2] G f", table))

    @pytest.mark.parametrize("kind, names", [("gf", ["f"]), ("fg", ["f"]),
                                             ("fg-or-fg", ["f", "g"])])
    def test_brute_force_lassos(self, kind, names):
        aut = pi.template_automaton(kind, names)
        alphabet = automata.all_labels(names)
        for total in range(1, 5):
            for word in itertools.product(alphabet, repeat=total):
                for split in range(total):
                    prefix, cycle = word[:split], word[split:]
                    want = oracles.lasso_semantics(kind, names, cycle)
                    assert oracles.runs_accept(aut, prefix, cycle) == want
                    assert pi.word_accepted(aut, prefix, cycle) == want
