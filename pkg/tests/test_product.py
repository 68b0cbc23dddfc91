import numpy as np
import pytest

import pomdp_iltl as pi
from pomdp_iltl import logic, product
from pomdp_iltl.errors import EpsilonUnavailable, ZeroLikelihoodObservation
from pomdp_iltl.product import ProductAction, ProductState

from conftest import make_model

B, E = ProductAction.base, ProductAction.epsilon


@pytest.fixture(scope="module")
def fig2(data_dir):
    return pi.load_ldba(data_dir / "fg_or_fg.json")


def two_state_aps(aut):
    table = {"safe1": logic.indicator("safe1", ["s1"], ["s1", "s2"], scale=-1.0, shift=0.1),
             "goal2": logic.indicator("goal2", ["s2"], ["s1", "s2"], shift=-0.8)}
    return [table[n] for n in aut.ap_names]


def swap_model():
    """Deterministic two-state system: "go" swaps the state, "stay" keeps it."""
    T = np.zeros((2, 2, 2))
    T[0, 0, 1] = T[1, 0, 0] = 1.0
    T[:, 1, :] = np.eye(2)
    return make_model(T, np.eye(2), [1, 0], [[0, 0], [0, 0]], actions=["go", "stay"])


class TestAvailableActions:
    def test_accepting_component(self, guarded):
        model, aut, _ = guarded
        ps = ProductState(model.initial, "q3")
        assert product.available_actions(model, aut, ps) == [B("risky"), B("careful")]

    def test_initial_state(self, guarded):
        model, aut, _ = guarded
        ps = product.initial_state(model, aut)
        assert product.available_actions(model, aut, ps) == \
            [B("risky"), B("careful"), E("eps1"), E("eps2")]

    def test_universal(self, guarded):
        model = guarded[0]
        aut = pi.universal_automaton()
        ps = product.initial_state(model, aut)
        assert product.available_actions(model, aut, ps) == [B("risky"), B("careful")]


class TestProductStep:
    def test_epsilon_keeps_belief(self, guarded):
        model, aut, aps = guarded
        b = np.array([0.2, 0.3, 0.5])
        out = product.product_step(model, aut, aps, ProductState(b, "q0"), E("eps2"))
        assert out.aut_state == "q3"
        np.testing.assert_array_equal(out.belief, b)

    def test_epsilon_rejects_observation(self, guarded):
        model, aut, aps = guarded
        with pytest.raises(ValueError):
            product.product_step(model, aut, aps, ProductState(model.initial, "q0"), E("eps1"), 0)

    def test_epsilon_unavailable(self, guarded):
        model, aut, aps = guarded
        with pytest.raises(EpsilonUnavailable):
            product.product_step(model, aut, aps, ProductState(model.initial, "q1"), E("eps1"))
        with pytest.raises(EpsilonUnavailable):
            product.product_step(model, aut, aps, ProductState(model.initial, "q0"), E("eps9"))

    def test_base_needs_observation(self, guarded):
        model, aut, aps = guarded
        with pytest.raises(ValueError):
            product.product_step(model, aut, aps, product.initial_state(model, aut), B("risky"))

    def test_one_hot_mdp_step(self, guarded):
        model, aut, aps = guarded
        # s0 under risky reaches s1 (observed o1); label of s0 is {safe1} so q1 stays put
        out = product.product_step(model, aut, aps, ProductState([1, 0, 0], "q1"), B("risky"), 1)
        np.testing.assert_array_equal(out.belief, [0, 1, 0])
        assert out.aut_state == "q1"
        # from s2 the label is empty: q1 drops to its rejecting successor
        out = product.product_step(model, aut, aps, ProductState([0, 0, 1], "q1"), B("risky"), 2)
        assert out.aut_state == "q2"

    def test_source_label_drives_automaton(self, two_state, fig2):
        aps = two_state_aps(fig2)
        out = product.product_step(two_state, fig2, aps, ProductState([0.5, 0.5], "q3"),
                                   B("a"), 0)
        np.testing.assert_allclose(out.belief, [2 / 3, 1 / 3], atol=1e-15)
        assert out.aut_state == "q4"
        # the label of the posterior would not matter: goal2 at (0.05, 0.95) keeps q3
        out = product.product_step(two_state, fig2, aps, ProductState([0.05, 0.95], "q3"),
                                   B("a"), 0)
        assert out.aut_state == "q3"

    def test_zero_likelihood_propagates(self, guarded):
        model, aut, aps = guarded
        with pytest.raises(ZeroLikelihoodObservation):
            product.product_step(model, aut, aps, ProductState([0, 1, 0], "q1"), B("risky"), 2)


class TestSuccessors:
    def test_distribution(self, guarded):
        model, aut, aps = guarded
        succ = product.product_successors(model, aut, aps, product.initial_state(model, aut),
                                          B("risky"))
        assert [(p, o) for p, o, _ in succ] == [(0.6, 1), (0.4, 2)]
        assert all(s.aut_state == "q0" for _, _, s in succ)

    def test_epsilon_is_certain(self, guarded):
        model, aut, aps = guarded
        ((p, o, s),) = product.product_successors(model, aut, aps,
                                                  product.initial_state(model, aut), E("eps1"))
        assert (p, o, s.aut_state) == (1.0, None, "q1")

    def test_duplicate_posteriors_merge(self):
        T = np.stack([np.eye(2)], axis=1)
        m = make_model(T, [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]], [0.3, 0.7], [[0], [0]])
        aut = pi.universal_automaton()
        ((p, o, s),) = product.product_successors(m, aut, [], product.initial_state(m, aut),
                                                  B("a0"))
        assert (p, o) == (1.0, 0)
        np.testing.assert_allclose(s.belief, [0.3, 0.7])


class TestReward:
    def test_one_hot(self, guarded):
        model = guarded[0]
        assert product.product_reward(model, ProductState([0, 0, 1], "q0"), B("risky")) == 2.0

    def test_epsilon_free(self, guarded):
        model = guarded[0]
        assert product.product_reward(model, ProductState([0, 0, 1], "q0"), E("eps1")) == 0.0

    def test_inner_product(self, two_state):
        assert product.product_reward(two_state, ProductState([0.25, 0.75], "q0"), B("a")) == 0.25


class TestBuchi:
    def test_accepting_for_every_belief(self, fig2):
        rng = np.random.default_rng(0)
        for b in rng.dirichlet(np.ones(3), size=50):
            assert product.is_buchi(ProductState(b, "q1"), fig2)
            assert product.is_buchi(ProductState(b, "q3"), fig2)
            assert not product.is_buchi(ProductState(b, "q0"), fig2)

    def test_universal(self):
        assert product.is_buchi(ProductState([1.0], "q0"), pi.universal_automaton())


class TestProductState:
    def test_tolerant_equality(self):
        a = ProductState([0.5, 0.5], "q0")
        assert a == ProductState([0.5 + 1e-10, 0.5 - 1e-10], "q0")
        assert a != ProductState([0.5, 0.5], "q1")
        assert hash(a) == hash(ProductState([0.5, 0.5], "q0"))

    def test_belief_is_read_only(self):
        ps = ProductState([0.5, 0.5], "q0")
        with pytest.raises(ValueError):
            ps.belief[0] = 1.0

    def test_label_key(self, guarded):
        model, aut, aps = guarded
        assert product.label_key([1, 0, 0], aps, aut) == "{safe1}"
        assert product.label_key([0, 1, 0], aps, aut) == "{goal2,safe1}"
        assert product.label_key([0, 0, 1], aps, aut) == "{}"

    def test_action_round_trip(self):
        for act in (B("risky"), E("eps2")):
            assert ProductAction.from_dict(act.to_dict()) == act
        assert str(E("eps2")) == "<eps2>"


class TestEnumeration:
    def test_guarded_bundle(self, guarded):
        states, edges = product.enumerate_product(*guarded)
        assert len(states) == 13
        for row in edges.values():
            assert sum(p for p, _ in row) == pytest.approx(1.0)

    def test_matches_hand_built_product(self):
        m = swap_model()
        aut = pi.template_automaton("gf", ["f"])
        aps = [logic.indicator("f", ["s0"], m.states, shift=-0.5)]
        states, edges = product.enumerate_product(m, aut, aps)
        got = {(tuple(states[i].belief), states[i].aut_state, str(a), tuple(states[j].belief),
                states[j].aut_state) for (i, a), row in edges.items() for _, j in row}
        e0, e1 = (1.0, 0.0), (0.0, 1.0)
        # the label at e0 is {f}, which moves gf to its accepting state
        want = {(e0, "q0", "go", e1, "q1"), (e0, "q0", "stay", e0, "q1"),
                (e1, "q1", "go", e0, "q0"), (e1, "q1", "stay", e1, "q0"),
                (e0, "q1", "go", e1, "q1"), (e0, "q1", "stay", e0, "q1"),
                (e1, "q0", "go", e0, "q0"), (e1, "q0", "stay", e1, "q0")}
        assert len(states) == 4 and got == want

    def test_limit(self, tiger):
        aut = pi.universal_automaton()
        with pytest.raises(RuntimeError):
            product.enumerate_product(tiger, aut, [], limit=5)


def test_path_correspondence():
    rng = np.random.default_rng(5)
    model = make_model(rng.dirichlet(np.ones(3), size=(3, 2)), rng.dirichlet(np.ones(2), size=3),
                       [1 / 3] * 3, np.zeros((3, 2)))
    aut = pi.template_automaton("fg-or-fg", ["f", "g"])
    aps = [logic.AtomicProposition("f", np.array([1.0, 0, 0]), -0.3),
           logic.AtomicProposition("g", np.array([0, 1.0, 0]), -0.3)]
    for seed in range(20):
        choice = np.random.default_rng(100 + seed)
        plan = [int(x) for x in choice.integers(2, size=40)]
        eps_at = set(int(x) for x in choice.integers(40, size=3))

        env = np.random.default_rng(seed)
        h = pi.HiddenState.sample(model, model.initial, env)
        ps, proj = product.initial_state(model, aut), [model.initial]
        for k, a in enumerate(plan):
            moves = [x for x in product.available_actions(model, aut, ps) if x.is_epsilon]
            if k in eps_at and moves:
                before = ps.belief
                ps = product.product_step(model, aut, aps, ps, moves[0])
                assert ps.belief is before or np.array_equal(ps.belief, before)
            h, o = pi.simulate_step(model, h, a)
            ps = product.product_step(model, aut, aps, ps, B(model.actions[a]), o)
            proj.append(ps.belief)

        env = np.random.default_rng(seed)
        h = pi.HiddenState.sample(model, model.initial, env)
        b, plain = model.initial, [model.initial]
        for a in plan:
            h, o = pi.simulate_step(model, h, a)
            b = pi.belief_update(model, b, a, o)
            plain.append(b)
        np.testing.assert_array_equal(np.array(proj), np.array(plain))
