"""Controller synthesis for POMDPs under iLTL constraints over beliefs."""
from .errors import *  # noqa: F401,F403
from .pomdp import (
    Pomdp, HiddenState, load_pomdp, save_pomdp, validate_model, belief_update,
    observation_likelihood, observation_distribution, belief_reward, simulate_step,
    beliefs_equal, belief_key,
)
from .logic import (
    AtomicProposition, BoundaryWarning, indicator, label, load_ap_table, parse_formula,
    to_text, eval_bounded, register_nonlinear,
)
from .automata import (
    Ldba, LassoRun, load_ldba, save_ldba, check_ldba, lasso_accepted, word_accepted,
    template_automaton, universal_automaton, template_for_formula,
)
from .product import (
    ProductAction, ProductState, initial_state, available_actions, product_step,
    product_successors, product_reward, is_buchi, enumerate_product,
)
from .valueiter import (
    AlphaVector, AlphaSetFamily, WitnessSet, SolverConfig, SolveResult, Constraint, Sample,
    eval_q, eval_v, raw_value, constrained_value, safe_actions, extract_policy,
    backup_exact, backup_empirical, backup_p,
    prune_lp, prune_pointbased, solve_pbvi, policy_export, policy_import, value_export,
)
from .learner import (
    LearnerConfig, Learner, LearnResult, EpisodeStore, EmpiricalModel, TransitionRecord,
    choose_action, record_transition, learn, evaluate_policy,
)

__version__ = "0.1.0"
