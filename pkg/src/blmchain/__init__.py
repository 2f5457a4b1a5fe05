"""Blockchain library and simulator with optimization-based proof of work."""

from .chain import (
    Block,
    BlockHeader,
    Chain,
    ChainParams,
    Transaction,
    ValidationReport,
    block_id,
    genesis_block,
    merkle_root,
    mine_hash_baseline,
    seed_hash,
    validate_chain,
)
from .engine import (
    Counterexample,
    DifficultyParams,
    ProofOfWork,
    SearchProblem,
    adjust_difficulty,
    count_subspaces,
    index_select,
    mine,
    validate_pow,
    verify_counterexample,
)
from .continuous import (
    ContinuousProblem,
    blm_check_continuous,
    canonical_str,
    coordinate_descent,
    delta_rule,
    demo_problem,
    f_demo,
    sig_fig_round,
)
from .simulate import (
    SimConfig,
    SimResult,
    fork_choice,
    run_simulation,
    synthesize_transactions,
)
from .tsp import (
    TspInstance,
    TspProblem,
    brute_force_tsp,
    constrain,
    generate_instance,
    held_karp,
    is_blm,
    local_search,
    post_optimize,
    route_length,
    substitution_neighbors,
)

__version__ = "0.1.0"
