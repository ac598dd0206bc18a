"""Learned temporal-block pruning."""
from unetslim.pruning.inclusion import (
    InclusionSolution,
    PRUNING_RATES,
    budget_from_rate,
    solve_inclusion,
    oracle_active_set,
    solver_jacobian,
)
from unetslim.pruning.sampling import (
    GateSample,
    sample_fixed_size,
    draw_fixed_size,
    empirical_inclusion,
)
from unetslim.pruning.gates import (
    ImportanceVector,
    TemporalMixWeights,
    gate_forward,
    gate_grad,
    temporal_update,
    temporal_mix,
    temporal_update_grad,
    select_top_n,
    l1_gate_loss,
    importance_from_alpha,
)
