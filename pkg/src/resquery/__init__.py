"""Differentially private marginal release through noisy residual measurements."""

from .crp import (
    CrpProblem,
    CrpSolution,
    aggregate_workload_weights,
    postprocess,
    relaxed_closed_form,
    solve_crp,
)
from .domain import (
    AttrSet,
    DataTable,
    Domain,
    Marginal,
    Residual,
    compute_marginal,
    downward_closure,
    subsets,
)
from .grem import (
    GremEngine,
    MarginalEstimateSet,
    ResidualEstimateStore,
    consolidate,
    lazy_update,
    reconstruct_workload,
)
from .mechanisms import (
    MechanismConfig,
    MechanismResult,
    budget_anneal,
    initialize,
    run_aim_grem,
    run_batch_planner,
    run_iid_fixed,
    selection_score,
    workload_errors,
)
from .privacy import (
    Accountant,
    BudgetExceededError,
    NoisyResidual,
    calibrate_rho,
    compose,
    exp_mech_select,
    measure_residual,
    p_tau,
    v_tau,
    zcdp_log_delta,
    zcdp_to_delta,
)
from .tensor import apply_axis_op, decomp, decompose_full, recon, recon_sum

__version__ = "0.1.0"

__all__ = [
    "Accountant",
    "aggregate_workload_weights",
    "apply_axis_op",
    "AttrSet",
    "budget_anneal",
    "BudgetExceededError",
    "calibrate_rho",
    "compose",
    "compute_marginal",
    "consolidate",
    "CrpProblem",
    "CrpSolution",
    "DataTable",
    "decomp",
    "decompose_full",
    "Domain",
    "downward_closure",
    "exp_mech_select",
    "GremEngine",
    "initialize",
    "lazy_update",
    "Marginal",
    "MarginalEstimateSet",
    "measure_residual",
    "MechanismConfig",
    "MechanismResult",
    "NoisyResidual",
    "p_tau",
    "postprocess",
    "recon",
    "recon_sum",
    "reconstruct_workload",
    "relaxed_closed_form",
    "Residual",
    "ResidualEstimateStore",
    "run_aim_grem",
    "run_batch_planner",
    "run_iid_fixed",
    "selection_score",
    "solve_crp",
    "subsets",
    "v_tau",
    "workload_errors",
    "zcdp_log_delta",
    "zcdp_to_delta",
]
