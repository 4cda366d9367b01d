"""Algebraic multigrid with aggregation, smoothed, sparsified and GNN-corrected hierarchies."""

from .sparse import (
    SparseMatrix,
    add_on_pattern,
    diag,
    frobenius_diff,
    load_binary,
    load_matrix_market,
    mask_to_pattern,
    save_binary,
    save_matrix_market,
    spgemm,
    spmv,
    transpose,
    triple_product,
)
from .problems import (
    FAMILY_DEFAULTS,
    GeneratedProblem,
    ProblemSpec,
    extract_subgraph,
    gen_adv_diffusion,
    gen_aniso_diffusion,
    gen_geometric,
    gen_poisson2d,
    gen_social_hub,
    gen_temporal_ba,
    gen_watts_strogatz,
    generate,
    normalize_operator,
)
from .hierarchy import (
    Aggregation,
    Hierarchy,
    Level,
    SetupConfig,
    aggregate,
    build_hierarchy,
    dump_hierarchy,
    load_hierarchy,
    operator_complexity,
    smooth_prolongation,
    spsa_coarse,
    strength_graph,
    tentative_prolongation,
)
from .estimator import MultigridSolver
from .export import (
    FAMILY_POLICY,
    FamilyPolicy,
    ResidualBatch,
    TrainingSample,
    export_training_sample,
    gen_residual_batch,
    import_training_sample,
    reference_loss,
    train_cycle_config,
)
from .gnn import (
    CompositeGraph,
    Corrections,
    GnnWeights,
    LatentState,
    augment_hierarchy,
    build_composite,
    gnn_forward_pair,
    load_weights,
    random_weights,
    rggcn_layer,
    save_weights,
    with_zero_decoder,
)
from .cycles import (
    CycleConfig,
    SolveReport,
    convergence_rate,
    fgmres,
    jacobi,
    report_csv_row,
    reports_equal,
    solve_standalone,
    v_cycle,
    vcycle_preconditioner,
    write_history_csv,
)

__version__ = "0.1.0"
