"""Spectral convolutions on heterogeneous graphs via positive
sum-of-squares polynomials in per-edge-type shift operators."""

from .graph import (
    LAPLACIAN,
    NORMALIZED_ADJACENCY,
    HeteroGraph,
    ShiftOperator,
    build_subgraphs,
    laplacian,
    normalize,
    transpose_operator,
)
from .words import (
    ExpandedFilter,
    SosFilter,
    TermBudget,
    count_all_words,
    enumerate_words,
    expand_sos,
    term_budget,
)
from .conv import (
    apply_g,
    apply_g_transpose,
    apply_sos,
    decoupled_forward,
    mhgcn_filter,
    precompute_propagations,
)
from .model import (
    Model,
    TrainConfig,
    TrainResult,
    evaluate,
    forward,
    init_model,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
    train,
)
from .verify import (
    OptimizationEnergy,
    check_psd,
    decoupling_equivalence,
    dense_filter,
    lemma1_convolution,
    pruning_soundness,
    run_verification,
)
from .data import DatasetBundle, SyntheticSpec, generate_synthetic, load_dataset, save_dataset

__version__ = "0.1.0"
