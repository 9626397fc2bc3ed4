"""Bayesian tree-ensemble regression with variable selection."""

from .benchmark import (
    BenchmarkError,
    EquationSpec,
    GridPoint,
    GridRowResult,
    MetricsRecord,
    REGISTRY,
    compute_metrics,
    generate_dataset,
    generate_dataset_with_info,
    run_grid,
)
from .data import (
    CutpointGrid,
    DataError,
    Dataset,
    DecisionTree,
    EnsembleState,
    FitConfig,
    PosteriorTrace,
    predict_ensemble,
    predict_tree,
    validate_dataset,
)
from .methods import (
    METHOD_NAMES,
    METHOD_SPECS,
    MethodResult,
    RunConfig,
    fit_replicates,
    resolve_l_rep,
    run_method,
    select_with_method,
)
from .sampler import (
    EnsembleSampler,
    FitError,
    LeafSufficientStats,
    RuleExhaustedError,
    TreePriors,
    birth_ratio,
    calibrate_lambda,
    death_ratio,
    fit,
    leaf_posterior,
    p_split,
    sample_alpha,
    sample_leaf_value,
    sample_sigma2,
    sigma2_posterior,
    split_loglik_gain,
    update_split_probs,
)
from .selection import (
    Dendrogram,
    SelectionResult,
    cluster_select,
    cut_two,
    hac_average_linkage,
    mpm_select,
    permutation_null,
    threshold_gmax,
    threshold_gse,
    threshold_local,
)
from .summaries import (
    ImportanceVector,
    RankVector,
    SummaryMatrix,
    build_summary_matrix,
    metropolis_importance,
    mpvip,
    rank_descending,
    vc,
    vip,
)
from .traceio import (
    GridFileError,
    ResultsDocument,
    TraceFormatError,
    build_results_document,
    load_grid_file,
    read_dataset_csv,
    read_metrics_csv,
    read_trace,
    write_aggregate_csv,
    write_importance_csv,
    write_metrics_csv,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkError",
    "CutpointGrid",
    "DataError",
    "Dataset",
    "DecisionTree",
    "Dendrogram",
    "EnsembleSampler",
    "EnsembleState",
    "EquationSpec",
    "FitConfig",
    "FitError",
    "GridFileError",
    "GridPoint",
    "GridRowResult",
    "ImportanceVector",
    "LeafSufficientStats",
    "METHOD_NAMES",
    "METHOD_SPECS",
    "MethodResult",
    "MetricsRecord",
    "PosteriorTrace",
    "RankVector",
    "REGISTRY",
    "ResultsDocument",
    "RuleExhaustedError",
    "RunConfig",
    "SelectionResult",
    "SummaryMatrix",
    "TraceFormatError",
    "TreePriors",
    "birth_ratio",
    "build_results_document",
    "build_summary_matrix",
    "calibrate_lambda",
    "cluster_select",
    "compute_metrics",
    "cut_two",
    "death_ratio",
    "fit",
    "fit_replicates",
    "generate_dataset",
    "generate_dataset_with_info",
    "hac_average_linkage",
    "leaf_posterior",
    "load_grid_file",
    "metropolis_importance",
    "mpm_select",
    "mpvip",
    "p_split",
    "permutation_null",
    "predict_ensemble",
    "predict_tree",
    "rank_descending",
    "read_dataset_csv",
    "read_metrics_csv",
    "read_trace",
    "resolve_l_rep",
    "run_grid",
    "run_method",
    "sample_alpha",
    "sample_leaf_value",
    "sample_sigma2",
    "select_with_method",
    "sigma2_posterior",
    "split_loglik_gain",
    "threshold_gmax",
    "threshold_gse",
    "threshold_local",
    "update_split_probs",
    "validate_dataset",
    "vc",
    "vip",
    "write_aggregate_csv",
    "write_importance_csv",
    "write_metrics_csv",
    "write_trace",
]
