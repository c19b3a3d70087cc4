"""Hybrid Bayesian network structure learning for high-dimensional, large-sample data."""

from .citests import (
    CorrelationMatrix,
    TestResult,
    correlation_matrix,
    fisher_z_test,
    g2_test,
    partial_correlation,
    spearman_test,
    x2_test,
)
from .data import (
    CategoricalDataset,
    ContinuousDataset,
    Cpdag,
    Dag,
    EdgeConstraints,
    Skeleton,
    graph_to_dot,
    graph_to_json,
    load_csv,
    topological_order,
)
from .metrics import BenchRecord, Scenario, dag_to_cpdag, run_benchmark, shd, skeleton_metrics
from .pipeline import LearnResult, learn
from .robust import fast_mcd, remove_outliers, rmcd_outliers
from .search import ScoreSpec, SearchConfig, hc_search, local_score, tabu_search
from .simulate import (
    CategoricalBn,
    GaussianBn,
    inject_outliers,
    random_dag,
    random_gaussian_bn,
    sample_categorical,
    sample_gaussian,
)
from .skeleton import SkeletonConfig, fedhc_skeleton, mmhc_skeleton, pchc_skeleton

__version__ = "0.1.0"
