"""Coreset selection from cross-modal attention trajectories.

The pipeline clusters training examples by the trajectory of the top
singular values of their cross-modal attention matrices across proxy
checkpoints, then samples a balanced, stability-ranked subset. A toy
single-layer transformer harness numerically verifies the gradient-gap
bounds that justify the pipeline.
"""

from xmas.attn_store import (
    AttentionDump,
    ExampleRecord,
    TrajectoryTable,
    read_attention_dump,
    read_trajectory_table,
    write_attention_dump,
    write_trajectory_table,
)
from xmas.cluster import ClusterModel, cluster_sizes, kmeans
from xmas.select import (
    ClusterTake,
    SelectionResult,
    sample_random_within_clusters,
    select_subset,
)
from xmas.svd_align import (
    AlignmentScore,
    alignment_score,
    extract_cross_modal_block,
    sum_layers,
    top_k_singular_values,
)
from xmas.toy_transformer import (
    BoundConfig,
    BoundReport,
    ToyExample,
    ToyModel,
    estimate_curvature,
    gain_threshold,
    gradient_gap_bound,
    interval_gap_bound,
    verify_bounds,
)
from xmas.trajectory import build_trajectory_table, instability_score, instability_scores

__version__ = "0.1.0"
