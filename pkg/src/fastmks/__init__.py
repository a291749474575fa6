"""Exact and approximate max-kernel search on cover trees built in kernel space."""

from .cover_tree import (
    DEFAULT_BASE,
    CoverNode,
    CoverTree,
    EmptyDatasetError,
    construct,
    split,
    tree_stats,
    validate_invariants,
)
from .kernels import (
    Dataset,
    DomainError,
    EvalCounter,
    Kernel,
    KernelError,
    NonPSDError,
    ZeroNormError,
    build_self_kernel_cache,
    induced_distance,
    kernel_eval,
)
from .search import (
    QueryResult,
    SearchConfig,
    SearchError,
    bound_general,
    bound_normalized,
    fastmks,
    fastmks_ava,
    fastmks_ra,
    fastmks_rva,
    linear_scan,
    ra_sample_count,
)
from .sharded import ShardedIndex, build_sharded, sharded_search
from .storage import load_tree, save_tree

__version__ = "1.0.0"

__all__ = [
    "DEFAULT_BASE",
    "CoverNode",
    "CoverTree",
    "Dataset",
    "DomainError",
    "EmptyDatasetError",
    "EvalCounter",
    "Kernel",
    "KernelError",
    "NonPSDError",
    "QueryResult",
    "SearchConfig",
    "SearchError",
    "ShardedIndex",
    "ZeroNormError",
    "bound_general",
    "bound_normalized",
    "build_self_kernel_cache",
    "build_sharded",
    "construct",
    "fastmks",
    "fastmks_ava",
    "fastmks_ra",
    "fastmks_rva",
    "induced_distance",
    "kernel_eval",
    "linear_scan",
    "load_tree",
    "ra_sample_count",
    "save_tree",
    "sharded_search",
    "split",
    "tree_stats",
    "validate_invariants",
]
