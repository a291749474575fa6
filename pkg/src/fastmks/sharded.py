"""Sharded search: one cover tree per partition of the dataset.

A query is sent to every shard, each shard answers top-k over its own points
(in global indices), and the lists are merged.  Execution here is sequential;
the cost model accounts for what a parallel deployment would pay: the most
expensive shard plus the merge of ``m`` candidate lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cover_tree import DEFAULT_BASE, CoverTree, construct
from .kernels import Dataset, EvalCounter, Kernel, KernelError
from .search import QueryResult, SearchConfig, _check_k, fastmks, top_k_merge

__all__ = ["PARTITIONERS", "ShardError", "Shard", "ShardedIndex", "partition",
           "build_sharded", "sharded_search"]

PARTITIONERS = ("round-robin", "random")


class ShardError(KernelError):
    """Invalid shard configuration."""


@dataclass
class Shard:
    tree: CoverTree
    indices: np.ndarray  # global index of each local point, increasing


@dataclass
class ShardedIndex:
    shards: list
    assignment: np.ndarray  # global index -> shard id
    n: int
    kernel: Kernel
    partitioner: str = "round-robin"

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def construction_evals(self) -> int:
        return sum(s.tree.construction_evals for s in self.shards)


def partition(n: int, m: int, method: str = "round-robin", seed: int = 0) -> list:
    """Split ``range(n)`` into ``m`` sorted index arrays.

    ``round-robin`` sends index ``i`` to shard ``i % m``; ``random`` deals a
    seeded random permutation round-robin.  Either way shard sizes differ by at
    most one.
    """
    if not 1 <= m <= n:
        raise ShardError(f"shard count must satisfy 1 <= m <= n (m={m}, n={n})")
    if method == "round-robin":
        order = np.arange(n, dtype=np.int64)
    elif method == "random":
        order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    else:
        raise ShardError(f"unknown partitioner {method!r}; expected one of {PARTITIONERS}")
    return [np.sort(order[s::m]) for s in range(m)]


def build_sharded(dataset: Dataset, kernel: Kernel, m: int, base: float = DEFAULT_BASE,
                  partitioner: str = "round-robin", seed: int = 0,
                  counter: EvalCounter | None = None, strict: bool = False) -> ShardedIndex:
    """Build ``m`` independent cover trees over a partition of ``dataset``."""
    parts = partition(len(dataset), m, partitioner, seed)
    assignment = np.empty(len(dataset), dtype=np.int64)
    shards = []
    for sid, idx in enumerate(parts):
        assignment[idx] = sid
        tree = construct(dataset.subset(idx), kernel, base, counter, strict=strict)
        shards.append(Shard(tree, idx))
    return ShardedIndex(shards, assignment, len(dataset), kernel, partitioner)


def sharded_search(index: ShardedIndex, query, config: SearchConfig | int = 1,
                   counter: EvalCounter | None = None) -> tuple:
    """Search every shard and merge.

    Returns
    -------
    result : QueryResult
        Global top-k; counts are summed over shards.
    cost : dict
        ``m``, ``perShardEvals``, ``maxShardEvals``, ``totalEvals``,
        ``mergeItems`` and ``parallelCost = maxShardEvals + m``.
    """
    if isinstance(config, (int, np.integer)):
        config = SearchConfig(k=int(config))
    _check_k(config.k, index.n)
    lists, per_shard = [], []
    visited = pruned = dups = 0
    void = False
    sample_counts = []
    for shard in index.shards:
        local_cfg = config.with_k(min(config.k, shard.tree.n))
        if config.mode == "ra" and config.tau >= shard.tree.n:
            # a shard smaller than the rank tolerance is searched exactly
            local_cfg = SearchConfig(k=local_cfg.k, parent_prune=config.parent_prune)
        r = fastmks(shard.tree, query, local_cfg, counter)
        lists.append([(int(shard.indices[i]), v) for i, v in r.hits])
        per_shard.append(r.kernel_evals)
        visited += r.nodes_visited
        pruned += r.nodes_pruned
        dups += r.duplicates_examined
        if r.sample_count is not None:
            sample_counts.append(r.sample_count)
    hits = top_k_merge(lists, config.k)
    if config.mode == "rva":
        void = hits[0][1] <= 0.0
    merge_items = sum(len(h) for h in lists)
    total = sum(per_shard)
    result = QueryResult(
        hits, config.k, kernel_evals=total, nodes_visited=visited, nodes_pruned=pruned,
        mode=config.spec(), guarantee=config.guarantee(), guarantee_void=void,
        sample_count=max(sample_counts) if sample_counts else None,
        duplicates_examined=dups,
    )
    cost = {
        "m": index.m,
        "perShardEvals": per_shard,
        "maxShardEvals": max(per_shard),
        "totalEvals": total,
        "mergeItems": merge_items,
        "parallelCost": max(per_shard) + index.m,
    }
    return result, cost
