"""Max-kernel search: pruning bounds, branch-and-bound over a cover tree, and
the linear-scan oracle.

The tree is traversed best-bound-first.  Every node carries the kernel value
between the query and the node's point (evaluated once per distinct point;
self-children inherit it), and an upper bound on the kernel value between the
query and anything in its subtree.  A node is discarded as soon as its bound
cannot beat the current k-th best value, so the search returns exactly what a
linear scan would, ties included.

Approximate modes only change the discard rule:

``ava``
    discard when the bound cannot beat the k-th best by more than ``eps``.
``rva``
    discard when ``(1 - eps) * bound`` cannot beat a positive k-th best.
``ra``
    exact discarding, but a node whose subtree holds at most
    ``n / sample_count`` points is never expanded; its point stands in for the
    whole subtree.

Hits are ordered by decreasing kernel value, ties broken by increasing point
index.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .cover_tree import CoverTree
from .kernels import Dataset, EvalCounter, Kernel, KernelError

__all__ = [
    "MODES",
    "SearchConfig",
    "SearchError",
    "QueryResult",
    "bound_general",
    "bound_normalized",
    "ra_sample_count",
    "fastmks",
    "fastmks_ava",
    "fastmks_rva",
    "fastmks_ra",
    "linear_scan",
    "search_batch",
    "top_k_merge",
]

MODES = ("exact", "ava", "rva", "ra")


class SearchError(KernelError):
    """Invalid search request (bad k, mode parameters out of range, ...)."""


# --------------------------------------------------------------------------
# bounds


def bound_general(kernel_qp: float, self_kernel_q: float, radius: float) -> float:
    """Upper bound on ``K(q, r)`` over all ``r`` within ``radius`` of ``p``.

    By Cauchy-Schwarz in feature space, ``K(q, r) - K(q, p) <= ||phi(q)|| d(p, r)``.

    Parameters
    ----------
    kernel_qp : float
        ``K(q, p)``.
    self_kernel_q : float
        ``K(q, q)``, non-negative.
    radius : float
        Distance from ``p`` to its furthest descendant.
    """
    return kernel_qp + radius * math.sqrt(max(self_kernel_q, 0.0))


def bound_normalized(kernel_qp: float, scale_radius_sq: float) -> float:
    """Tighter bound for kernels with ``K(x, x) = 1``.

    All points lie on the unit sphere of the feature space, so the best a ball
    of chord radius ``2 * sqrt(s)`` around ``p`` can do is rotate the angle
    between ``q`` and ``p`` by the ball's angular radius.

    Parameters
    ----------
    kernel_qp : float
        ``K(q, p)``; clipped to ``[-1, 1]``.
    scale_radius_sq : float
        ``s = (radius / 2) ** 2`` where ``radius`` is the ball's chord radius.
        ``s > 1`` means the ball reaches the whole sphere.

    Returns
    -------
    float
        ``1`` if the ball reaches ``q``'s direction, otherwise
        ``k (1 - 2s) + 2 sqrt(s) sqrt((1 - k^2)(1 - s))``.
    """
    s = float(scale_radius_sq)
    k = min(1.0, max(-1.0, float(kernel_qp)))
    if s >= 1.0 or k > 1.0 - 2.0 * s:
        return 1.0
    return k * (1.0 - 2.0 * s) + 2.0 * math.sqrt(s) * math.sqrt((1.0 - k * k) * (1.0 - s))


def ra_sample_count(n: int, tau: int, delta: float) -> int:
    """Number of uniform samples after which missing all of the top ``tau``
    points has probability below ``delta``."""
    if not 1 <= tau < n:
        raise SearchError(f"rank tolerance tau must satisfy 1 <= tau < n (tau={tau}, n={n})")
    if not 0.0 < delta < 1.0:
        raise SearchError(f"delta must lie in (0, 1), got {delta}")
    return max(1, math.ceil(math.log(delta) / math.log1p(-tau / n)))


# --------------------------------------------------------------------------
# configuration


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class SearchConfig:
    """What to search for and how approximately.

    Parameters
    ----------
    k : int
        Number of hits.
    mode : {"exact", "ava", "rva", "ra"}
    eps : float, optional
        Tolerance for ``ava`` (absolute, > 0) and ``rva`` (relative, in (0, 1)).
    tau, delta : optional
        Rank tolerance and failure probability for ``ra``.
    parent_prune : bool
        Skip evaluating a child whose subtree cannot matter even with the
        kernel value estimated from the parent's.
    """

    k: int = 1
    mode: str = "exact"
    eps: float | None = None
    tau: int | None = None
    delta: float | None = None
    parent_prune: bool = True

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise SearchError(f"k must be a positive integer, got {self.k!r}")
        if self.mode not in MODES:
            raise SearchError(f"unknown search mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "ava":
            if self.eps is None or not self.eps > 0:
                raise SearchError("ava mode needs eps > 0")
        elif self.mode == "rva":
            if self.eps is None or not 0 < self.eps < 1:
                raise SearchError("rva mode needs 0 < eps < 1")
        elif self.mode == "ra":
            if self.tau is None or self.delta is None:
                raise SearchError("ra mode needs tau and delta")
            if int(self.tau) != self.tau or self.tau < 1:
                raise SearchError(f"tau must be a positive integer, got {self.tau!r}")
            if not 0 < self.delta < 1:
                raise SearchError(f"delta must lie in (0, 1), got {self.delta}")

    @classmethod
    def parse(cls, text: str, k: int = 1, parent_prune: bool = True) -> "SearchConfig":
        """Read a mode spec such as ``"exact"``, ``"ava:eps=0.01"``,
        ``"rva:eps=0.1"`` or ``"ra:tau=100,delta=0.05"``.

        A bare value is accepted for the single-parameter modes (``"ava:0.01"``).
        """
        text = text.strip().lower()
        name, _, rest = text.partition(":")
        name = name.strip()
        if name not in MODES:
            raise SearchError(f"unknown search mode {name!r}; expected one of {MODES}")
        params = {}
        if rest.strip():
            for item in rest.split(","):
                key, eq, value = item.partition("=")
                if not eq:
                    if name in ("ava", "rva") and not params:
                        key, value = "eps", key
                    else:
                        raise SearchError(f"malformed mode parameter {item!r} in {text!r}")
                key, value = key.strip(), value.strip()
                if not re.fullmatch(_NUM, value):
                    raise SearchError(f"mode parameter {key!r} is not a number: {value!r}")
                params[key] = value
        allowed = {"exact": set(), "ava": {"eps"}, "rva": {"eps"}, "ra": {"tau", "delta"}}[name]
        unknown = set(params) - allowed
        if unknown:
            raise SearchError(f"unknown parameter(s) {sorted(unknown)} for mode {name!r}")
        kwargs = {}
        if "eps" in params:
            kwargs["eps"] = float(params["eps"])
        if "delta" in params:
            kwargs["delta"] = float(params["delta"])
        if "tau" in params:
            tau = float(params["tau"])
            if tau != int(tau):
                raise SearchError(f"tau must be an integer, got {params['tau']}")
            kwargs["tau"] = int(tau)
        return cls(k=k, mode=name, parent_prune=parent_prune, **kwargs)

    def spec(self) -> str:
        """Canonical mode text; ``SearchConfig.parse(c.spec(), c.k)`` gives ``c`` back."""
        if self.mode in ("ava", "rva"):
            return f"{self.mode}:eps={_fmt(self.eps)}"
        if self.mode == "ra":
            return f"ra:tau={int(self.tau)},delta={_fmt(self.delta)}"
        return "exact"

    def guarantee(self) -> str:
        """Human-readable statement of what the returned values satisfy."""
        if self.mode == "ava":
            return f"value \u2265 exact \u2212 {_fmt(self.eps)}"
        if self.mode == "rva":
            return f"value \u2265 (1 \u2212 {_fmt(self.eps)})\u00b7exact when exact > 0"
        if self.mode == "ra":
            return f"rank \u2264 {int(self.tau)} with probability \u2265 {_fmt(1.0 - self.delta)}"
        return "exact"

    def with_k(self, k: int) -> "SearchConfig":
        return replace(self, k=k)


# --------------------------------------------------------------------------
# results


@dataclass
class QueryResult:
    """Top-k hits of one query together with its cost.

    ``hits`` is a list of ``(point index, kernel value)`` pairs ordered by
    decreasing value, ties by increasing index.  ``kernel_evals`` counts every
    kernel evaluation the query made, including ``K(q, q)`` for tree searches.
    """

    hits: list
    k: int
    kernel_evals: int = 0
    nodes_visited: int = 0
    nodes_pruned: int = 0
    mode: str = "exact"
    guarantee: str = "exact"
    guarantee_void: bool = False
    sample_count: int | None = None
    duplicates_examined: int = 0

    @property
    def indices(self) -> list:
        return [i for i, _ in self.hits]

    @property
    def values(self) -> list:
        return [v for _, v in self.hits]

    @property
    def best(self) -> tuple:
        return self.hits[0]

    def same_hits(self, other: "QueryResult") -> bool:
        """Bitwise equality of hit indices and values."""
        return self.hits == other.hits

    def to_dict(self) -> dict:
        out = {
            "hits": [{"index": int(i), "value": float(v)} for i, v in self.hits],
            "k": self.k,
            "kernelEvals": self.kernel_evals,
            "nodesVisited": self.nodes_visited,
            "nodesPruned": self.nodes_pruned,
            "mode": self.mode,
            "guarantee": self.guarantee,
        }
        if self.guarantee_void:
            out["guaranteeVoid"] = True
        if self.sample_count is not None:
            out["sampleCount"] = self.sample_count
        return out


def _sorted_hits(pairs: Iterable) -> list:
    return sorted(((int(i), float(v)) for i, v in pairs), key=lambda h: (-h[1], h[0]))


def top_k_merge(lists: Iterable[Sequence], k: int) -> list:
    """Merge several hit lists (global indices) into one top-k list."""
    return _sorted_hits(h for hits in lists for h in hits)[:k]


class _TopK:
    """Running top-k under the (value desc, index asc) order.

    The heap root is the current k-th best: smallest value, and among equal
    values the largest index.
    """

    __slots__ = ("k", "heap")

    def __init__(self, k):
        self.k = k
        self.heap = []

    def offer(self, index: int, value: float) -> None:
        item = (value, -index)
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, item)
        elif item > self.heap[0]:
            heapq.heapreplace(self.heap, item)

    def offer_many(self, indices, values) -> None:
        for i, v in zip(indices.tolist(), values.tolist()):
            self.offer(i, v)

    @property
    def full(self) -> bool:
        return len(self.heap) >= self.k

    @property
    def threshold(self) -> float:
        return self.heap[0][0] if len(self.heap) >= self.k else -math.inf

    def hits(self) -> list:
        return _sorted_hits((-i, v) for v, i in self.heap)


# --------------------------------------------------------------------------
# linear scan


def _check_k(k: int, n: int) -> None:
    if k > n:
        raise SearchError(f"k exceeds n (k={k}, n={n})")


def linear_scan(dataset: Dataset, kernel: Kernel, query, k: int = 1,
                counter: EvalCounter | None = None) -> QueryResult:
    """Evaluate ``K(q, r)`` for every reference point and keep the top ``k``.

    Costs exactly ``n`` evaluations.
    """
    n = len(dataset)
    if k < 1:
        raise SearchError(f"k must be a positive integer, got {k!r}")
    _check_k(k, n)
    space = dataset.space(kernel)
    q = space.prepare(query)
    local = EvalCounter()
    values = space.query_cross(q, np.arange(n, dtype=np.int64), local)
    order = np.lexsort((np.arange(n), -values))[:k]
    hits = [(int(i), float(values[i])) for i in order]
    if counter is not None:
        counter.add(local.count)
    return QueryResult(hits, k, kernel_evals=local.count, nodes_visited=0, nodes_pruned=0)


# --------------------------------------------------------------------------
# tree search


def _prune_rule(config: SearchConfig):
    """Return ``discard(bound, beta)``; must be monotone in ``bound``."""
    if config.mode == "ava":
        eps = float(config.eps)

        def discard(bound, beta):
            return bound - eps < beta - 1e-9 * (1.0 + abs(beta))
    elif config.mode == "rva":
        keep = 1.0 - float(config.eps)

        def discard(bound, beta):
            tol = 1e-9 * (1.0 + abs(beta))
            if beta > 0.0 and bound > 0.0:
                return keep * bound < beta - tol
            return bound < beta - tol
    else:
        def discard(bound, beta):
            return bound < beta - 1e-9 * (1.0 + abs(beta))
    return discard


def fastmks(tree: CoverTree, query, config: SearchConfig | int = 1,
            counter: EvalCounter | None = None) -> QueryResult:
    """Top-k max-kernel search on a cover tree.

    Parameters
    ----------
    tree : CoverTree
    query : array_like or str or bytes
        A point in the kernel's domain.
    config : SearchConfig or int
        Search mode and ``k``; a bare integer means exact top-``k``.
    counter : EvalCounter, optional
        Receives this query's evaluations in addition to
        ``QueryResult.kernel_evals``.

    Notes
    -----
    ``nodes_visited`` counts explicit nodes whose kernel value is known
    (evaluated, or inherited by a self-child); ``nodes_pruned`` counts nodes
    discarded from their parent's value alone, without an evaluation.
    """
    if isinstance(config, (int, np.integer)):
        config = SearchConfig(k=int(config))
    n = tree.n
    _check_k(config.k, n)
    sample_count = None
    leaf_size = 0
    if config.mode == "ra":
        sample_count = ra_sample_count(n, int(config.tau), float(config.delta))
        leaf_size = n / sample_count

    space = tree.space
    q = space.prepare(query)
    local = EvalCounter()
    kqq = space.query_self(q, local)
    root_kqq = math.sqrt(max(kqq, 0.0))
    normalized = tree.kernel.normalized

    if normalized:
        def bound(value, radius):
            return bound_normalized(value, 0.25 * radius * radius)
    else:
        def bound(value, radius):
            return value + radius * root_kqq

    discard = _prune_rule(config)
    parent_prune = config.parent_prune
    top = _TopK(config.k)
    visited = pruned = dups_seen = 0

    root = tree.root
    v_root = float(space.query_cross(q, np.array([root.point], dtype=np.int64), local)[0])
    top.offer(root.point, v_root)
    visited += 1
    seq = 0
    heap = [(-bound(v_root, root.furthest), seq, root, v_root)]

    while heap:
        neg_b, _, node, value = heapq.heappop(heap)
        if discard(-neg_b, top.threshold):
            break
        if node.is_leaf:
            if node.duplicates:
                idx = np.asarray(node.duplicates, dtype=np.int64)
                top.offer_many(idx, space.query_cross(q, idx, local))
                dups_seen += idx.size
            continue
        if leaf_size and top.full and node.subtree_size <= leaf_size:
            continue

        children = node.children
        # the self-child shares the parent's point and value
        fresh = []
        for child in children[1:]:
            if parent_prune and discard(bound(value, child.parent_distance + child.furthest),
                                        top.threshold):
                pruned += 1
            else:
                fresh.append(child)
        if fresh:
            idx = np.fromiter((c.point for c in fresh), dtype=np.int64, count=len(fresh))
            vals = space.query_cross(q, idx, local).tolist()
            visited += len(fresh)
            for c, v in zip(fresh, vals):
                top.offer(c.point, v)
        else:
            vals = []
        for child, v in zip([children[0]] + fresh, [value] + vals):
            if child is children[0]:
                visited += 1
            if child.is_leaf and not child.duplicates:
                continue
            b = bound(v, child.furthest)
            if discard(b, top.threshold):
                continue
            seq += 1
            heapq.heappush(heap, (-b, seq, child, v))

    if counter is not None:
        counter.add(local.count)
    hits = top.hits()
    void = config.mode == "rva" and (not hits or hits[0][1] <= 0.0)
    return QueryResult(
        hits, config.k, kernel_evals=local.count, nodes_visited=visited, nodes_pruned=pruned,
        mode=config.spec(), guarantee=config.guarantee(), guarantee_void=void,
        sample_count=sample_count, duplicates_examined=dups_seen,
    )


def fastmks_ava(tree: CoverTree, query, k: int, eps: float,
                counter: EvalCounter | None = None, parent_prune: bool = True) -> QueryResult:
    """Search whose i-th hit is within ``eps`` of the exact i-th best value."""
    return fastmks(tree, query, SearchConfig(k=k, mode="ava", eps=eps, parent_prune=parent_prune),
                   counter)


def fastmks_rva(tree: CoverTree, query, k: int, eps: float,
                counter: EvalCounter | None = None, parent_prune: bool = True) -> QueryResult:
    """Search whose i-th hit is at least ``(1 - eps)`` times the exact i-th best,
    whenever that value is positive.  ``guarantee_void`` is set if the best
    value found is not positive."""
    return fastmks(tree, query, SearchConfig(k=k, mode="rva", eps=eps, parent_prune=parent_prune),
                   counter)


def fastmks_ra(tree: CoverTree, query, tau: int, delta: float, k: int = 1,
               counter: EvalCounter | None = None, parent_prune: bool = True) -> QueryResult:
    """Search whose best hit ranks within the top ``tau`` with probability at
    least ``1 - delta``."""
    return fastmks(tree, query,
                   SearchConfig(k=k, mode="ra", tau=tau, delta=delta, parent_prune=parent_prune),
                   counter)


@dataclass
class BatchResult:
    results: list
    kernel_evals: int = 0
    n: int = 0

    @property
    def speedup(self) -> float:
        return len(self.results) * self.n / self.kernel_evals if self.kernel_evals else math.inf


def search_batch(tree: CoverTree, queries: Sequence, config: SearchConfig | int = 1,
                 counter: EvalCounter | None = None) -> BatchResult:
    """Run :func:`fastmks` for every query; totals are summed afterwards."""
    results = [fastmks(tree, q, config) for q in queries]
    total = sum(r.kernel_evals for r in results)
    if counter is not None:
        counter.add(total)
    return BatchResult(results, total, tree.n)
