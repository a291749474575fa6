"""Cover tree over the kernel-induced metric.

The tree is built from induced distances only, so the points never need an
explicit feature representation.  Construction is the recursive batch
algorithm: a call ``_construct(p, near, far, i)`` owns point ``p`` at scale
``i``, where ``near`` holds available points within ``base**i`` of ``p`` and
``far`` those within ``(base**i, F * base**i)``.  The self-child takes the
points within ``base**(i-1)`` as its near set; the remaining near points are
then picked in ascending index order as new children, each taking the
available points within ``base**(i-1)`` of itself (plus its own far band).
Whatever a child leaves unused becomes available again, and what is left at
the end is returned to the caller.

The far factor ``F`` selects between two trees:

* ``strict=False`` (default), ``F = base``.  Cheap to build; every node's
  descendants lie within ``base**(scale+1)`` and the children of a node are
  pairwise separated by more than ``base**(scale-1)``.
* ``strict=True``, ``F = base / (base - 1)``.  Separation then holds between
  *all* nodes at the same scale, at the price of a looser descendant bound
  ``base**(scale+1) / (base - 1)`` and a noticeably more expensive build for
  small bases.  For ``base = 2`` the two coincide.

The driver places dataset index 0 at the root, at the smallest scale whose
radius covers every other point, and calls ``_construct`` once with an empty
far set.

Only the explicit representation is stored: a node whose only child would be
its self-child is replaced by that child, and chains of such levels are
skipped in a single step.  Points at distance exactly zero from a node's
point are kept in a duplicates bucket on that point's leaf.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .kernels import Dataset, EvalCounter, Kernel, KernelError, build_self_kernel_cache

__all__ = [
    "DEFAULT_BASE",
    "CoverNode",
    "CoverTree",
    "EmptyDatasetError",
    "split",
    "construct",
    "validate_invariants",
    "tree_stats",
    "far_factor",
    "point_levels",
    "ValidationReport",
]

DEFAULT_BASE = 1.3

_EMPTY_IDX = np.empty(0, dtype=np.int64)
_EMPTY_D = np.empty(0, dtype=np.float64)


class EmptyDatasetError(KernelError):
    """Raised when building an index over zero points."""


class CoverNode:
    """One explicit node.

    ``furthest`` is the exact largest distance from ``point`` to any point in
    the subtree (duplicates included); ``parent_distance`` is the distance to
    the parent's point, 0 for the root and for self-children.
    """

    __slots__ = ("point", "scale", "children", "furthest", "parent_distance", "subtree_size", "duplicates")

    def __init__(self, point, scale, children=(), furthest=0.0, parent_distance=0.0,
                 subtree_size=1, duplicates=()):
        self.point = int(point)
        self.scale = int(scale)
        self.children = list(children)
        self.furthest = float(furthest)
        self.parent_distance = float(parent_distance)
        self.subtree_size = int(subtree_size)
        self.duplicates = tuple(int(d) for d in duplicates)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __repr__(self):
        return (f"CoverNode(point={self.point}, scale={self.scale}, children={len(self.children)}, "
                f"furthest={self.furthest:.6g}, size={self.subtree_size})")


@dataclass(eq=False)
class CoverTree:
    root: CoverNode
    base: float
    dataset: Dataset
    kernel: Kernel
    construction_evals: int = 0
    strict: bool = False
    _space: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.dataset)

    @property
    def space(self):
        if self._space is None:
            self._space = self.dataset.space(self.kernel)
        return self._space

    def radius(self, scale: int) -> float:
        return self.base ** scale

    @property
    def far_factor(self) -> float:
        return far_factor(self.base, self.strict)

    def descendant_bound(self, scale: int) -> float:
        """Upper bound on the distance from a scale-``scale`` node to its descendants."""
        return self.far_factor * self.base ** scale

    def nodes(self):
        """Explicit nodes in preorder (children in stored order)."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def node_count(self) -> int:
        return sum(1 for _ in self.nodes())

    def subtree_points(self, node: CoverNode) -> np.ndarray:
        """All dataset indices under ``node`` (its own point and duplicates included)."""
        out, stack = [], [node]
        while stack:
            cur = stack.pop()
            if cur.children:
                # self-child carries the same point
                stack.extend(cur.children)
            else:
                out.append(cur.point)
                out.extend(cur.duplicates)
        return np.asarray(sorted(out), dtype=np.int64)


def split(pivot_distances, radius: float, point_sets, far_radius: float | None = None):
    """Partition point sets around a pivot.

    Parameters
    ----------
    pivot_distances : mapping
        Distance from the pivot for every point in ``point_sets``.
    radius : float
        Points at distance ``<= radius`` go to ``near``.
    point_sets : list of set
        Modified in place: the returned points are removed from them.
    far_radius : float, optional
        Exclusive upper limit of ``far``; defaults to ``2 * radius``.

    Returns
    -------
    near, far : set
    """
    if far_radius is None:
        far_radius = 2.0 * radius
    near, far = set(), set()
    for s in point_sets:
        for x in s:
            d = pivot_distances[x]
            if d <= radius:
                near.add(x)
            elif d < far_radius:
                far.add(x)
        s -= near
        s -= far
    return near, far


def far_factor(base: float, strict: bool = False) -> float:
    """Width of the far band, as a multiple of the current cover radius."""
    return base / (base - 1.0) if strict else base


def _scale_ceil(d: float, base: float) -> int:
    """Smallest integer ``i`` with ``d <= base**i``."""
    i = math.ceil(math.log(d) / math.log(base))
    while base ** i < d:
        i += 1
    while base ** (i - 1) >= d:
        i -= 1
    return i


class _Builder:
    def __init__(self, space, base, counter, strict=False):
        self.space = space
        self.base = base
        self.far = far_factor(base, strict)
        self.counter = counter
        self._radii = {}

    def radius(self, i):
        r = self._radii.get(i)
        if r is None:
            r = self._radii[i] = self.base ** i
        return r

    def build(self) -> CoverNode:
        n = self.space.n
        if n == 1:
            return CoverNode(0, 0)
        others = np.arange(1, n, dtype=np.int64)
        d = self.space.distances(0, others, self.counter)
        zero = d == 0.0
        dups = others[zero].tolist()
        if zero.all():
            return CoverNode(0, 0, subtree_size=n, duplicates=dups)
        near, near_d = others[~zero], d[~zero]
        i = _scale_ceil(float(near_d.max()), self.base)
        root, rest = self._construct(0, near, near_d, _EMPTY_IDX, _EMPTY_D, i, dups, root=True)
        assert rest.size == 0
        return root

    def _construct(self, p, near_idx, near_d, far_idx, far_d, i, dups, root=False):
        zero = near_d == 0.0
        if zero.any():
            dups = dups + near_idx[zero].tolist()
            near_idx, near_d = near_idx[~zero], near_d[~zero]
        if near_idx.size == 0:
            return CoverNode(p, i, subtree_size=1 + len(dups), duplicates=dups), far_idx

        # Levels where every near point is already within base**(i-1) would only
        # hold a self-child; skip them.  Along the way the self-child would
        # only ever have been offered the far points inside its own band.
        j = _scale_ceil(float(near_d.max()), self.base)
        if j < i:
            keep = far_d < self.far * self.radius(j)
            node, rest = self._construct(p, near_idx, near_d, far_idx[keep], far_d[keep], j, dups)
            return node, np.concatenate([rest, far_idx[~keep]])

        all_idx = np.concatenate([near_idx, far_idx])
        all_d = np.concatenate([near_d, far_d])
        order = np.argsort(all_idx, kind="stable")
        all_idx, all_d = all_idx[order], all_d[order]
        alive = np.ones(all_idx.size, dtype=bool)
        r_lo, r_hi = self.radius(i - 1), self.radius(i)
        f_lo = self.far * r_lo

        s_near = all_d <= r_lo
        s_far = (all_d > r_lo) & (all_d < f_lo)
        self_child, unused = self._construct(
            p, all_idx[s_near], all_d[s_near], all_idx[s_far], all_d[s_far], i - 1, dups
        )
        alive[s_near | s_far] = False
        alive[np.searchsorted(all_idx, unused)] = True
        children = [self_child]

        while True:
            candidates = alive & (all_d <= r_hi)
            if not candidates.any():
                break
            qpos = int(np.argmax(candidates))
            q = int(all_idx[qpos])
            alive[qpos] = False
            pool = np.flatnonzero(alive)
            dq = self.space.distances(q, all_idx[pool], self.counter)
            q_near = dq <= r_lo
            q_far = (dq > r_lo) & (dq < f_lo)
            child, unused = self._construct(
                q, all_idx[pool[q_near]], dq[q_near], all_idx[pool[q_far]], dq[q_far], i - 1, []
            )
            child.parent_distance = float(all_d[qpos])
            children.append(child)
            alive[pool[q_near | q_far]] = False
            alive[np.searchsorted(all_idx, unused)] = True

        if len(children) == 1 and not root:
            return self_child, all_idx[alive]
        consumed = ~alive
        furthest = float(all_d[consumed].max()) if consumed.any() else 0.0
        node = CoverNode(p, i, children, furthest, subtree_size=sum(c.subtree_size for c in children))
        return node, all_idx[alive]


def construct(dataset: Dataset, kernel: Kernel, base: float = DEFAULT_BASE,
              counter: EvalCounter | None = None, strict: bool = False) -> CoverTree:
    """Build a cover tree over ``dataset`` in the metric induced by ``kernel``.

    Parameters
    ----------
    dataset : Dataset
    kernel : Kernel
    base : float
        Scale base, must exceed 1.
    counter : EvalCounter, optional
        Receives the construction cost in addition to ``construction_evals``.
    strict : bool
        Build with the wider far band so that separation holds between all
        nodes of a scale, not only between siblings.

    Notes
    -----
    The self-kernel cache is built first if missing; its ``n`` evaluations are
    counted in ``construction_evals`` as well.  Every other evaluation is one
    induced-distance computation.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot build a cover tree over an empty dataset")
    if not base > 1.0:
        raise ValueError(f"tree base must be > 1, got {base}")
    local = EvalCounter()
    dataset = build_self_kernel_cache(kernel, dataset, local)
    builder = _Builder(dataset.space(kernel), float(base), local, strict)
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10000))
    try:
        root = builder.build()
    finally:
        sys.setrecursionlimit(limit)
    if counter is not None:
        counter.add(local.count)
    return CoverTree(root, float(base), dataset, kernel, local.count, bool(strict))


@dataclass
class Check:
    passed: bool = True
    offender: tuple | None = None
    detail: str = ""

    def fail(self, node, detail):
        if self.passed:
            self.passed = False
            self.offender = (node.point, node.scale)
            self.detail = detail


@dataclass
class ValidationReport:
    checks: dict

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> dict:
        return {name: c for name, c in self.checks.items() if not c.passed}

    def __str__(self):
        lines = []
        for name, c in self.checks.items():
            status = "pass" if c.passed else f"FAIL at node {c.offender}: {c.detail}"
            lines.append(f"{name}: {status}")
        return "\n".join(lines)


_CHECKS = ("nesting", "covering", "separation", "parent_distance_cache",
           "furthest_cache", "descendant_bound", "subtree_size", "partition", "node_count")


def validate_invariants(tree: CoverTree) -> ValidationReport:
    """Recompute every cached quantity and structural invariant from scratch.

    Distances are recomputed through a scratch counter, so the tree's own
    accounting is untouched.  Separation is checked among the children of each
    node, which all live at the scale just below their parent; for trees built
    with ``strict=True`` it is additionally checked between every pair of
    points that are simultaneously present at some scale.
    """
    checks = {name: Check() for name in _CHECKS}
    space = tree.space
    scratch = EvalCounter()

    def dist(a, idx):
        return space.distances(a, idx, scratch)

    seen = np.zeros(tree.n, dtype=np.int64)
    count = 0

    def walk(node):
        nonlocal count
        count += 1
        if node.is_leaf:
            pts = np.asarray((node.point,) + node.duplicates, dtype=np.int64)
        else:
            first = node.children[0]
            if first.point != node.point:
                checks["nesting"].fail(node, "first child is not the self-child")
            for c in node.children:
                if c.scale >= node.scale:
                    checks["nesting"].fail(node, f"child scale {c.scale} not below {node.scale}")
            others = node.children[1:]
            if first.point == node.point and first.parent_distance != 0.0:
                checks["parent_distance_cache"].fail(first, "self-child with nonzero parent distance")
            if others:
                idx = np.array([c.point for c in others], dtype=np.int64)
                d = dist(node.point, idx)
                cover = tree.radius(node.scale)
                for c, dc in zip(others, d):
                    if dc > cover:
                        checks["covering"].fail(c, f"distance {dc:.6g} to parent exceeds {cover:.6g}")
                    if c.parent_distance != dc:
                        checks["parent_distance_cache"].fail(
                            c, f"cached {c.parent_distance!r} vs recomputed {float(dc)!r}")
                sep = tree.radius(node.scale - 1)
                members = [node.point] + [c.point for c in others]
                for a in range(len(members) - 1):
                    rest = np.array(members[a + 1:], dtype=np.int64)
                    dd = dist(members[a], rest)
                    if np.any(dd <= sep):
                        checks["separation"].fail(
                            node, f"children {members[a]} and {int(rest[np.argmax(dd <= sep)])} "
                                  f"within {sep:.6g}")
            pts = np.concatenate([walk(c) for c in node.children])
        if node.subtree_size != pts.size:
            checks["subtree_size"].fail(node, f"cached {node.subtree_size} vs {pts.size}")
        below = pts[pts != node.point]
        true_far = float(dist(node.point, below).max()) if below.size else 0.0
        if node.furthest != true_far:
            checks["furthest_cache"].fail(node, f"cached {node.furthest!r} vs recomputed {true_far!r}")
        bound = tree.descendant_bound(node.scale)
        if not node.is_leaf and node.furthest > bound:
            checks["descendant_bound"].fail(
                node, f"furthest {node.furthest:.6g} exceeds {bound:.6g}")
        return pts

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10000))
    try:
        pts = walk(tree.root)
    finally:
        sys.setrecursionlimit(limit)
    np.add.at(seen, pts, 1)
    if tree.root.subtree_size != tree.n:
        checks["subtree_size"].fail(tree.root, f"root size {tree.root.subtree_size} != n={tree.n}")
    if not np.all(seen == 1):
        bad = int(np.flatnonzero(seen != 1)[0])
        checks["partition"].fail(tree.root, f"point {bad} appears {int(seen[bad])} times")
    if count > 2 * tree.n:
        checks["node_count"].fail(tree.root, f"{count} explicit nodes for n={tree.n}")
    if tree.strict:
        _check_global_separation(tree, checks["separation"], scratch)
    return ValidationReport(checks)


def point_levels(tree: CoverTree) -> np.ndarray:
    """Coarsest scale at which each point is a node of its own.

    A point first appears as a non-self child at scale ``s`` and stays present
    at every scale ``<= s`` through its self-children.  The root's point gets
    a very large level.  Duplicates are never nodes and are marked with the
    smallest int64 value.
    """
    levels = np.full(tree.n, np.iinfo(np.int64).min, dtype=np.int64)
    levels[tree.root.point] = np.iinfo(np.int64).max
    for node in tree.nodes():
        for c in node.children[1:]:
            levels[c.point] = node.scale - 1
    return levels


def _check_global_separation(tree, check, counter):
    levels = point_levels(tree)
    present = np.flatnonzero(levels != np.iinfo(np.int64).min)
    space = tree.space
    for a, x in enumerate(present[:-1]):
        rest = present[a + 1:]
        d = space.distances(int(x), rest, counter)
        # both points are nodes at every scale up to the smaller level, and
        # the separation radius is largest at that scale
        lv = np.minimum(levels[x], levels[rest]).astype(np.float64)
        sep = np.power(tree.base, lv)
        bad = d <= sep
        if bad.any():
            k = int(np.argmax(bad))
            check.fail(CoverNode(int(x), int(lv[k])),
                       f"points {int(x)} and {int(rest[k])} within {float(sep[k]):.6g}")
            return


def tree_stats(tree: CoverTree) -> dict:
    """Node count, depth, widest fan-out and construction cost."""
    count = leaves = max_children = depth = duplicates = 0
    stack = [(tree.root, 0)]
    while stack:
        node, level = stack.pop()
        count += 1
        depth = max(depth, level)
        max_children = max(max_children, len(node.children))
        duplicates += len(node.duplicates)
        if node.is_leaf:
            leaves += 1
        stack.extend((c, level + 1) for c in node.children)
    return {
        "n": tree.n,
        "nodes": count,
        "leaves": leaves,
        "depth": depth,
        "maxChildren": max_children,
        "duplicates": duplicates,
        "rootScale": tree.root.scale,
        "base": tree.base,
        "constructionEvals": tree.construction_evals,
    }
