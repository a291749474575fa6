"""Dataset hardness measures and speedup reporting.

* the expansion constant of the kernel-induced metric, computed exactly from
  all pairwise distances;
* an estimate of the directional concentration constant, from sampled
  dataset directions and a greedy ball cover;
* speedup of tree search over linear scan, measured in kernel evaluations.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .kernels import Dataset, EvalCounter, Kernel, KernelError, build_self_kernel_cache

__all__ = [
    "DEFAULT_CAP",
    "GAMMA_METHOD",
    "CapExceededError",
    "HardnessReport",
    "pairwise_distances",
    "expansion_constant",
    "greedy_cover_count",
    "directional_concentration_estimate",
    "hardness_report",
    "speedup_report",
]

DEFAULT_CAP = 5000
GAMMA_METHOD = "sampled-direction greedy cover"


class CapExceededError(KernelError):
    """The dataset is too large for an all-pairs computation."""


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise CapExceededError(
            f"n={n} exceeds the all-pairs cap of {cap}; pass sample=<m> (CLI: --sample) "
            f"to compute on a random subset, or raise the cap")


def pairwise_distances(dataset: Dataset, kernel: Kernel,
                       counter: EvalCounter | None = None) -> np.ndarray:
    """Full ``n x n`` induced-distance matrix (``n(n-1)/2`` evaluations plus the
    self-kernel cache)."""
    dataset = build_self_kernel_cache(kernel, dataset, counter)
    space = dataset.space(kernel)
    n = len(dataset)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n - 1):
        rest = np.arange(i + 1, n, dtype=np.int64)
        d = space.distances(i, rest, counter)
        out[i, i + 1:] = d
        out[i + 1:, i] = d
    return out


def _maybe_sample(dataset: Dataset, sample: int | None, seed: int) -> Dataset:
    if sample is None or sample >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(dataset), size=sample, replace=False))
    return dataset.subset(idx)


def expansion_constant(dataset: Dataset, kernel: Kernel, cap: int = DEFAULT_CAP,
                       sample: int | None = None, seed: int = 0,
                       counter: EvalCounter | None = None) -> float:
    """Smallest ``c >= 2`` with ``|B(p, 2r)| <= c |B(p, r)|`` for every point
    ``p`` and radius ``r > 0`` (closed balls over the dataset).

    Ball sizes around ``p`` only change at radii equal to a distance from
    ``p`` (for the inner ball) or half of one (for the doubled ball), so the
    supremum over all ``r`` is a maximum over those candidates.

    Parameters
    ----------
    cap : int
        Largest ``n`` for which the all-pairs computation is attempted.
    sample : int, optional
        Compute on a seeded random subset of this size instead.
    """
    dataset = _maybe_sample(dataset, sample, seed)
    n = len(dataset)
    _check_cap(n, cap)
    if n <= 1:
        return 2.0
    dist = pairwise_distances(dataset, kernel, counter)
    best = 1.0
    for row in dist:
        d = np.sort(row)
        pos = d[d > 0.0]
        if pos.size == 0:
            continue
        radii = np.concatenate([pos, 0.5 * pos])
        inner = np.searchsorted(d, radii, side="right")
        outer = np.searchsorted(d, 2.0 * radii, side="right")
        best = max(best, float(np.max(outer / inner)))
    return max(2.0, best)


def greedy_cover_count(dist: np.ndarray, delta: float) -> int:
    """Greedy point-centred cover of a set given its distance matrix.

    Repeatedly takes the lowest-index uncovered point and marks everything
    within ``2 * delta`` of it as covered; returns the number of picks.
    """
    m = dist.shape[0]
    if m == 0:
        return 0
    uncovered = np.ones(m, dtype=bool)
    count = 0
    while uncovered.any():
        c = int(np.argmax(uncovered))
        uncovered &= ~(dist[c] <= 2.0 * delta)
        uncovered[c] = False
        count += 1
    return count


def directional_concentration_estimate(dataset: Dataset, kernel: Kernel,
                                       direction_samples: int = 20, interval_samples: int = 20,
                                       seed: int = 0, cap: int = DEFAULT_CAP,
                                       directions=None,
                                       counter: EvalCounter | None = None) -> float:
    """Estimate of the directional concentration constant.

    Directions are feature-space images of sampled dataset points,
    ``u = phi(x) / ||phi(x)||``, so projections are ``K(x, r) / sqrt(K(x, x))``.
    For each direction and each sampled ``(p, delta)`` the points whose
    projection lies within ``delta`` of ``p``'s are greedily covered (see
    :func:`greedy_cover_count`); the largest count is returned.

    This is a heuristic: only dataset directions are tried, balls are centred
    on data points, and the greedy count is neither a lower nor an upper bound
    on the optimal cover in general.  Treat it as a diagnostic, not the
    constant itself.

    Parameters
    ----------
    direction_samples, interval_samples : int
        Number of directions, and of ``(p, delta)`` pairs per direction.
    directions : sequence of int, optional
        Use these dataset indices as directions instead of sampling.
    """
    n = len(dataset)
    _check_cap(n, cap)
    if n <= 1:
        return 1.0
    rng = np.random.default_rng(seed)
    dataset = build_self_kernel_cache(kernel, dataset, counter)
    space = dataset.space(kernel)
    sk = dataset.self_kernels
    all_idx = np.arange(n, dtype=np.int64)
    if directions is None:
        m = min(n, direction_samples)
        directions = np.sort(rng.choice(n, size=m, replace=False))
    best = 1
    for x in np.asarray(directions, dtype=np.int64):
        if sk[x] <= 0.0:
            continue
        proj = space.cross(int(x), all_idx, counter) / np.sqrt(sk[x])
        for _ in range(interval_samples):
            p = int(rng.integers(n))
            other = int(rng.integers(n))
            delta = float(space.distances(p, [other], counter)[0]) if other != p else 0.0
            if delta <= 0.0:
                continue
            members = np.flatnonzero(np.abs(proj - proj[p]) <= delta)
            if members.size <= best:
                continue
            sub = dataset.subset(members)
            count = greedy_cover_count(pairwise_distances(sub, kernel, counter), delta)
            best = max(best, count)
    return float(best)


@dataclass
class HardnessReport:
    """Hardness measures of a dataset under a kernel."""

    expansion_constant: float
    gamma_estimate: float
    fingerprint: str
    kernel: str
    gamma_method: str = GAMMA_METHOD
    n: int = 0
    sampled: bool = False

    def to_dict(self) -> dict:
        return {
            "expansionConstant": self.expansion_constant,
            "gammaEstimate": self.gamma_estimate,
            "gammaMethod": self.gamma_method,
            "datasetFingerprint": self.fingerprint,
            "kernel": self.kernel,
            "n": self.n,
            "sampled": self.sampled,
        }


def hardness_report(dataset: Dataset, kernel: Kernel, direction_samples: int = 20,
                    interval_samples: int = 20, seed: int = 0, cap: int = DEFAULT_CAP,
                    sample: int | None = None) -> HardnessReport:
    """Both hardness measures; with ``sample`` they are computed on a seeded
    random subset."""
    sub = _maybe_sample(dataset, sample, seed)
    c = expansion_constant(sub, kernel, cap=cap)
    g = directional_concentration_estimate(sub, kernel, direction_samples, interval_samples,
                                           seed=seed, cap=cap)
    return HardnessReport(c, g, dataset.fingerprint(), kernel.spec(), n=len(dataset),
                          sampled=len(sub) < len(dataset))


def speedup_report(results, n: int, construction_evals: int | None = None) -> dict:
    """Speedup over linear scan in kernel evaluations.

    ``speedup = Q n / sum(kernel_evals)`` over the ``Q`` results, plus the
    same figure per ``k`` and, if ``construction_evals`` is given, the speedup
    with construction amortized over the batch.
    """
    results = list(results)
    q = len(results)
    total = sum(r.kernel_evals for r in results)
    by_k = defaultdict(lambda: [0, 0])
    for r in results:
        by_k[r.k][0] += 1
        by_k[r.k][1] += r.kernel_evals
    out = {
        "queries": q,
        "n": n,
        "totalKernelEvals": total,
        "meanKernelEvals": total / q if q else 0.0,
        "speedup": (q * n / total) if total else None,
        "perK": [
            {"k": k, "queries": cnt, "totalKernelEvals": ev,
             "speedup": (cnt * n / ev) if ev else None}
            for k, (cnt, ev) in sorted(by_k.items())
        ],
    }
    if construction_evals is not None:
        out["constructionEvals"] = construction_evals
        denom = total + construction_evals
        out["amortizedSpeedup"] = (q * n / denom) if denom else None
    return out

