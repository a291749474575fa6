"""Kernels, datasets, and exact accounting of kernel evaluations.

Every quantity the index and the search use (kernel values, self-kernels,
induced distances) is produced here, and every kernel invocation goes through
an :class:`EvalCounter`.  Batched evaluations tick the counter once per pair.

Vector kernels accumulate dot products column by column in a fixed order, so
``K(x, y)`` is bitwise identical to ``K(y, x)`` and a value does not depend on
which batch it was computed in.  The search relies on that to reproduce the
linear scan exactly.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "KINDS",
    "KernelError",
    "DomainError",
    "ZeroNormError",
    "NonPSDError",
    "Kernel",
    "EvalCounter",
    "Dataset",
    "KernelSpace",
    "kernel_eval",
    "induced_distance",
    "build_self_kernel_cache",
]

KINDS = ("linear", "polynomial", "cosine", "gaussian", "tanh", "pspectrum")

# Negative radicands this close to zero are rounding noise, scaled by the
# magnitude of the self-kernels involved.
PSD_TOLERANCE = 1e-9


class KernelError(ValueError):
    """Base class for kernel evaluation failures."""


class DomainError(KernelError):
    """A point was handed to a kernel that does not accept its type."""


class ZeroNormError(KernelError):
    """Cosine kernel evaluated on a zero vector."""


class NonPSDError(KernelError):
    """The induced squared distance came out clearly negative."""


# Parameter names per kind, in canonical spec order: (spec key, attribute, type, default)
_PARAMS = {
    "linear": (),
    "polynomial": (("d", "degree", int, 10), ("c", "offset", float, 1.0)),
    "cosine": (),
    "gaussian": (("sigma", "sigma", float, 1.0),),
    "tanh": (("s", "scale", float, 1.0), ("c", "offset", float, 0.0)),
    "pspectrum": (("p", "p", int, 3),),
}


def _fmt(value) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


@dataclass(frozen=True)
class Kernel:
    """A named Mercer kernel with its parameters.

    Unused parameters stay ``None``; the relevant ones are filled with their
    defaults (polynomial ``d=10, c=1``, gaussian ``sigma=1``, tanh ``s=1,
    c=0``, pspectrum ``p=3``).
    """

    kind: str
    degree: int | None = None
    offset: float | None = None
    sigma: float | None = None
    scale: float | None = None
    p: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        allowed = {attr for _, attr, _, _ in _PARAMS[self.kind]}
        for attr in ("degree", "offset", "sigma", "scale", "p"):
            value = getattr(self, attr)
            if attr not in allowed:
                if value is not None:
                    raise KernelError(f"{self.kind} kernel takes no parameter {attr!r}")
                continue
            _, _, typ, default = next(t for t in _PARAMS[self.kind] if t[1] == attr)
            object.__setattr__(self, attr, typ(default if value is None else value))
        if self.kind == "polynomial" and self.degree < 1:
            raise KernelError("polynomial degree must be >= 1")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise KernelError("gaussian bandwidth must be > 0")
        if self.kind == "pspectrum" and self.p < 1:
            raise KernelError("pspectrum gram length must be >= 1")

    @property
    def normalized(self) -> bool:
        """True when ``K(x, x) = 1`` for every point."""
        return self.kind in ("cosine", "gaussian")

    @property
    def psd(self) -> bool:
        """False for tanh, which is not Mercer in general."""
        return self.kind != "tanh"

    @property
    def domain(self) -> str:
        return "string" if self.kind == "pspectrum" else "vector"

    def spec(self) -> str:
        params = _PARAMS[self.kind]
        if not params:
            return self.kind
        body = ",".join(f"{key}={_fmt(getattr(self, attr))}" for key, attr, _, _ in params)
        return f"{self.kind}:{body}"

    @classmethod
    def parse(cls, text: str) -> "Kernel":
        """Parse ``"polynomial:d=10,c=1"``-style specs."""
        kind, _, body = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind not in KINDS:
            raise KernelError(f"unknown kernel kind {kind!r} in {text!r}")
        by_key = {key: (attr, typ) for key, attr, typ, _ in _PARAMS[kind]}
        kwargs = {}
        for item in filter(None, (s.strip() for s in body.split(","))):
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or key not in by_key:
                raise KernelError(f"bad parameter {item!r} for {kind} kernel")
            attr, typ = by_key[key]
            try:
                if typ is int:
                    number = float(value)
                    if not number.is_integer():
                        raise ValueError(value)
                    kwargs[attr] = int(number)
                else:
                    kwargs[attr] = float(value)
            except ValueError:
                raise KernelError(f"non-numeric value in {item!r}") from None
        return cls(kind, **kwargs)

    def __call__(self, x, y, counter: "EvalCounter | None" = None) -> float:
        return kernel_eval(self, x, y, counter)


@dataclass
class EvalCounter:
    """Number of kernel invocations made through this counter."""

    count: int = 0

    def add(self, n: int = 1) -> None:
        self.count += int(n)


def _tick(counter: EvalCounter | None, n: int) -> None:
    if counter is not None:
        counter.add(n)


# --- vector arithmetic --------------------------------------------------------


def _dots(cols: np.ndarray, y: np.ndarray) -> np.ndarray:
    # cols is (D, m); summation runs over columns in index order.
    acc = cols[0] * y[0]
    for c in range(1, cols.shape[0]):
        acc += cols[c] * y[c]
    return acc


def _sqdists(cols: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = cols[0] - y[0]
    acc = diff * diff
    for c in range(1, cols.shape[0]):
        diff = cols[c] - y[c]
        acc += diff * diff
    return acc


def _self_dots(cols: np.ndarray) -> np.ndarray:
    acc = cols[0] * cols[0]
    for c in range(1, cols.shape[0]):
        acc += cols[c] * cols[c]
    return acc


def _vector_values(kernel: Kernel, cols, y, norms=None, ynorm=None) -> np.ndarray:
    kind = kernel.kind
    if kind == "gaussian":
        return np.exp(-_sqdists(cols, y) / (2.0 * kernel.sigma * kernel.sigma))
    dots = _dots(cols, y)
    if kind == "linear":
        return dots
    if kind == "polynomial":
        return (dots + kernel.offset) ** kernel.degree
    if kind == "tanh":
        return np.tanh(kernel.scale * dots + kernel.offset)
    # cosine
    if ynorm == 0.0 or (norms.size and not np.all(norms)):
        raise ZeroNormError("cosine kernel is undefined for a zero vector")
    return dots / (norms * ynorm)


def _as_vector(x) -> np.ndarray:
    if isinstance(x, (str, bytes, bytearray)):
        raise DomainError("string point given to a vector kernel")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"vector points must be non-empty 1-d, got shape {arr.shape}")
    return arr


def _as_bytes(x) -> bytes:
    if isinstance(x, str):
        return x.encode("ascii")
    if isinstance(x, (bytes, bytearray)):
        return bytes(x)
    raise DomainError("vector point given to the pspectrum kernel")


def pgram_counts(seq: bytes, p: int) -> Counter:
    """Counts of every length-``p`` substring; empty when ``len(seq) < p``."""
    return Counter(seq[i:i + p] for i in range(len(seq) - p + 1))


def kernel_eval(kernel: Kernel, x, y, counter: EvalCounter | None = None) -> float:
    """Evaluate ``kernel`` on one pair of raw points.

    >>> kernel_eval(Kernel("linear"), (1, 2), (3, 4))
    11.0
    """
    if kernel.domain == "string":
        cx, cy = pgram_counts(_as_bytes(x), kernel.p), pgram_counts(_as_bytes(y), kernel.p)
        if len(cx) > len(cy):
            cx, cy = cy, cx
        _tick(counter, 1)
        return float(sum(n * cy[g] for g, n in cx.items()))
    xv, yv = _as_vector(x), _as_vector(y)
    if xv.shape != yv.shape:
        raise DomainError(f"dimension mismatch: {xv.size} vs {yv.size}")
    norms = ynorm = None
    if kernel.kind == "cosine":
        norms = np.sqrt(_self_dots(xv[:, None]))
        ynorm = float(np.sqrt(_self_dots(yv[:, None]))[0])
    value = _vector_values(kernel, xv[:, None], yv, norms, ynorm)
    _tick(counter, 1)
    return float(value[0])


# --- datasets -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable indexed point collection.

    ``points`` is either an ``(n, D)`` float64 array or a tuple of byte
    strings.  ``self_kernels`` is filled by :func:`build_self_kernel_cache`
    and is only meaningful together with ``kernel``.
    """

    points: np.ndarray | tuple
    self_kernels: np.ndarray | None = None
    kernel: Kernel | None = None
    _spaces: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_vectors(cls, points) -> "Dataset":
        arr = np.array(points, dtype=np.float64, order="C")
        if arr.ndim != 2 or arr.shape[1] == 0:
            raise DomainError(f"expected an (n, D) array with D >= 1, got shape {arr.shape}")
        arr.setflags(write=False)
        return cls(arr)

    @classmethod
    def from_strings(cls, seqs: Iterable) -> "Dataset":
        return cls(tuple(_as_bytes(s) for s in seqs))

    @property
    def kind(self) -> str:
        return "vector" if isinstance(self.points, np.ndarray) else "string"

    @property
    def dim(self) -> int | None:
        return self.points.shape[1] if self.kind == "vector" else None

    def __len__(self) -> int:
        return len(self.points)

    def point(self, i: int):
        return self.points[i]

    def fingerprint(self) -> str:
        """SHA-256 over the point content, independent of any kernel."""
        h = hashlib.sha256()
        if self.kind == "vector":
            h.update(b"vector:%d:%d:" % self.points.shape)
            h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        else:
            h.update(b"string:%d:" % len(self.points))
            for s in self.points:
                h.update(b"%d:" % len(s))
                h.update(s)
        return h.hexdigest()

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Points at ``indices`` (in that order), carrying over cached self-kernels."""
        idx = np.asarray(indices, dtype=np.int64)
        if self.kind == "vector":
            pts = self.points[idx]
            pts.setflags(write=False)
        else:
            pts = tuple(self.points[i] for i in idx)
        sk = None if self.self_kernels is None else self.self_kernels[idx].copy()
        return Dataset(pts, sk, self.kernel if sk is not None else None)

    def space(self, kernel: Kernel) -> "KernelSpace":
        """Batched evaluation view for ``kernel`` (cached per kernel)."""
        if kernel.domain != self.kind:
            raise DomainError(f"{kernel.kind} kernel cannot be applied to {self.kind} points")
        view = self._spaces.get(kernel)
        if view is None:
            view = self._spaces[kernel] = KernelSpace(kernel, self)
        return view


@dataclass(frozen=True)
class PreparedQuery:
    """A query point converted to the representation of a :class:`KernelSpace`."""

    vector: np.ndarray | None = None
    norm: float | None = None
    counts: np.ndarray | None = None
    self_value: float = 0.0


class KernelSpace:
    """Evaluates a kernel between indexed dataset points and prepared queries.

    p-gram count vectors (and cosine norms) are built once here, the same way
    self-kernels are cached, so a single evaluation is one sparse or dense dot
    product.
    """

    def __init__(self, kernel: Kernel, dataset: Dataset):
        self.kernel = kernel
        self.dataset = dataset
        self.n = len(dataset)
        if kernel.domain == "string":
            self._build_spectrum(dataset.points)
        else:
            self.cols = np.ascontiguousarray(dataset.points.T)
            self.norms = np.sqrt(_self_dots(self.cols)) if kernel.kind == "cosine" else None

    def rebind(self, dataset: Dataset) -> "KernelSpace":
        """Same prepared representation, attached to ``dataset`` (same points)."""
        view = object.__new__(KernelSpace)
        view.__dict__.update(self.__dict__)
        view.dataset = dataset
        return view

    def _build_spectrum(self, seqs):
        p = self.kernel.p
        counts = [pgram_counts(s, p) for s in seqs]
        self.vocab = {g: j for j, g in enumerate(sorted(set().union(*counts)))}
        indptr, indices, data = [0], [], []
        for c in counts:
            for j, n in sorted((self.vocab[g], n) for g, n in c.items()):
                indices.append(j)
                data.append(n)
            indptr.append(len(indices))
        self.matrix = sp.csr_matrix(
            (np.asarray(data, dtype=np.int64), np.asarray(indices, dtype=np.int64), indptr),
            shape=(len(seqs), max(len(self.vocab), 1)),
        )

    # -- dataset vs dataset --

    def cross(self, i: int, idx, counter: EvalCounter | None = None) -> np.ndarray:
        """``K(points[i], points[j])`` for every ``j`` in ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return np.empty(0)
        if self.kernel.domain == "string":
            row = self.matrix[i].toarray().ravel()
            values = np.asarray(self.matrix[idx] @ row, dtype=np.float64)
        else:
            norms = ynorm = None
            if self.norms is not None:
                norms, ynorm = self.norms[idx], float(self.norms[i])
            values = _vector_values(self.kernel, self.cols[:, idx], self.cols[:, i], norms, ynorm)
        _tick(counter, idx.size)
        return values

    def self_values(self, counter: EvalCounter | None = None) -> np.ndarray:
        """``K(x, x)`` for every dataset point (``n`` evaluations)."""
        if self.kernel.domain == "string":
            sq = self.matrix.multiply(self.matrix).sum(axis=1)
            values = np.asarray(sq, dtype=np.float64).ravel()
        elif self.kernel.kind == "cosine":
            if not np.all(self.norms):
                raise ZeroNormError("cosine kernel is undefined for a zero vector")
            values = _self_dots(self.cols) / (self.norms * self.norms)
        elif self.kernel.kind == "gaussian":
            values = np.ones(self.n)
        else:
            dots = _self_dots(self.cols)
            k = self.kernel
            if k.kind == "linear":
                values = dots
            elif k.kind == "polynomial":
                values = (dots + k.offset) ** k.degree
            else:
                values = np.tanh(k.scale * dots + k.offset)
        _tick(counter, self.n)
        return values

    def distances(self, i: int, idx, counter: EvalCounter | None = None) -> np.ndarray:
        """Induced distances from ``points[i]``, one kernel evaluation per pair."""
        sk = self.dataset.self_kernels
        if sk is None or self.dataset.kernel != self.kernel:
            raise KernelError("self-kernel cache missing for this kernel; build it first")
        idx = np.asarray(idx, dtype=np.int64)
        kv = self.cross(i, idx, counter)
        return _radicand_sqrt(sk[i] + sk[idx] - 2.0 * kv, sk[i], sk[idx])

    # -- queries --

    def prepare(self, point) -> PreparedQuery:
        """Convert a raw query point; computes nothing that counts as an evaluation."""
        if self.kernel.domain == "string":
            counts = pgram_counts(_as_bytes(point), self.kernel.p)
            vec = np.zeros(self.matrix.shape[1], dtype=np.int64)
            for g, c in counts.items():
                j = self.vocab.get(g)
                if j is not None:
                    vec[j] = c
            self_value = float(sum(c * c for c in counts.values()))
            return PreparedQuery(counts=vec, self_value=self_value)
        vec = _as_vector(point)
        if vec.size != self.cols.shape[0]:
            raise DomainError(f"query has dimension {vec.size}, dataset has {self.cols.shape[0]}")
        col = vec[:, None]
        if self.kernel.kind == "cosine":
            norm = float(np.sqrt(_self_dots(col))[0])
            if norm == 0.0:
                raise ZeroNormError("cosine kernel is undefined for a zero vector")
            self_value = float(_vector_values(self.kernel, col, vec, np.array([norm]), norm)[0])
            return PreparedQuery(vector=vec, norm=norm, self_value=self_value)
        return PreparedQuery(vector=vec, self_value=float(_vector_values(self.kernel, col, vec)[0]))

    def query_self(self, query: PreparedQuery, counter: EvalCounter | None = None) -> float:
        """``K(q, q)``; one evaluation."""
        _tick(counter, 1)
        return query.self_value

    def query_cross(self, query: PreparedQuery, idx, counter: EvalCounter | None = None) -> np.ndarray:
        """``K(q, points[j])`` for every ``j`` in ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return np.empty(0)
        if self.kernel.domain == "string":
            values = np.asarray(self.matrix[idx] @ query.counts, dtype=np.float64)
        else:
            norms = None if self.norms is None else self.norms[idx]
            values = _vector_values(self.kernel, self.cols[:, idx], query.vector, norms, query.norm)
        _tick(counter, idx.size)
        return values


def _radicand_sqrt(radicand: np.ndarray, sk_a, sk_b) -> np.ndarray:
    neg = radicand < 0.0
    if np.any(neg):
        tol = PSD_TOLERANCE * np.maximum(1.0, np.abs(sk_a) + np.abs(sk_b))
        tol = np.broadcast_to(tol, radicand.shape)
        bad = neg & (radicand < -tol)
        if np.any(bad):
            worst = float(radicand[bad].min())
            raise NonPSDError(f"non-PSD kernel on this pair (squared distance {worst:.3g})")
        radicand = np.where(neg, 0.0, radicand)
    return np.sqrt(radicand)


def build_self_kernel_cache(
    kernel: Kernel, dataset: Dataset, counter: EvalCounter | None = None
) -> Dataset:
    """Return ``dataset`` with ``K(x, x)`` cached for every point (``n`` evaluations)."""
    if dataset.self_kernels is not None and dataset.kernel == kernel:
        return dataset
    values = dataset.space(kernel).self_values(counter)
    values.setflags(write=False)
    out = Dataset(dataset.points, values, kernel)
    for k, view in dataset._spaces.items():
        out._spaces[k] = view.rebind(out)
    return out


def induced_distance(
    kernel: Kernel, x_idx: int, y_idx: int, dataset: Dataset, counter: EvalCounter | None = None
) -> float:
    """``sqrt(K(x,x) + K(y,y) - 2 K(x,y))`` from cached self-kernels; one evaluation.

    Raises
    ------
    NonPSDError
        If the radicand is negative beyond rounding noise (possible for tanh).
    """
    return float(dataset.space(kernel).distances(x_idx, [y_idx], counter)[0])


def norm_from_self(self_value: float) -> float:
    """``sqrt(K(q, q))``, refusing a clearly negative self-kernel."""
    if self_value < 0.0:
        if self_value < -PSD_TOLERANCE:
            raise NonPSDError(f"negative self-kernel {self_value:.3g}")
        return 0.0
    return math.sqrt(self_value)
