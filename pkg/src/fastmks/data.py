"""Dataset ingestion (CSV/TSV vectors, FASTA sequences) and seeded synthetic
generators used for benchmarks and tests."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .kernels import Dataset, KernelError

__all__ = [
    "DataError",
    "AMINO_ACIDS",
    "load_vectors",
    "save_vectors",
    "load_sequences",
    "save_sequences",
    "load_dataset",
    "uniform_cube",
    "gaussian_mixture",
    "unit_sphere",
    "random_sequences",
    "GENERATORS",
    "generate",
]

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"


class DataError(KernelError):
    """Malformed input file.  ``row`` is the 1-based line number, if known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


# --------------------------------------------------------------------------
# vectors


def _delimiter(path: Path, first_line: str) -> str:
    if path.suffix.lower() in (".tsv", ".tab") or "\t" in first_line:
        return "\t"
    return ","


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_vectors(path) -> Dataset:
    """Read one point per row from a CSV or TSV file.

    A first row containing any non-numeric cell is taken as a header.  Blank
    lines are ignored.

    Raises
    ------
    DataError
        Empty file, ragged rows, or non-numeric cells (with the row number).
    """
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), None)
    if first is None:
        raise DataError(f"{path}: no data rows")
    reader = csv.reader(io.StringIO(text), delimiter=_delimiter(path, first))
    rows, width, header_seen = [], None, False
    for lineno, cells in enumerate(reader, start=1):
        cells = [c.strip() for c in cells]
        if not cells or all(c == "" for c in cells):
            continue
        if not rows and not header_seen and not all(_is_number(c) for c in cells):
            header_seen = True
            width = len(cells)
            continue
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DataError(f"expected {width} columns, found {len(cells)}", lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_number(c))
            raise DataError(f"non-numeric cell {bad!r}", lineno) from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset.from_vectors(np.array(rows, dtype=np.float64))


def save_vectors(path, points, header: list | None = None) -> None:
    """Write vectors so that :func:`load_vectors` reads them back bit-exactly."""
    path = Path(path)
    points = np.asarray(points.points if isinstance(points, Dataset) else points, dtype=np.float64)
    delim = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delim, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for row in points:
            writer.writerow([repr(float(x)) for x in row])


# --------------------------------------------------------------------------
# sequences


def load_sequences(path) -> Dataset:
    """Read a FASTA file; sequence lines are joined and uppercased.

    Raises
    ------
    DataError
        No records, a record without sequence, or sequence data before the
        first header.
    """
    path = Path(path)
    seqs, current, header_row = [], None, None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            if current is not None:
                if not current:
                    raise DataError("empty record", header_row)
                seqs.append("".join(current))
            current, header_row = [], lineno
        elif line.startswith(";"):
            continue
        else:
            if current is None:
                raise DataError("sequence data before the first '>' header", lineno)
            current.append(line.upper())
    if current is not None:
        if not current:
            raise DataError("empty record", header_row)
        seqs.append("".join(current))
    if not seqs:
        raise DataError(f"{path}: no FASTA records")
    return Dataset.from_strings(seqs)


def save_sequences(path, seqs, width: int = 60) -> None:
    path = Path(path)
    if isinstance(seqs, Dataset):
        seqs = seqs.points
    with path.open("w") as fh:
        for i, s in enumerate(seqs):
            s = s.decode() if isinstance(s, bytes) else str(s)
            fh.write(f">seq{i}\n")
            for j in range(0, len(s), width):
                fh.write(s[j:j + width] + "\n")


def load_dataset(path) -> Dataset:
    """Dispatch on the file suffix: FASTA for ``.fa/.fasta/.faa/.fna``, else CSV/TSV."""
    suffix = Path(path).suffix.lower()
    if suffix in (".fa", ".fasta", ".faa", ".fna", ".fas"):
        return load_sequences(path)
    return load_vectors(path)


# --------------------------------------------------------------------------
# generators


def uniform_cube(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniform in ``[0, 1]^dim``."""
    return np.random.default_rng(seed).random((n, dim))


def gaussian_mixture(n: int, dim: int, clusters: int = 20, spread: float = 0.05,
                     seed: int = 0) -> np.ndarray:
    """``n`` points from an equal-weight mixture of isotropic gaussians whose
    centres are uniform in ``[0, 1]^dim``."""
    rng = np.random.default_rng(seed)
    centres = rng.random((clusters, dim))
    labels = rng.integers(0, clusters, size=n)
    return centres[labels] + spread * rng.standard_normal((n, dim))


def unit_sphere(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniform on the unit sphere in ``R^dim``."""
    x = np.random.default_rng(seed).standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_sequences(n: int, length: int = 60, families: int = 10, mutation: float = 0.15,
                     seed: int = 0, alphabet: str = AMINO_ACIDS) -> list:
    """Protein-like sequences: ``families`` random ancestors, each member a
    copy with per-site substitutions at rate ``mutation`` and a length jitter of
    about 10%."""
    rng = np.random.default_rng(seed)
    letters = np.frombuffer(alphabet.encode(), dtype=np.uint8)
    ancestors = [rng.choice(letters, size=length) for _ in range(max(1, families))]
    jitter = max(1, length // 10)
    out = []
    for _ in range(n):
        seq = ancestors[int(rng.integers(len(ancestors)))].copy()
        mutate = rng.random(seq.size) < mutation
        seq[mutate] = rng.choice(letters, size=int(mutate.sum()))
        cut = int(rng.integers(0, jitter + 1))
        seq = seq[: seq.size - cut] if cut else seq
        out.append(seq.tobytes().decode())
    return out


GENERATORS = {
    "uniform": uniform_cube,
    "clusters": gaussian_mixture,
    "sphere": unit_sphere,
    "sequences": random_sequences,
}


def generate(kind: str, n: int, dim: int = 3, seed: int = 0, **kwargs):
    """Generate a dataset by generator name; sequences ignore ``dim``."""
    if kind not in GENERATORS:
        raise DataError(f"unknown generator {kind!r}; expected one of {sorted(GENERATORS)}")
    if n < 1:
        raise DataError(f"n must be positive, got {n}")
    if kind == "sequences":
        return random_sequences(n, seed=seed, **kwargs)
    return GENERATORS[kind](n, dim, seed=seed, **kwargs)

