"""Saving and loading cover trees.

A tree is stored as a NumPy ``.npz`` archive.  Nodes are laid out in preorder,
children addressed through CSR-style offsets, and a small JSON header records
the format version, base, kernel and the fingerprint of the dataset the tree
was built on.  The points themselves are not stored: loading requires the
same dataset and refuses anything whose fingerprint differs.
"""

from __future__ import annotations

import json

import numpy as np

from .cover_tree import CoverNode, CoverTree
from .kernels import Dataset, EvalCounter, Kernel, KernelError, build_self_kernel_cache

__all__ = ["FORMAT", "VERSION", "IndexFormatError", "save_tree", "load_tree", "read_header"]

FORMAT = "fastmks-cover-tree"
VERSION = 1


class IndexFormatError(KernelError):
    """The file is not a saved tree, has an unknown version, or does not match
    the dataset/kernel it is being loaded with."""


def _flatten(root: CoverNode) -> dict:
    order, stack = [], [root]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(reversed(node.children))
    pos = {id(node): i for i, node in enumerate(order)}
    child_offsets = np.zeros(len(order) + 1, dtype=np.int64)
    dup_offsets = np.zeros(len(order) + 1, dtype=np.int64)
    children, dups = [], []
    for i, node in enumerate(order):
        children.extend(pos[id(c)] for c in node.children)
        dups.extend(node.duplicates)
        child_offsets[i + 1] = len(children)
        dup_offsets[i + 1] = len(dups)
    return {
        "point": np.array([nd.point for nd in order], dtype=np.int64),
        "scale": np.array([nd.scale for nd in order], dtype=np.int64),
        "furthest": np.array([nd.furthest for nd in order], dtype=np.float64),
        "parent_distance": np.array([nd.parent_distance for nd in order], dtype=np.float64),
        "subtree_size": np.array([nd.subtree_size for nd in order], dtype=np.int64),
        "child_offsets": child_offsets,
        "children": np.array(children, dtype=np.int64),
        "dup_offsets": dup_offsets,
        "duplicates": np.array(dups, dtype=np.int64),
    }


def _unflatten(arrays) -> CoverNode:
    point, scale = arrays["point"], arrays["scale"]
    furthest, parent_distance = arrays["furthest"], arrays["parent_distance"]
    size, co, ch = arrays["subtree_size"], arrays["child_offsets"], arrays["children"]
    do, dups = arrays["dup_offsets"], arrays["duplicates"]
    count = point.size
    if count == 0 or co.size != count + 1 or do.size != count + 1:
        raise IndexFormatError("inconsistent node arrays")
    nodes = [
        CoverNode(point[i], scale[i], (), furthest[i], parent_distance[i], size[i],
                  dups[do[i]:do[i + 1]].tolist())
        for i in range(count)
    ]
    for i, node in enumerate(nodes):
        node.children = [nodes[j] for j in ch[co[i]:co[i + 1]].tolist()]
    return nodes[0]


def save_tree(tree: CoverTree, path) -> None:
    """Write ``tree`` to ``path`` (``.npz``)."""
    header = {
        "format": FORMAT,
        "version": VERSION,
        "base": tree.base,
        "strict": tree.strict,
        "kernel": tree.kernel.spec(),
        "fingerprint": tree.dataset.fingerprint(),
        "n": tree.n,
        "constructionEvals": tree.construction_evals,
    }
    arrays = _flatten(tree.root)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def read_header(path) -> dict:
    """The JSON header of a saved tree."""
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
    except (OSError, ValueError, KeyError) as exc:
        raise IndexFormatError(f"{path}: not a saved cover tree ({exc})") from None
    if header.get("format") != FORMAT:
        raise IndexFormatError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise IndexFormatError(f"{path}: unsupported version {header.get('version')!r}")
    return header


def load_tree(path, dataset: Dataset, kernel: Kernel | None = None) -> CoverTree:
    """Load a tree saved by :func:`save_tree` for ``dataset``.

    Parameters
    ----------
    path : path-like
    dataset : Dataset
        Must be the dataset the tree was built on (checked by fingerprint).
    kernel : Kernel, optional
        If given, must equal the stored kernel.

    Raises
    ------
    IndexFormatError
        On a fingerprint or kernel mismatch, or a malformed file.
    """
    header = read_header(path)
    stored = Kernel.parse(header["kernel"])
    if kernel is not None and kernel != stored:
        raise IndexFormatError(
            f"index was built with kernel {stored.spec()!r}, not {kernel.spec()!r}")
    if dataset.fingerprint() != header["fingerprint"] or len(dataset) != header["n"]:
        raise IndexFormatError("dataset fingerprint does not match the saved index")
    with np.load(path, allow_pickle=False) as z:
        root = _unflatten({k: z[k] for k in z.files if k != "header"})
    # the self-kernel cache is rebuilt, not trusted from disk; it is not
    # query-time work and is deliberately left out of any reported count
    dataset = build_self_kernel_cache(stored, dataset, EvalCounter())
    return CoverTree(root, float(header["base"]), dataset, stored,
                     int(header["constructionEvals"]), bool(header.get("strict", False)))

