"""Command-line interface.

Subcommands
-----------
generate   write a seeded synthetic dataset (CSV or FASTA)
build      build a cover tree and optionally save it
query      answer a batch of queries, optionally verifying against linear scan
bench      speedup table over several k and shard counts
diagnose   hardness measures of a dataset under a kernel

Every command emits a JSON report (stdout or ``--output``).  Reports contain
counts only, never timings, so identical inputs and seeds give byte-identical
reports.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cover_tree import DEFAULT_BASE, construct, tree_stats, validate_invariants
from .data import generate, load_dataset, save_sequences, save_vectors
from .diagnostics import DEFAULT_CAP, hardness_report, speedup_report
from .kernels import Kernel, KernelError, NonPSDError
from .search import SearchConfig, fastmks, linear_scan
from .sharded import PARTITIONERS, build_sharded, sharded_search
from .storage import load_tree, save_tree

__all__ = ["RunSpec", "run", "main", "build_parser", "EXIT_OK", "EXIT_VERIFY", "EXIT_INPUT"]

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2


@dataclass
class RunSpec:
    """Everything one CLI invocation needs."""

    command: str = "query"
    reference: str | None = None
    queries: str | None = None
    kernel: str = "linear"
    mode: str = "exact"
    k: int = 1
    ks: tuple = (1, 2, 5, 10)
    base: float = DEFAULT_BASE
    shards: int = 1
    shard_counts: tuple = (1,)
    partitioner: str = "round-robin"
    seed: int = 0
    index: str | None = None
    output: str | None = None
    csv: str | None = None
    verify: bool = False
    validate: bool = False
    hardness: bool = False
    parent_prune: bool = True
    strict: bool = False
    # diagnose
    directions: int = 20
    intervals: int = 20
    sample: int | None = None
    cap: int = DEFAULT_CAP
    # generate
    generator: str = "clusters"
    n: int = 1000
    dim: int = 3
    extra: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Normalised configuration echoed into the report."""
        kernel = Kernel.parse(self.kernel)
        mode = SearchConfig.parse(self.mode, k=self.k, parent_prune=self.parent_prune)
        return {
            "kernel": kernel.spec(),
            "mode": mode.spec(),
            "k": self.k,
            "base": self.base,
            "shards": self.shards,
            "partitioner": self.partitioner,
            "seed": self.seed,
            "parentPrune": self.parent_prune,
            "strict": self.strict,
        }


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers


def _load(path, what):
    if path is None:
        raise _Fail(EXIT_INPUT, f"missing --{what}")
    if not Path(path).exists():
        raise _Fail(EXIT_INPUT, f"{what} file not found: {path}")
    return load_dataset(path)


def _dataset_info(ds) -> dict:
    return {"n": len(ds), "kind": ds.kind, "dim": ds.dim, "fingerprint": ds.fingerprint()}


def _query_points(qs):
    return [qs.point(i) for i in range(len(qs))]


def _verify(results, oracle, config) -> dict:
    """Compare tree results with linear scan under the mode's guarantee."""
    failures = []
    rank_failures = 0
    for i, (r, o) in enumerate(zip(results, oracle)):
        if config.mode == "exact":
            ok = r.hits == o.hits
        elif config.mode == "ava":
            ok = all(rv >= ov - config.eps for (_, rv), (_, ov) in zip(r.hits, o.hits))
        elif config.mode == "rva":
            ok = all(ov <= 0 or rv >= (1 - config.eps) * ov
                     for (_, rv), (_, ov) in zip(r.hits, o.hits))
        else:
            ok = True
            best = r.hits[0][1]
            # rank = 1 + number of reference points strictly better
            if o.extra_better(best) + 1 > config.tau:
                rank_failures += 1
        if not ok:
            failures.append(i)
    out = {"checked": len(results), "mismatches": len(failures), "firstMismatch":
           failures[0] if failures else None, "passed": not failures}
    if config.mode == "ra":
        out["rankFailures"] = rank_failures
        out["rankFailureRate"] = rank_failures / len(results) if results else 0.0
    return out


class _Oracle:
    """Linear-scan result plus the full value vector (for RA rank checks)."""

    def __init__(self, ds, kernel, q, k):
        space = ds.space(kernel)
        prepared = space.prepare(q)
        self.values = space.query_cross(prepared, np.arange(len(ds), dtype=np.int64))
        self.hits = linear_scan(ds, kernel, q, k).hits

    def extra_better(self, value) -> int:
        return int(np.count_nonzero(self.values > value))


def _write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _build_index(spec, ds, kernel, m, warnings):
    """Single tree (possibly loaded) or sharded index; ``None`` on a non-PSD
    kernel, in which case the caller falls back to linear scan."""
    try:
        if m == 1:
            if spec.index and Path(spec.index).exists() and spec.command != "build":
                return load_tree(spec.index, ds, kernel)
            return construct(ds, kernel, spec.base, strict=spec.strict)
        return build_sharded(ds, kernel, m, spec.base, spec.partitioner, spec.seed,
                             strict=spec.strict)
    except NonPSDError as exc:
        warnings.append(f"{kernel.spec()} is not positive semi-definite on this dataset "
                        f"({exc}); falling back to linear scan")
        return None


def _answer(index, ds, kernel, queries, config):
    """Results and per-query shard cost rows (or ``None``)."""
    results, costs = [], []
    for q in queries:
        if index is None:
            results.append(linear_scan(ds, kernel, q, config.k))
        elif hasattr(index, "shards"):
            r, c = sharded_search(index, q, config)
            results.append(r)
            costs.append(c)
        else:
            results.append(fastmks(index, q, config))
    return results, costs or None


def _cost_row(costs) -> dict:
    per = np.sum([c["perShardEvals"] for c in costs], axis=0).astype(int).tolist()
    return {
        "m": costs[0]["m"],
        "perShardEvals": per,
        "maxShardEvals": int(max(per)),
        "totalEvals": int(sum(per)),
        "mergeItems": int(sum(c["mergeItems"] for c in costs)),
        "parallelCost": int(sum(c["parallelCost"] for c in costs)),
    }


def _index_stats(index):
    if index is None:
        return None
    if hasattr(index, "shards"):
        return {"shards": [tree_stats(s.tree) for s in index.shards],
                "constructionEvals": index.construction_evals}
    return tree_stats(index)


# --------------------------------------------------------------------------
# commands


def _cmd_generate(spec):
    data = generate(spec.generator, spec.n, spec.dim, seed=spec.seed, **spec.extra)
    if spec.output is None:
        raise _Fail(EXIT_INPUT, "generate needs --output")
    if spec.generator == "sequences":
        save_sequences(spec.output, data)
    else:
        save_vectors(spec.output, data)
    return {"command": "generate", "generator": spec.generator, "n": spec.n,
            "dim": None if spec.generator == "sequences" else spec.dim, "seed": spec.seed,
            "path": str(spec.output)}, False


def _cmd_build(spec):
    ds = _load(spec.reference, "reference")
    kernel = Kernel.parse(spec.kernel)
    warnings = []
    tree = _build_index(spec, ds, kernel, 1, warnings)
    report = {"command": "build", "config": spec.canonical(), "dataset": _dataset_info(ds),
              "tree": _index_stats(tree), "warnings": warnings}
    if tree is not None:
        if spec.validate:
            v = validate_invariants(tree)
            report["validation"] = {name: c.passed for name, c in v.checks.items()}
            if not v.ok:
                return report, True
        if spec.index:
            save_tree(tree, spec.index)
            report["index"] = str(spec.index)
    return report, False


def _cmd_query(spec):
    ds = _load(spec.reference, "reference")
    qs = _load(spec.queries, "queries")
    kernel = Kernel.parse(spec.kernel)
    config = SearchConfig.parse(spec.mode, k=spec.k, parent_prune=spec.parent_prune)
    if config.k > len(ds):
        raise _Fail(EXIT_INPUT, f"k exceeds n (k={config.k}, n={len(ds)})")
    if config.mode == "ra" and config.tau >= len(ds):
        raise _Fail(EXIT_INPUT, f"tau must be smaller than n (tau={config.tau}, n={len(ds)})")
    warnings = []
    index = _build_index(spec, ds, kernel, spec.shards, warnings)
    queries = _query_points(qs)
    results, costs = _answer(index, ds, kernel, queries, config)
    report = {
        "command": "query",
        "config": spec.canonical(),
        "guarantee": config.guarantee(),
        "dataset": _dataset_info(ds),
        "queries": len(queries),
        "fallback": "linear-scan" if index is None else None,
        "tree": _index_stats(index),
        "results": [dict(query=i, **r.to_dict()) for i, r in enumerate(results)],
        "aggregate": speedup_report(
            results, len(ds), None if index is None else index.construction_evals),
        "warnings": warnings,
    }
    if costs:
        report["shardCost"] = [_cost_row(costs)]
    if spec.hardness:
        report["hardness"] = hardness_report(ds, kernel, spec.directions, spec.intervals,
                                             spec.seed, spec.cap, spec.sample).to_dict()
    failed = False
    if spec.verify:
        oracle = [_Oracle(ds, kernel, q, config.k) for q in queries]
        report["verification"] = _verify(results, oracle, config)
        failed = not report["verification"]["passed"]
    if spec.csv:
        agg = report["aggregate"]
        _write_csv(spec.csv, [{"k": row["k"], "queries": row["queries"], "n": len(ds),
                               "kernelEvals": row["totalKernelEvals"],
                               "speedup": row["speedup"]} for row in agg["perK"]])
    return report, failed


def _cmd_bench(spec):
    ds = _load(spec.reference, "reference")
    qs = _load(spec.queries, "queries")
    kernel = Kernel.parse(spec.kernel)
    queries = _query_points(qs)
    ks = sorted(set(spec.ks))
    if max(ks) > len(ds):
        raise _Fail(EXIT_INPUT, f"k exceeds n (k={max(ks)}, n={len(ds)})")
    rows, warnings, failed = [], [], False
    verification = []
    for m in spec.shard_counts:
        index = _build_index(spec, ds, kernel, m, warnings)
        for k in ks:
            config = SearchConfig.parse(spec.mode, k=k, parent_prune=spec.parent_prune)
            results, costs = _answer(index, ds, kernel, queries, config)
            total = sum(r.kernel_evals for r in results)
            row = {
                "m": m,
                "k": k,
                "n": len(ds),
                "queries": len(queries),
                "totalKernelEvals": total,
                "meanKernelEvals": total / len(queries),
                "speedup": len(queries) * len(ds) / total if total else None,
                "constructionEvals": None if index is None else index.construction_evals,
            }
            cost = _cost_row(costs) if costs else None
            row["maxShardEvals"] = cost["maxShardEvals"] if cost else total
            row["parallelCost"] = cost["parallelCost"] if cost else total
            rows.append(row)
            if spec.verify:
                oracle = [_Oracle(ds, kernel, q, k) for q in queries]
                v = _verify(results, oracle, config)
                verification.append({"m": m, "k": k, **v})
                failed = failed or not v["passed"]
    report = {"command": "bench", "config": spec.canonical(), "dataset": _dataset_info(ds),
              "queries": len(queries), "rows": rows, "warnings": warnings}
    if spec.verify:
        report["verification"] = verification
    if spec.csv:
        _write_csv(spec.csv, rows)
    return report, failed


def _cmd_diagnose(spec):
    ds = _load(spec.reference, "reference")
    kernel = Kernel.parse(spec.kernel)
    rep = hardness_report(ds, kernel, spec.directions, spec.intervals, spec.seed, spec.cap,
                          spec.sample)
    return {"command": "diagnose", "config": {"kernel": kernel.spec(), "seed": spec.seed},
            "dataset": _dataset_info(ds), "hardness": rep.to_dict()}, False


_COMMANDS = {
    "generate": _cmd_generate,
    "build": _cmd_build,
    "query": _cmd_query,
    "bench": _cmd_bench,
    "diagnose": _cmd_diagnose,
}


def run(spec: RunSpec) -> tuple:
    """Execute ``spec``.

    Returns
    -------
    (exit_code, report)
        ``report`` is a JSON-serialisable dict; on errors it holds ``error``.
    """
    try:
        report, failed = _COMMANDS[spec.command](spec)
    except _Fail as exc:
        return exc.code, {"command": spec.command, "error": str(exc)}
    except (KernelError, OSError) as exc:
        return EXIT_INPUT, {"command": spec.command, "error": str(exc)}
    return (EXIT_VERIFY if failed else EXIT_OK), report


def dumps(report: dict) -> str:
    """Deterministic JSON text for a report."""
    return json.dumps(report, indent=2, sort_keys=False, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# argument parsing


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastmks", description="Max-kernel search on cover trees.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, queries=False):
        sp.add_argument("--reference", "-r", required=True, help="CSV/TSV vectors or FASTA")
        if queries:
            sp.add_argument("--queries", "-q", required=True, help="query points, same format")
        sp.add_argument("--kernel", default="linear",
                        help='e.g. "linear", "polynomial:d=10,c=1", "gaussian:sigma=1.0", '
                             '"pspectrum:p=3"')
        sp.add_argument("--base", type=float, default=DEFAULT_BASE)
        sp.add_argument("--strict", action="store_true",
                        help="build with global separation between same-scale nodes")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output", "-o", help="write the JSON report here (default stdout)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("kind", choices=["uniform", "clusters", "sphere", "sequences"])
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--dim", type=int, default=3)
    g.add_argument("--clusters", type=int, default=None, help="number of mixture components")
    g.add_argument("--length", type=int, default=None, help="sequence length")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", "-o", required=True)

    b = sub.add_parser("build", help="build (and save) a cover tree")
    common(b)
    b.add_argument("--index", help="save the tree to this .npz file")
    b.add_argument("--validate", action="store_true", help="check every tree invariant")
    b.add_argument("--report", help="alias for --output")

    def search_opts(sp):
        sp.add_argument("--mode", default="exact",
                        help='"exact", "ava:eps=0.01", "rva:eps=0.1", "ra:tau=100,delta=0.05"')
        sp.add_argument("--partitioner", choices=PARTITIONERS, default="round-robin")
        sp.add_argument("--verify", action="store_true",
                        help="check results against linear scan; exact mismatches fail the run")
        sp.add_argument("--no-parent-prune", dest="parent_prune", action="store_false")
        sp.add_argument("--csv", help="also write a CSV summary table")

    q = sub.add_parser("query", help="answer queries")
    common(q, queries=True)
    search_opts(q)
    q.add_argument("--k", "-k", type=int, default=1)
    q.add_argument("--shards", "-m", type=int, default=1)
    q.add_argument("--index", help="load the tree from this file if it exists")
    q.add_argument("--hardness", action="store_true", help="include hardness measures")
    q.add_argument("--directions", type=int, default=20)
    q.add_argument("--intervals", type=int, default=20)
    q.add_argument("--sample", type=int, default=None)

    be = sub.add_parser("bench", help="speedup table over k and shard counts")
    common(be, queries=True)
    search_opts(be)
    be.add_argument("--ks", type=_int_list, default=(1, 2, 5, 10))
    be.add_argument("--shard-counts", type=_int_list, default=(1,))

    d = sub.add_parser("diagnose", help="expansion constant and directional concentration")
    common(d)
    d.add_argument("--directions", type=int, default=20)
    d.add_argument("--intervals", type=int, default=20)
    d.add_argument("--sample", type=int, default=None,
                   help="compute on a seeded random subset of this size")
    d.add_argument("--cap", type=int, default=DEFAULT_CAP)
    return p


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    spec = RunSpec(command=args.command)
    for name in ("reference", "queries", "kernel", "mode", "k", "ks", "base", "shards",
                 "partitioner", "seed", "index", "output", "csv", "verify", "validate",
                 "hardness", "parent_prune", "strict", "directions", "intervals", "sample",
                 "cap", "n", "dim"):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(spec, name, getattr(args, name))
    if getattr(args, "report", None):
        spec.output = args.report
    if getattr(args, "shard_counts", None):
        spec.shard_counts = args.shard_counts
    if args.command == "generate":
        spec.generator = args.kind
        if args.clusters is not None:
            spec.extra["clusters"] = args.clusters
        if args.length is not None:
            spec.extra["length"] = args.length
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = spec_from_args(args)
    code, report = run(spec)
    for w in report.get("warnings", []) or []:
        print(f"warning: {w}", file=sys.stderr)
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)
    text = dumps(report)
    if spec.output and spec.command != "generate" and "error" not in report:
        Path(spec.output).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
