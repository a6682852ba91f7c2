"""Command-line driver for the pipeline, the service, and the load tools.

Exit codes: 0 success, 1 usage error, 2 input/data error, 3 internal
error. A --config manifest (JSON always; TOML on interpreters that ship
tomllib) supplies defaults for any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .geo import GridHierarchy, OutOfRegionError, Region
from .ingest import MalformedInputError
from .mapreduce import JobError
from .cube import SnapshotError
from .partition import PartitionScheme
from .pipeline import (
    PipelineOptions,
    run_aggregate,
    run_all,
    run_edge_filter,
    run_ingest,
    run_pack,
    run_partition,
    run_summarize,
    file_sha256,
)

USAGE_ERROR, DATA_ERROR, INTERNAL_ERROR = 1, 2, 3

DATA_ERRORS = (MalformedInputError, OutOfRegionError, SnapshotError, JobError,
               FileNotFoundError, NotADirectoryError, PermissionError,
               ValueError, KeyError, json.JSONDecodeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            raise MalformedInputError(
                "TOML config needs Python 3.11+ (tomllib); use a JSON config here")
        return tomllib.loads(text.decode())
    return json.loads(text)


class Options:
    """Flag > config > default resolution over a parsed namespace."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = args
        self._config = config

    def get(self, name: str, default=None):
        flag = getattr(self._args, name, None)
        if flag is not None:
            return flag
        if name in self._config:
            return self._config[name]
        return default

    def pipeline(self) -> PipelineOptions:
        base = PipelineOptions()
        values = {f: self.get(f, getattr(base, f))
                  for f in PipelineOptions.__dataclass_fields__}
        if self.get("no_users", False):
            values["track_users"] = False
        return PipelineOptions(**values)


def _grid(opt: Options) -> GridHierarchy:
    path = opt.get("grid")
    if path:
        return GridHierarchy.load(path)
    cfg = opt.get("grid_config")
    if cfg:
        return GridHierarchy.from_config(cfg)
    raise MalformedInputError("a grid is required: pass --grid grid.json "
                              "or a grid_config block in --config")


def _region(opt: Options) -> Region:
    raw = opt.get("region")
    if raw:
        w, s, e, n = (float(x) for x in str(raw).split(","))
        return Region(w, s, e, n)
    return _grid(opt).region


def _add_pipeline_flags(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "grid": lambda: p.add_argument("--grid", help="grid config JSON file"),
        "workers": lambda: p.add_argument("--workers", type=int),
        "alpha": lambda: p.add_argument("--alpha", type=float,
                                        help="distance cutoff = alpha * cell length"),
        "depth": lambda: p.add_argument("--depth", type=int),
        "sample_rate": lambda: p.add_argument("--sample-rate", dest="sample_rate",
                                              type=float),
        "seed": lambda: p.add_argument("--seed", type=int),
        "bucketing": lambda: (p.add_argument("--bucket-t0", dest="bucket_t0", type=int),
                              p.add_argument("--bucket-width", dest="bucket_width",
                                             type=int)),
        "users": lambda: p.add_argument("--no-users", dest="no_users",
                                        action="store_true", default=None,
                                        help="skip distinct-user tracking"),
        "summary": lambda: (p.add_argument("--r", type=float,
                                           help="neighborhood radius in cells"),
                            p.add_argument("--threshold", type=float,
                                           help="percentile keep threshold")),
        "p": lambda: p.add_argument("--p", type=float, help="bloom fp target"),
        "split": lambda: (p.add_argument("--split-mb", dest="split_mb", type=int),
                          p.add_argument("--shuffle-mem-mb", dest="shuffle_mem_mb",
                                         type=int)),
        "build_ts": lambda: p.add_argument("--build-ts", dest="build_ts",
                                           help="pin the snapshot build timestamp"),
    }
    for name in names:
        flags[name]()


def build_parser() -> _Parser:
    root = _Parser(prog="flowcube",
                   description="origin-destination flow graphs from event traces")
    root.add_argument("--config", help="JSON (or TOML on 3.11+) flag defaults")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="events CSV -> movements CSV")
    p.add_argument("events")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--max-gap-seconds", dest="max_gap_seconds", type=int)
    p.add_argument("--max-malformed-fraction", dest="max_malformed_fraction", type=float)
    _add_pipeline_flags(p, "grid")

    p = sub.add_parser("partition", help="movements -> spatial partition scheme")
    p.add_argument("movements")
    p.add_argument("-o", "--out", required=True)
    _add_pipeline_flags(p, "grid", "depth", "sample_rate", "seed")

    p = sub.add_parser("aggregate", help="movements -> per-level graph part files")
    p.add_argument("movements")
    p.add_argument("--parts", required=True)
    p.add_argument("-o", "--out", required=True)
    _add_pipeline_flags(p, "grid", "workers", "alpha", "bucketing", "users", "split")

    p = sub.add_parser("summarize", help="keep locally significant nodes")
    p.add_argument("agg", help="aggregate output directory (or a part file)")
    p.add_argument("--parts", required=True)
    p.add_argument("-o", "--out", required=True)
    _add_pipeline_flags(p, "grid", "workers", "summary", "split")

    p = sub.add_parser("filter-edges", help="drop edges without summarized endpoints")
    p.add_argument("agg")
    p.add_argument("summary")
    p.add_argument("-o", "--out", required=True)
    _add_pipeline_flags(p, "workers", "p", "split")

    p = sub.add_parser("pack", help="summary + edges -> snapshot file")
    p.add_argument("summary")
    p.add_argument("edges")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--events", help="original events file, hashed into provenance")
    _add_pipeline_flags(p, "grid", "alpha", "bucketing", "summary", "p", "build_ts")

    p = sub.add_parser("run-all", help="events CSV -> snapshot, all stages")
    p.add_argument("events")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--workdir")
    p.add_argument("--max-gap-seconds", dest="max_gap_seconds", type=int)
    p.add_argument("--max-malformed-fraction", dest="max_malformed_fraction", type=float)
    _add_pipeline_flags(p, "grid", "workers", "alpha", "depth", "sample_rate", "seed",
                        "bucketing", "users", "summary", "p", "split", "build_ts")

    p = sub.add_parser("serve", help="HTTP query service over a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--max-response-elems", dest="max_response_elems", type=int)
    p.add_argument("--hard-cap", dest="hard_cap", type=int)
    p.add_argument("--static", help="directory served at / (web client build)")

    p = sub.add_parser("synth", help="generate a synthetic event trace")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--events-per-user", dest="events_per_user", type=int)
    p.add_argument("--skew", type=float)
    p.add_argument("--clusters", type=int)
    p.add_argument("--region", help="w,s,e,n (defaults to the grid's region)")
    _add_pipeline_flags(p, "grid", "seed")

    p = sub.add_parser("stress", help="replay generated queries against a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--mode", choices=("population", "hotspot"))
    p.add_argument("-n", type=int, dest="n")
    p.add_argument("--rate", type=float)
    p.add_argument("--box-cells", dest="box_cells", type=float)
    p.add_argument("-o", "--out")
    _add_pipeline_flags(p, "seed")

    return root


def _print_loads(loads: list[int]) -> None:
    if not loads:
        return
    mean = sum(loads) / len(loads)
    print("reducer loads (emitted records per partition):")
    for pid, count in enumerate(loads):
        print(f"  partition {pid:3d}  {count:12d}  {count / mean if mean else 0:6.3f}x mean")
    if mean:
        print(f"  max/mean {max(loads) / mean:.3f}  min/mean {min(loads) / mean:.3f}")


def cmd_ingest(opt: Options) -> int:
    counters = run_ingest(opt.get("events"), opt.get("out"), _grid(opt), opt.pipeline())
    print(json.dumps(counters.as_dict(), indent=1))
    return 0


def cmd_partition(opt: Options) -> int:
    scheme = run_partition(opt.get("movements"), opt.get("out"), _grid(opt),
                           opt.pipeline())
    print(f"wrote {opt.get('out')}: depth {scheme.depth}, "
          f"{scheme.n_partitions} partitions, counts {scheme.counts}")
    return 0


def cmd_aggregate(opt: Options) -> int:
    scheme = PartitionScheme.load(opt.get("parts"))
    result = run_aggregate(opt.get("movements"), opt.get("out"), _grid(opt), scheme,
                           opt.pipeline())
    print(f"aggregate: map {result.map_seconds:.2f}s reduce {result.reduce_seconds:.2f}s "
          f"emitted {result.total_emitted}")
    _print_loads(result.emitted_per_partition)
    return 0


def cmd_summarize(opt: Options) -> int:
    scheme = PartitionScheme.load(opt.get("parts"))
    result = run_summarize(opt.get("agg"), opt.get("out"), _grid(opt), scheme,
                           opt.pipeline())
    print(f"summarize: map {result.map_seconds:.2f}s reduce {result.reduce_seconds:.2f}s "
          f"emitted {result.total_emitted}")
    return 0


def cmd_filter_edges(opt: Options) -> int:
    result, info = run_edge_filter(opt.get("agg"), opt.get("summary"), opt.get("out"),
                                   opt.pipeline())
    print(f"filter-edges: kept {result.total_emitted} edges; per-level filters:")
    for level, stats in info["filters"].items():
        print(f"  level {level}: n={stats['n']} m={stats['m']} k={stats['k']}")
    return 0


def cmd_pack(opt: Options) -> int:
    provenance = {}
    if opt.get("events"):
        provenance = {"input_sha256": file_sha256(opt.get("events")),
                      "events_file": Path(opt.get("events")).name}
    report = run_pack(opt.get("summary"), opt.get("edges"), opt.get("out"), _grid(opt),
                      opt.pipeline(), provenance)
    print(f"pack: {report['nodes']} nodes, {report['edges']} edges "
          f"({report['fp_surplus_dropped']} bloom false-positive edges dropped)")
    return 0


def cmd_run_all(opt: Options) -> int:
    report = run_all(opt.get("events"), opt.get("out"), _grid(opt), opt.pipeline(),
                     workdir=opt.get("workdir"))
    print("stage timings:")
    for stage in report["stages"]:
        print(f"  {stage['name']:<14} {stage['seconds']:8.3f}s")
    print(f"  {'total':<14} {report['total_seconds']:8.3f}s")
    _print_loads(report["reducer_loads"])
    pack = report["pack"]
    print(f"snapshot {report['snapshot']}: {pack['nodes']} nodes, {pack['edges']} edges "
          f"({pack['fp_surplus_dropped']} bloom false-positive edges dropped)")
    return 0


def cmd_serve(opt: Options) -> int:
    from .service import DEFAULT_HARD_CAP, DEFAULT_MAX_ELEMENTS, serve

    serve(opt.get("snapshot"),
          port=opt.get("port", 8080),
          host=opt.get("host", "127.0.0.1"),
          max_response_elems=opt.get("max_response_elems", DEFAULT_MAX_ELEMENTS),
          hard_cap=opt.get("hard_cap", DEFAULT_HARD_CAP),
          static_dir=opt.get("static"))
    return 0


def cmd_synth(opt: Options) -> int:
    from .synth import synth_to_file

    try:
        region = _region(opt)
    except MalformedInputError:
        region = Region(0.0, 0.0, 6.0, 6.0)
    kwargs = {}
    if opt.get("skew") is not None:
        kwargs["skew"] = opt.get("skew")
    if opt.get("clusters") is not None:
        kwargs["clusters"] = opt.get("clusters")
    info = synth_to_file(opt.get("out"), opt.get("users", 1000),
                         opt.get("events_per_user", 20), region,
                         opt.get("seed", 0), **kwargs)
    print(f"wrote {opt.get('out')}: {info['events']} events, "
          f"{info['cluster_users']} cluster-homed users")
    return 0


def cmd_stress(opt: Options) -> int:
    from .stress import stress_snapshot

    report = stress_snapshot(opt.get("snapshot"), opt.get("mode", "population"),
                             opt.get("n", 2000), rate=opt.get("rate", 40.0),
                             seed=opt.get("seed", 0), out_path=opt.get("out"),
                             box_cells=opt.get("box_cells", 40.0))
    print(f"{report['mode']}: n={report['n']} rate={report['rate_qps']}qps "
          f"avg={report['avg_ms']:.1f}ms median={report['median_ms']:.1f}ms "
          f"p90={report['p90_ms']:.1f}ms errors={report['errors']}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "partition": cmd_partition,
    "aggregate": cmd_aggregate,
    "summarize": cmd_summarize,
    "filter-edges": cmd_filter_edges,
    "pack": cmd_pack,
    "run-all": cmd_run_all,
    "serve": cmd_serve,
    "synth": cmd_synth,
    "stress": cmd_stress,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](Options(args, config))
    except SystemExit:
        raise
    except DATA_ERRORS as exc:
        print(f"flowcube {args.command}: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception:
        traceback.print_exc()
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
