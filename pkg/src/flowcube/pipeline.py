"""End-to-end pipeline wiring: one function per stage plus a full run.

Each stage is a thin adapter between the persisted artifacts (CSV,
partition JSON, NDJSON part files, filter files, snapshot) and the
corresponding module, so running stages one-by-one from the command line
and calling run_all produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .aggregate import AggregateJob, TimeBucketing, iter_records
from .bloom import bloom_build, save_filters
from .cube import make_header, write_snapshot
from .edgefilter import edge_filter_stage, exact_join
from .geo import GridHierarchy
from .ingest import ingest_file, read_movements_csv
from .mapreduce import JobResult, JobSpec, run_job
from .partition import PartitionScheme, partition_stage
from .summarize import SummarizeJob, SummaryConfig


@dataclass
class PipelineOptions:
    depth: int = 4
    sample_rate: float = 0.01
    seed: int = 0
    alpha: float = 64.0
    bucket_t0: int = 0
    bucket_width: int = 86400
    track_users: bool = True
    r: float = 8.0
    threshold: float = 80.0
    p: float = 0.01
    workers: int = 1
    split_mb: int = 32
    shuffle_mem_mb: int = 256
    max_gap_seconds: int | None = None
    max_malformed_fraction: float = 0.1
    build_ts: str | None = None

    def bucketing(self) -> TimeBucketing:
        return TimeBucketing(t0=self.bucket_t0, width=self.bucket_width)

    def summary(self) -> SummaryConfig:
        return SummaryConfig(r=self.r, threshold=self.threshold)


def build_timestamp(explicit: str | None = None) -> str:
    """ISO build time; SOURCE_DATE_EPOCH wins for reproducible artifacts."""
    if explicit:
        return explicit
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (datetime.fromtimestamp(int(epoch), tz=timezone.utc)
            if epoch else datetime.now(timezone.utc))
    return when.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _part_files(source) -> list[Path]:
    """Accept a part directory or an explicit list of files."""
    if isinstance(source, (list, tuple)):
        return [Path(p) for p in source]
    path = Path(source)
    if path.is_dir():
        files = sorted(path.glob("part-*"))
        if not files:
            raise FileNotFoundError(f"no part files under {path}")
        return files
    return [path]


def run_ingest(events_csv, movements_csv, grid: GridHierarchy, opts: PipelineOptions):
    return ingest_file(events_csv, movements_csv, grid.region,
                       max_gap_seconds=opts.max_gap_seconds,
                       max_malformed_fraction=opts.max_malformed_fraction)


def run_partition(movements_csv, parts_json, grid: GridHierarchy,
                  opts: PipelineOptions) -> PartitionScheme:
    chunks = read_movements_csv(movements_csv)
    return partition_stage(chunks, grid.region, opts.depth, opts.sample_rate,
                           opts.seed, parts_json)


def run_aggregate(movements_csv, out_dir, grid: GridHierarchy,
                  scheme: PartitionScheme, opts: PipelineOptions) -> JobResult:
    job = AggregateJob(grid, scheme, alpha=opts.alpha, bucketing=opts.bucketing(),
                       track_users=opts.track_users)
    spec = JobSpec([movements_csv], out_dir, n_partitions=scheme.n_partitions,
                   workers=opts.workers, split_mb=opts.split_mb,
                   shuffle_mem_mb=opts.shuffle_mem_mb)
    return run_job(job, spec)


def run_summarize(agg_source, out_dir, grid: GridHierarchy,
                  scheme: PartitionScheme, opts: PipelineOptions) -> JobResult:
    job = SummarizeJob(grid, scheme, opts.summary())
    spec = JobSpec(_part_files(agg_source), out_dir,
                   n_partitions=scheme.n_partitions, workers=opts.workers,
                   split_mb=opts.split_mb, shuffle_mem_mb=opts.shuffle_mem_mb)
    return run_job(job, spec)


def run_edge_filter(agg_source, summary_source, out_dir,
                    opts: PipelineOptions) -> tuple[JobResult, dict]:
    summary_files = _part_files(summary_source)
    keys = ((rec["l"], rec["id"]) for rec in iter_records(summary_files, kinds="n"))
    filters = bloom_build(keys, p=opts.p)
    out_dir = Path(out_dir)
    saved = save_filters(filters, out_dir / "blooms")
    result = edge_filter_stage(_part_files(agg_source), out_dir, filters,
                               n_partitions=max(len(filters), 1),
                               workers=opts.workers, split_mb=opts.split_mb)
    info = {"filters": {level: {"m": f.m, "k": f.k, "n": f.n_inserted}
                        for level, f in sorted(filters.items())},
            "files": [str(p) for p in saved]}
    return result, info


def run_pack(summary_source, edges_source, snapshot_path, grid: GridHierarchy,
             opts: PipelineOptions, provenance: dict | None = None) -> dict:
    nodes = list(iter_records(_part_files(summary_source), kinds="n"))
    edges = list(iter_records(_part_files(edges_source), kinds="e"))
    node_keys = {(r["l"], r["id"]) for r in nodes}
    kept = list(exact_join(edges, node_keys))
    surplus = len(edges) - len(kept)

    prov = {"input_sha256": None, "alpha": opts.alpha, "r": opts.r,
            "threshold": opts.threshold, "p": opts.p,
            "built_at": build_timestamp(opts.build_ts)}
    if provenance:
        prov.update(provenance)
    header = write_snapshot(nodes, kept,
                            make_header(grid, opts.bucketing(), prov), snapshot_path)
    return {"nodes": len(nodes), "edges": len(kept),
            "fp_surplus_dropped": surplus, "header": header}


def run_all(events_csv, snapshot_path, grid: GridHierarchy, opts: PipelineOptions,
            workdir: str | Path | None = None) -> dict:
    """Full pipeline with per-stage wall times and reducer-load stats."""
    events_csv = Path(events_csv)
    workdir = Path(workdir) if workdir else Path(snapshot_path).parent / "work"
    workdir.mkdir(parents=True, exist_ok=True)
    movements = workdir / "movements.csv"
    parts = workdir / "parts.json"
    agg_dir = workdir / "agg"
    summary_dir = workdir / "summary"
    edges_dir = workdir / "edges"

    stages: list[dict] = []
    report: dict = {"stages": stages}

    def timed(name, fn):
        t0 = time.perf_counter()
        out = fn()
        stages.append({"name": name, "seconds": round(time.perf_counter() - t0, 3)})
        return out

    counters = timed("ingest", lambda: run_ingest(events_csv, movements, grid, opts))
    report["ingest"] = counters.as_dict()
    scheme = timed("partition", lambda: run_partition(movements, parts, grid, opts))
    agg = timed("aggregate", lambda: run_aggregate(movements, agg_dir, grid, scheme, opts))
    report["reducer_loads"] = agg.emitted_per_partition
    summ = timed("summarize", lambda: run_summarize(agg.output_files, summary_dir,
                                                    grid, scheme, opts))
    (edge_res, bloom_info) = timed(
        "filter-edges", lambda: run_edge_filter(agg.output_files, summ.output_files,
                                                edges_dir, opts))
    report["bloom"] = bloom_info["filters"]
    provenance = {"input_sha256": file_sha256(events_csv), "events_file": events_csv.name}
    pack = timed("pack", lambda: run_pack(summ.output_files, edge_res.output_files,
                                          snapshot_path, grid, opts, provenance))
    report["pack"] = {k: pack[k] for k in ("nodes", "edges", "fp_surplus_dropped")}
    report["snapshot"] = str(snapshot_path)
    report["total_seconds"] = round(sum(s["seconds"] for s in stages), 3)
    return report
