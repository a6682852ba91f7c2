"""Streaming semi-join of aggregated edges against summarized nodes.

Instead of a full join with the node list, each mapper holds the
per-level Bloom filters (shipped via the job broadcast channel) and
keeps an edge only when both endpoints pass membership. No real edge is
ever dropped; a bounded false-positive surplus survives and is removed
when the snapshot is packed.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .bloom import BloomFilter, deserialize_filters, node_key, serialize_filters
from .mapreduce import Job, JobError, JobResult, JobSpec, run_job


class EdgeFilterJob(Job):
    """Map-only: emit edge lines whose endpoints pass the level filter."""

    def __init__(self):
        self._filters: dict[int, BloomFilter] = {}

    def setup(self, broadcast) -> None:
        if not broadcast or "filters" not in broadcast:
            raise JobError("edge filter job requires broadcast bloom filters")
        self._filters = deserialize_filters(broadcast["filters"])

    def map_split(self, lines: Iterable[str], emit) -> None:
        filters = self._filters
        for line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("t") != "e":
                continue
            level = rec["l"]
            filt = filters.get(level)
            if filt is None:
                raise JobError(f"no bloom filter for level {level}")
            if filt.member(node_key(level, rec["s"])) and filt.member(node_key(level, rec["d"])):
                emit(line, "")

    def reduce(self, key: str, values: Iterator[str], write) -> None:
        for _ in values:
            write(key)


def exact_join(edge_records: Iterable[dict], node_keys: set[tuple[int, int]]) -> Iterator[dict]:
    """Reference semi-join on (level, cell) for both endpoints."""
    for rec in edge_records:
        if (rec["l"], rec["s"]) in node_keys and (rec["l"], rec["d"]) in node_keys:
            yield rec


def edge_filter_stage(
    inputs: Sequence[str | Path],
    out_dir: str | Path,
    filters: dict[int, BloomFilter],
    n_partitions: int = 1,
    workers: int = 1,
    split_mb: int = 32,
) -> JobResult:
    spec = JobSpec(
        inputs=list(inputs),
        out_dir=out_dir,
        n_partitions=n_partitions,
        workers=workers,
        split_mb=split_mb,
        broadcast={"filters": serialize_filters(filters)},
    )
    return run_job(EdgeFilterJob(), spec)
