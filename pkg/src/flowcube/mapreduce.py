"""Embedded map-shuffle-reduce executor.

Runs a keyed map/reduce job over newline-delimited text files using local
processes: mappers consume byte-range splits, emissions are routed to
partitions by a pluggable key->partition function, spilled to sorted run
files under a memory budget, and merge-sorted into each reducer. Output is
byte-identical for any worker count because reduce input within a partition
is totally ordered by (key, value) and all job functions are required to be
deterministic.

Splits are planned from file sizes alone (never from the worker count), so
mapper emissions — and the per-partition load report — are reproducible
across runs of the same job on the same data.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import multiprocessing as mp
import os
import pickle
import struct
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

_LEN = struct.Struct("<II")


class JobError(RuntimeError):
    """A worker failed; partial outputs have been removed."""


@dataclass(frozen=True)
class Split:
    path: str
    start: int
    end: int


@dataclass
class JobSpec:
    inputs: Sequence[str | os.PathLike]
    out_dir: str | os.PathLike
    n_partitions: int = 1
    workers: int = 1
    shuffle_mem_mb: int = 256
    split_mb: int = 32
    broadcast: bytes | None = None

    def __post_init__(self) -> None:
        if self.n_partitions < 1 or self.workers < 1:
            raise ValueError("workers and partitions must be >= 1")


@dataclass
class JobResult:
    output_files: list[str]
    emitted_per_partition: list[int]
    map_seconds: float
    reduce_seconds: float

    @property
    def total_emitted(self) -> int:
        return sum(self.emitted_per_partition)


class Job:
    """Base class for map/reduce jobs. Subclasses must be picklable."""

    def setup(self, broadcast: bytes | None) -> None:
        """Runs once per worker process before any map/reduce call."""

    def map(self, line: str, emit: Callable[[str, str], None]) -> None:
        raise NotImplementedError

    def map_split(self, lines: Iterator[str], emit: Callable[[str, str], None]) -> None:
        """Process one split; override for bulk/vectorized mapping."""
        for line in lines:
            self.map(line, emit)

    def cleanup(self, emit: Callable[[str, str], None]) -> None:
        """Runs once per split after its last record (in-mapper combining hook)."""

    def partition(self, key: str) -> int:
        return stable_hash(key)

    def reduce(self, key: str, values: list[str], write: Callable[[str], None]) -> None:
        raise NotImplementedError


def stable_hash(key: str) -> int:
    """Process-independent key hash (Python's builtin hash is salted)."""
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def plan_splits(inputs: Sequence[str | os.PathLike], split_mb: int) -> list[Split]:
    """Carve inputs into byte ranges of roughly split_mb each.

    Mappers resolve ranges to whole lines: a split skips a leading partial
    line (unless it starts at 0) and reads through the newline at or past its
    end, so every line lands in exactly one split.
    """
    size_limit = max(1, split_mb) * (1 << 20)
    splits: list[Split] = []
    for path in inputs:
        path = os.fspath(path)
        size = os.path.getsize(path)
        if size == 0:
            continue
        n = max(1, -(-size // size_limit))
        step = -(-size // n)
        for start in range(0, size, step):
            splits.append(Split(path, start, min(start + step, size)))
    return splits


def _iter_split_lines(split: Split) -> Iterator[str]:
    with open(split.path, "rb") as fh:
        fh.seek(split.start)
        if split.start > 0:
            fh.readline()  # partial line owned by the previous split
        while fh.tell() <= split.end:
            line = fh.readline()
            if not line:
                break
            yield line.decode("utf-8").rstrip("\n")
            if fh.tell() > split.end:
                break


class _Spiller:
    """Per-mapper emission buffer with sorted spill runs."""

    def __init__(self, tmp_dir: str, mapper_id: int, n_partitions: int, mem_budget: int):
        self.tmp_dir = tmp_dir
        self.mapper_id = mapper_id
        self.n_partitions = n_partitions
        self.mem_budget = mem_budget
        self.buffers: list[list[tuple[bytes, bytes]]] = [[] for _ in range(n_partitions)]
        self.bytes_held = 0
        self.spill_no = 0
        self.counts = [0] * n_partitions

    def emit(self, pid: int, key: str, value: str) -> None:
        kb, vb = key.encode("utf-8"), value.encode("utf-8")
        self.buffers[pid].append((kb, vb))
        self.counts[pid] += 1
        self.bytes_held += len(kb) + len(vb) + 64
        if self.bytes_held >= self.mem_budget:
            self.spill()

    def spill(self) -> None:
        for pid, buf in enumerate(self.buffers):
            if not buf:
                continue
            buf.sort()
            path = os.path.join(self.tmp_dir, f"run-m{self.mapper_id:05d}-s{self.spill_no:04d}-p{pid:05d}")
            with open(path, "wb") as fh:
                for kb, vb in buf:
                    fh.write(_LEN.pack(len(kb), len(vb)))
                    fh.write(kb)
                    fh.write(vb)
            buf.clear()
        self.bytes_held = 0
        self.spill_no += 1

    def close(self) -> list[int]:
        self.spill()
        return self.counts


def _read_run(path: str) -> Iterator[tuple[bytes, bytes]]:
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_LEN.size)
            if not head:
                return
            klen, vlen = _LEN.unpack(head)
            yield fh.read(klen), fh.read(vlen)


# Worker-process state installed by the pool initializer (fork-safe: each
# worker gets its own unpickled copy of the job).
_worker_job: Job | None = None
_worker_cfg: dict = {}


def _init_worker(job_pickle: bytes, cfg: dict) -> None:
    global _worker_job, _worker_cfg
    _worker_job = pickle.loads(job_pickle)
    _worker_cfg = cfg
    _worker_job.setup(cfg.get("broadcast"))


def _run_mapper(args: tuple[int, Split]) -> list[int]:
    mapper_id, split = args
    job, cfg = _worker_job, _worker_cfg
    spiller = _Spiller(cfg["tmp_dir"], mapper_id, cfg["n_partitions"], cfg["mem_budget"])

    def emit(key: str, value: str) -> None:
        spiller.emit(job.partition(key) % cfg["n_partitions"], key, value)

    job.map_split(_iter_split_lines(split), emit)
    job.cleanup(emit)
    return spiller.close()


def _run_reducer(pid: int) -> tuple[int, str]:
    job, cfg = _worker_job, _worker_cfg
    runs = sorted(
        os.path.join(cfg["tmp_dir"], name)
        for name in os.listdir(cfg["tmp_dir"])
        if name.endswith(f"-p{pid:05d}")
    )
    out_path = os.path.join(cfg["out_dir"], f"part-{pid:05d}")
    tmp_path = f"{out_path}.inprogress"
    with open(tmp_path, "w", encoding="utf-8") as fh:

        def write(line: str) -> None:
            fh.write(line)
            fh.write("\n")

        merged = heapq.merge(*(_read_run(r) for r in runs))
        for kb, group in itertools.groupby(merged, key=lambda kv: kv[0]):
            job.reduce(kb.decode("utf-8"), [vb.decode("utf-8") for _, vb in group], write)
    os.replace(tmp_path, out_path)
    return pid, out_path


def run_job(job: Job, spec: JobSpec) -> JobResult:
    """Execute a job; returns output paths and the per-partition load report."""
    splits = plan_splits(spec.inputs, spec.split_mb)
    out_dir = os.fspath(spec.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    job_pickle = pickle.dumps(job)

    with tempfile.TemporaryDirectory(prefix="mr-", dir=out_dir) as tmp_dir:
        cfg = {
            "tmp_dir": tmp_dir,
            "out_dir": out_dir,
            "n_partitions": spec.n_partitions,
            "mem_budget": spec.shuffle_mem_mb * (1 << 20),
            "broadcast": spec.broadcast,
        }
        mapper_args = list(enumerate(splits))
        partitions = list(range(spec.n_partitions))
        outputs: list[str] = []
        try:
            t0 = time.monotonic()
            if spec.workers == 1:
                _init_worker(job_pickle, cfg)
                counts_per_mapper = [_run_mapper(a) for a in mapper_args]
                t1 = time.monotonic()
                reduced = [_run_reducer(p) for p in partitions]
            else:
                ctx = mp.get_context("fork")
                with ctx.Pool(spec.workers, _init_worker, (job_pickle, cfg)) as pool:
                    counts_per_mapper = pool.map(_run_mapper, mapper_args, chunksize=1)
                    t1 = time.monotonic()
                    reduced = pool.map(_run_reducer, partitions, chunksize=1)
            t2 = time.monotonic()
        except Exception as exc:
            for pid in partitions:
                for leftover in (
                    os.path.join(out_dir, f"part-{pid:05d}"),
                    os.path.join(out_dir, f"part-{pid:05d}.inprogress"),
                ):
                    if os.path.exists(leftover):
                        os.remove(leftover)
            raise JobError(f"{type(job).__name__} failed: {exc}") from exc

        emitted = [0] * spec.n_partitions
        for counts in counts_per_mapper:
            for pid, c in enumerate(counts):
                emitted[pid] += c
        outputs = [path for _, path in sorted(reduced)]

    log.info(
        "%s: %d splits, %d partitions, %d emissions, map %.2fs reduce %.2fs",
        type(job).__name__, len(splits), spec.n_partitions, sum(emitted), t1 - t0, t2 - t1,
    )
    return JobResult(
        output_files=outputs,
        emitted_per_partition=emitted,
        map_seconds=t1 - t0,
        reduce_seconds=t2 - t1,
    )
