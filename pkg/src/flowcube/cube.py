"""Single-file graph snapshot and the in-memory store that queries it.

Layout: one header JSON line, one section-table JSON line (byte length
and row count per section, in file order), then the node rows sorted by
(level, cell) and the edge rows sorted by (level, src, dst) as NDJSON.
Byte output is a pure function of the rows and the header, so identical
inputs produce identical snapshots.

The store keeps per-level column arrays. Node rows are ordered by cell
id, which for a row-major grid doubles as a (row, col) order: a bounding
box turns into a handful of contiguous id ranges, one binary search per
grid row, instead of a scan.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .aggregate import TimeBucketing
from .geo import GridHierarchy, Region

SNAPSHOT_VERSION = 1


class SnapshotError(Exception):
    pass


class SnapshotIntegrityError(SnapshotError):
    pass


class QueryError(ValueError):
    """Invalid query parameters (level/window/box)."""


def make_header(grid: GridHierarchy, bucketing: TimeBucketing, provenance: dict) -> dict:
    return {
        "v": SNAPSHOT_VERSION,
        "grid": grid.to_config(),
        "bucketing": bucketing.to_dict(),
        "provenance": dict(provenance),
    }


def _node_row(rec: dict) -> str:
    out = {"t": "n", "l": rec["l"], "id": rec["id"], "lon": rec["lon"],
           "lat": rec["lat"], "c": rec["c"], "u": rec["u"], "tt": rec["tt"],
           "tb": rec["tb"], "rank": rec["rank"]}
    return json.dumps(out, separators=(",", ":"))


def _edge_row(rec: dict) -> str:
    out = {"t": "e", "l": rec["l"], "s": rec["s"], "d": rec["d"],
           "c": rec["c"], "tt": rec["tt"], "tb": rec["tb"]}
    return json.dumps(out, separators=(",", ":"))


def write_snapshot(nodes: Iterable[dict], edges: Iterable[dict], header: dict,
                   path: str | Path) -> dict:
    """Validate, sort, and write. Returns the header as written."""
    node_rows = sorted(nodes, key=lambda r: (r["l"], r["id"]))
    edge_rows = sorted(edges, key=lambda r: (r["l"], r["s"], r["d"]))

    node_keys = {(r["l"], r["id"]) for r in node_rows}
    if len(node_keys) != len(node_rows):
        seen, dupes = set(), []
        for r in node_rows:
            key = (r["l"], r["id"])
            if key in seen:
                dupes.append(key)
            seen.add(key)
        raise SnapshotIntegrityError(f"duplicate node ids: {dupes[:10]}")
    missing = []
    prev = None
    for r in edge_rows:
        key = (r["l"], r["s"], r["d"])
        if key == prev:
            raise SnapshotIntegrityError(f"duplicate edge {key}")
        prev = key
        for end in (r["s"], r["d"]):
            if (r["l"], end) not in node_keys:
                missing.append((r["l"], end))
    if missing:
        raise SnapshotIntegrityError(
            f"{len(missing)} edge endpoint(s) without a node row, e.g. {missing[:10]}")

    nodes_blob = "".join(_node_row(r) + "\n" for r in node_rows).encode()
    edges_blob = "".join(_edge_row(r) + "\n" for r in edge_rows).encode()

    full_header = dict(header)
    full_header["counts"] = {"nodes": len(node_rows), "edges": len(edge_rows)}
    header_line = json.dumps(full_header, separators=(",", ":")) + "\n"
    table_line = json.dumps(
        {"sections": [["nodes", len(nodes_blob), len(node_rows)],
                      ["edges", len(edges_blob), len(edge_rows)]]},
        separators=(",", ":")) + "\n"

    path = str(path)
    tmp = path + ".inprogress"
    with open(tmp, "wb") as fh:
        fh.write(header_line.encode())
        fh.write(table_line.encode())
        fh.write(nodes_blob)
        fh.write(edges_blob)
    os.replace(tmp, path)
    return full_header


def read_header(path: str | Path) -> tuple[dict, list]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        table = json.loads(fh.readline())
    if header.get("v") != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {header.get('v')!r}")
    return header, table["sections"]


class _Levels:
    """Column arrays for one graph level."""

    __slots__ = ("ids", "lon", "lat", "c", "u", "tt", "rank",
                 "tb_indptr", "tb_bucket", "tb_count", "tb_total",
                 "es", "ed", "ec", "ett",
                 "etb_indptr", "etb_bucket", "etb_count", "etb_total",
                 "node_frag", "edge_frag")

    def __init__(self, nodes: list[dict], edges: list[dict]):
        n = len(nodes)
        self.ids = np.fromiter((r["id"] for r in nodes), np.int64, n)
        self.lon = np.fromiter((r["lon"] for r in nodes), np.float64, n)
        self.lat = np.fromiter((r["lat"] for r in nodes), np.float64, n)
        self.c = np.fromiter((r["c"] for r in nodes), np.int64, n)
        self.u = np.fromiter((-1 if r["u"] is None else r["u"] for r in nodes), np.int64, n)
        self.tt = np.fromiter((r["tt"] for r in nodes), np.int64, n)
        self.rank = np.fromiter((r["rank"] for r in nodes), np.float64, n)
        self.tb_indptr, self.tb_bucket, self.tb_count = _csr((r["tb"] for r in nodes), n)
        self.tb_total = np.add.reduceat(
            np.concatenate((self.tb_count, [0])), self.tb_indptr[:-1]) if n else np.zeros(0, np.int64)
        self.tb_total[self.tb_indptr[:-1] == self.tb_indptr[1:]] = 0

        m = len(edges)
        self.es = np.fromiter((r["s"] for r in edges), np.int64, m)
        self.ed = np.fromiter((r["d"] for r in edges), np.int64, m)
        self.ec = np.fromiter((r["c"] for r in edges), np.int64, m)
        self.ett = np.fromiter((r["tt"] for r in edges), np.int64, m)
        self.etb_indptr, self.etb_bucket, self.etb_count = _csr((r["tb"] for r in edges), m)
        self.etb_total = np.add.reduceat(
            np.concatenate((self.etb_count, [0])), self.etb_indptr[:-1]) if m else np.zeros(0, np.int64)
        self.etb_total[self.etb_indptr[:-1] == self.etb_indptr[1:]] = 0

        # Pre-render the static part of every query entry. Only the window
        # count varies per request, so a bbox response becomes a string
        # join instead of a dict-per-row encode; repr() of a float is the
        # same text the json encoder writes, keeping both renders equal.
        navg = np.where(self.tb_total > 0,
                        self.tt / np.maximum(self.tb_total, 1), 0.0).tolist()
        self.node_frag = [
            f'{{"id":{i},"lon":{lo!r},"lat":{la!r},'
            f'"users":{"null" if uu < 0 else uu},"avg_tt":{a!r},'
            f'"rank":{rk!r},"count":'
            for i, lo, la, uu, a, rk in zip(
                self.ids.tolist(), self.lon.tolist(), self.lat.tolist(),
                self.u.tolist(), navg, self.rank.tolist())]
        eavg = np.where(self.etb_total > 0,
                        self.ett / np.maximum(self.etb_total, 1), 0.0).tolist()
        self.edge_frag = [
            f'{{"s":{s},"d":{d},"avg_tt":{a!r},"count":'
            for s, d, a in zip(self.es.tolist(), self.ed.tolist(), eavg)]


def _csr(tb_lists, n) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    indptr = np.zeros(n + 1, np.int64)
    buckets: list[int] = []
    counts: list[int] = []
    for i, tb in enumerate(tb_lists):
        for b, c in tb:
            buckets.append(b)
            counts.append(c)
        indptr[i + 1] = len(buckets)
    return indptr, np.asarray(buckets, np.int64), np.asarray(counts, np.int64)


def _window_sums(indptr, buckets, counts, rows, bf, bt) -> np.ndarray:
    """Per-row sum of histogram counts with bucket in [bf, bt]."""
    if len(rows) == 0:
        return np.zeros(0, np.int64)
    starts = indptr[rows]
    lens = indptr[rows + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.zeros(len(rows), np.int64)
    cum = np.concatenate(([0], np.cumsum(lens)))
    idx = np.arange(total) - np.repeat(cum[:-1], lens) + np.repeat(starts, lens)
    vals = np.where((buckets[idx] >= bf) & (buckets[idx] <= bt), counts[idx], 0)
    owner = np.repeat(np.arange(len(rows)), lens)
    # counts are well under 2**53, so float accumulation is exact
    return np.bincount(owner, weights=vals, minlength=len(rows)).astype(np.int64)


class CubeStore:
    """Immutable in-memory snapshot with per-level range indexes."""

    def __init__(self, header: dict, per_level: dict[int, _Levels]):
        self.header = header
        self.grid = GridHierarchy.from_config(header["grid"])
        self.bucketing = TimeBucketing.from_dict(header["bucketing"])
        self._levels = per_level

    @classmethod
    def load(cls, path: str | Path) -> "CubeStore":
        header, sections = read_header(path)
        nodes_by_level: dict[int, list[dict]] = {}
        edges_by_level: dict[int, list[dict]] = {}
        with open(path, "rb") as fh:
            fh.readline()
            fh.readline()
            for name, size, _rows in sections:
                blob = fh.read(size)
                if len(blob) != size:
                    raise SnapshotError(f"truncated section {name!r}")
                target = nodes_by_level if name == "nodes" else edges_by_level
                for line in blob.splitlines():
                    rec = json.loads(line)
                    target.setdefault(rec["l"], []).append(rec)
        levels = GridHierarchy.from_config(header["grid"]).levels
        per_level = {}
        for level in range(1, levels + 1):
            per_level[level] = _Levels(nodes_by_level.get(level, []),
                                       edges_by_level.get(level, []))
        store = cls(header, per_level)
        store._check_counts()
        return store

    def _check_counts(self) -> None:
        n = sum(len(lv.ids) for lv in self._levels.values())
        m = sum(len(lv.es) for lv in self._levels.values())
        want = self.header.get("counts", {})
        if want and (want.get("nodes") != n or want.get("edges") != m):
            raise SnapshotError(
                f"row counts {n}/{m} disagree with header {want}")

    @property
    def levels(self) -> int:
        return self.grid.levels

    def node_count(self, level: int) -> int:
        return len(self._levels[level].ids)

    def edge_count(self, level: int) -> int:
        return len(self._levels[level].es)

    def _require_level(self, level: int) -> _Levels:
        if not isinstance(level, int) or not 1 <= level <= self.grid.levels:
            raise QueryError(f"level must be in 1..{self.grid.levels}, got {level}")
        return self._levels[level]

    def _box_rows(self, level: int, box: Region) -> np.ndarray:
        """Indexes of nodes whose centroid lies in the closed box."""
        lv = self._levels[level]
        grid = self.grid
        region = grid.region
        cell = grid.cell_len_deg(level)
        cols, rows = grid.cols(level), grid.rows(level)
        # Centroids sit inside their cell up to float rounding; pad one
        # cell before the exact test so the range prefilter cannot lose.
        c0 = max(int((box.lon_min - region.lon_min) / cell) - 1, 0)
        c1 = min(int((box.lon_max - region.lon_min) / cell) + 1, cols - 1)
        r0 = max(int((box.lat_min - region.lat_min) / cell) - 1, 0)
        r1 = min(int((box.lat_max - region.lat_min) / cell) + 1, rows - 1)
        if c0 > c1 or r0 > r1:
            return np.zeros(0, np.int64)
        pieces = []
        ids = lv.ids
        for r in range(r0, r1 + 1):
            lo = np.searchsorted(ids, r * cols + c0, "left")
            hi = np.searchsorted(ids, r * cols + c1, "right")
            if hi > lo:
                pieces.append(np.arange(lo, hi))
        if not pieces:
            return np.zeros(0, np.int64)
        cand = np.concatenate(pieces)
        keep = ((lv.lon[cand] >= box.lon_min) & (lv.lon[cand] <= box.lon_max)
                & (lv.lat[cand] >= box.lat_min) & (lv.lat[cand] <= box.lat_max))
        return cand[keep]

    def estimate(self, level: int, box: Region) -> int:
        """Pre-truncation upper bound on response elements.

        Candidate nodes plus twice their out-edge count (each edge may
        drag in one context endpoint), before any window filtering.
        """
        lv = self._require_level(level)
        rows = self._box_rows(level, box)
        if len(rows) == 0:
            return 0
        ids = lv.ids[rows]
        lo = np.searchsorted(lv.es, ids, "left")
        hi = np.searchsorted(lv.es, ids, "right")
        return int(len(rows) + 2 * (hi - lo).sum())

    def _node_entry(self, lv: _Levels, i: int, count: int, ctx: bool = False) -> dict:
        total = int(lv.tb_total[i])
        out = {"id": int(lv.ids[i]), "lon": float(lv.lon[i]), "lat": float(lv.lat[i]),
               "count": count, "users": None if lv.u[i] < 0 else int(lv.u[i]),
               "avg_tt": (int(lv.tt[i]) / total) if total else 0.0,
               "rank": float(lv.rank[i])}
        if ctx:
            out["ctx"] = True
        return out

    def _select_bbox(self, level: int, box: Region, window: tuple[int, int],
                     max_elements: int | None):
        """Row selection shared by the dict and pre-serialized renders.

        Returns (rows, wcounts, eidx, ewcounts, ctx_rows, ctx_wcounts,
        truncated). Context rows keep first-appearance order along the
        edge sequence so both renders list them identically.
        """
        lv = self._require_level(level)
        bf, bt = window
        if bf > bt:
            raise QueryError(f"empty window [{bf}, {bt}]")
        # _box_rows yields row-major pieces, so ids are already ascending.
        rows = self._box_rows(level, box)
        w = _window_sums(lv.tb_indptr, lv.tb_bucket, lv.tb_count, rows, bf, bt)
        keep = w > 0
        rows, w = rows[keep], w[keep]
        budget = float("inf") if max_elements is None else max_elements
        empty = np.zeros(0, np.int64)
        if len(rows) > budget:
            n = int(budget)
            return rows[:n], w[:n], empty, empty, empty, empty, True

        src_ids = lv.ids[rows]
        lo = np.searchsorted(lv.es, src_ids, "left")
        hi = np.searchsorted(lv.es, src_ids, "right")
        lens = hi - lo
        total = int(lens.sum())
        if total == 0:
            return rows, w, empty, empty, empty, empty, False
        # Flatten the per-source edge runs without a Python loop; sources
        # and edges are both sorted, so concatenation is (s, d) order.
        starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
        eidx = np.arange(total) + np.repeat(lo - starts, lens)
        ew = _window_sums(lv.etb_indptr, lv.etb_bucket, lv.etb_count, eidx, bf, bt)
        live = ew > 0
        eidx, ew = eidx[live], ew[live]
        if len(eidx) == 0:
            return rows, w, empty, empty, empty, empty, False

        dst = lv.ed[eidx]
        drow = np.searchsorted(lv.ids, dst)
        ok = (drow < len(lv.ids)) & (lv.ids[np.minimum(drow, len(lv.ids) - 1)] == dst)
        if not ok.all():
            raise SnapshotIntegrityError(
                f"edge destination {int(dst[~ok][0])} missing at level {level}")
        pos = np.searchsorted(rows, drow)
        in_box = np.zeros(len(drow), bool)
        hit = pos < len(rows)
        in_box[hit] = rows[pos[hit]] == drow[hit]
        # A context node is owed to the first edge that targets each
        # destination outside the box.
        new_ctx = np.zeros(len(eidx), bool)
        out = ~in_box
        if out.any():
            _, first = np.unique(drow[out], return_index=True)
            flags = np.zeros(int(out.sum()), bool)
            flags[first] = True
            new_ctx[out] = flags
        used = len(rows) + np.cumsum(1 + new_ctx.astype(np.int64))
        truncated = False
        if used[-1] > budget:
            cut = int(np.argmax(used > budget))
            truncated = True
            eidx, ew = eidx[:cut], ew[:cut]
            new_ctx, drow = new_ctx[:cut], drow[:cut]
        ctx_rows = drow[new_ctx]
        ctx_w = _window_sums(lv.tb_indptr, lv.tb_bucket, lv.tb_count,
                             ctx_rows, bf, bt)
        return rows, w, eidx, ew, ctx_rows, ctx_w, truncated

    def query_bbox(self, level: int, box: Region, window: tuple[int, int],
                   max_elements: int | None = None) -> dict:
        rows, w, eidx, ew, ctx_rows, ctx_w, truncated = self._select_bbox(
            level, box, window, max_elements)
        lv = self._levels[level]
        nodes = [self._node_entry(lv, i, int(c))
                 for i, c in zip(rows.tolist(), w.tolist())]
        edges = []
        for j, c in zip(eidx.tolist(), ew.tolist()):
            total = int(lv.etb_total[j])
            edges.append({"s": int(lv.es[j]), "d": int(lv.ed[j]), "count": int(c),
                          "avg_tt": (int(lv.ett[j]) / total) if total else 0.0})
        for i, c in zip(ctx_rows.tolist(), ctx_w.tolist()):
            nodes.append(self._node_entry(lv, i, int(c), ctx=True))
        return {"nodes": nodes, "edges": edges, "truncated": truncated}

    def query_bbox_json(self, level: int, box: Region, window: tuple[int, int],
                        max_elements: int | None = None) -> tuple[str, str, bool]:
        """Same selection as query_bbox, rendered as JSON array bodies.

        Returns (node_rows, edge_rows, truncated) where the row strings are
        comma-joined objects ready to wrap in brackets; keeps the serving
        path off the per-row dict encoder.
        """
        rows, w, eidx, ew, ctx_rows, ctx_w, truncated = self._select_bbox(
            level, box, window, max_elements)
        lv = self._levels[level]
        nf, ef = lv.node_frag, lv.edge_frag
        parts = [nf[i] + str(c) + "}"
                 for i, c in zip(rows.tolist(), w.tolist())]
        parts += [nf[i] + str(c) + ',"ctx":true}'
                  for i, c in zip(ctx_rows.tolist(), ctx_w.tolist())]
        eparts = [ef[j] + str(c) + "}"
                  for j, c in zip(eidx.tolist(), ew.tolist())]
        return ",".join(parts), ",".join(eparts), truncated

    def node_detail(self, level: int, cell: int) -> dict:
        lv = self._require_level(level)
        i = int(np.searchsorted(lv.ids, cell))
        if i >= len(lv.ids) or lv.ids[i] != cell:
            raise KeyError(f"no node {cell} at level {level}")
        tb = [[int(b), int(c)] for b, c in
              zip(lv.tb_bucket[lv.tb_indptr[i]:lv.tb_indptr[i + 1]],
                  lv.tb_count[lv.tb_indptr[i]:lv.tb_indptr[i + 1]])]
        return {"t": "n", "l": level, "id": int(lv.ids[i]),
                "lon": float(lv.lon[i]), "lat": float(lv.lat[i]),
                "c": int(lv.c[i]), "u": None if lv.u[i] < 0 else int(lv.u[i]),
                "tt": int(lv.tt[i]), "tb": tb, "rank": float(lv.rank[i])}

    def iter_nodes(self, level: int):
        lv = self._require_level(level)
        for cell in lv.ids.tolist():
            yield self.node_detail(level, cell)

    def iter_edges(self, level: int):
        lv = self._require_level(level)
        for j in range(len(lv.es)):
            tb = [[int(b), int(c)] for b, c in
                  zip(lv.etb_bucket[lv.etb_indptr[j]:lv.etb_indptr[j + 1]],
                      lv.etb_count[lv.etb_indptr[j]:lv.etb_indptr[j + 1]])]
            yield {"t": "e", "l": level, "s": int(lv.es[j]), "d": int(lv.ed[j]),
                   "c": int(lv.ec[j]), "tt": int(lv.ett[j]), "tb": tb}

    def node_sample(self, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Centroids and counts of a level's nodes (density proxy for load gen)."""
        lv = self._require_level(level)
        return lv.lon.copy(), lv.lat.copy(), lv.c.copy()

    def max_bucket(self) -> int:
        """Largest bucket index present anywhere (-1 if no histograms)."""
        top = -1
        for lv in self._levels.values():
            if len(lv.tb_bucket):
                top = max(top, int(lv.tb_bucket.max()))
            if len(lv.etb_bucket):
                top = max(top, int(lv.etb_bucket.max()))
        return top
