"""Per-level aggregation of movements into a multi-resolution flow graph.

Mappers fold every movement into partial node/edge accumulators for each grid
level (in-mapper combining), route the partials to spatial partitions by cell
center, and reducers merge partials into final node/edge records.

Merge rules are exact and order-independent: counts, travel-time sums and
histograms are integers, and centroids accumulate as integer-scaled offsets
from the owning cell's center, so any regrouping of partials (different
worker counts, split plans) reduces to byte-identical output.

Output lines are NDJSON, one record per line:
  node:    {"t":"n","l":…,"id":…,"lon":…,"lat":…,"c":…,"u":…,"tt":…,"tb":[[b,n],…]}
  edge:    {"t":"e","l":…,"s":…,"d":…,"c":…,"tt":…,"tb":[[b,n],…]}
  counter: {"t":"c","k":…,"v":…}
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import pandas as pd

from .geo import GridHierarchy, haversine_km_many
from .mapreduce import Job
from .partition import PartitionScheme, RectIndex

# Centroids accumulate as round((coord - cell_center) * CENTROID_SCALE):
# quantization stays under 5e-11 degrees while the int64 partial sums have
# headroom for ~10^8 endpoints per cell before reducers take over with
# arbitrary-precision ints.
CENTROID_SCALE = 10**10

_PARSE_CHUNK = 1 << 18
_MOVE_COLS = ["user_id", "t_src", "t_dst", "lon_s", "lat_s", "lon_d", "lat_d"]


@dataclass(frozen=True)
class TimeBucketing:
    """Histogram axis: bucket(t) = floor((t - t0) / width)."""

    t0: int = 0
    width: int = 86400

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("bucket width must be > 0")

    def bucket(self, t: int) -> int:
        return (t - self.t0) // self.width

    def buckets_many(self, ts: np.ndarray) -> np.ndarray:
        return (np.asarray(ts, dtype=np.int64) - self.t0) // self.width

    def to_dict(self) -> dict:
        return {"t0": self.t0, "width": self.width}

    @classmethod
    def from_dict(cls, raw: dict) -> "TimeBucketing":
        return cls(t0=int(raw["t0"]), width=int(raw["width"]))


def threshold_km(level: int, grid: GridHierarchy, alpha: float = 64.0) -> float:
    """Max edge length admitted at a level: alpha cell-lengths."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return alpha * grid.cell_len_km(level)


def node_line(level: int, cell: int, lon: float, lat: float, count: int,
              users: int | None, tt: int, tb: list[list[int]]) -> str:
    rec = {"t": "n", "l": level, "id": cell, "lon": lon, "lat": lat,
           "c": count, "u": users, "tt": tt, "tb": tb}
    return json.dumps(rec, separators=(",", ":"))


def edge_line(level: int, src: int, dst: int, count: int, tt: int,
              tb: list[list[int]]) -> str:
    rec = {"t": "e", "l": level, "s": src, "d": dst, "c": count, "tt": tt, "tb": tb}
    return json.dumps(rec, separators=(",", ":"))


def counter_line(name: str, value: int) -> str:
    return json.dumps({"t": "c", "k": name, "v": value}, separators=(",", ":"))


def parse_record(line: str) -> dict:
    return json.loads(line)


def iter_records(paths, kinds: str = "ne") -> Iterator[dict]:
    """Parsed records of the given kinds from part files, in file order."""
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["t"] in kinds:
                    yield rec


def _group_sum(codes: np.ndarray, *values: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Sort by codes and sum each value array per group.

    codes is (n, k) with the most significant column first. Returns
    (unique_codes, group_counts, [per-group sums…]).
    """
    if codes.shape[0] == 0:
        return codes, np.empty(0, dtype=np.int64), [np.empty(0, dtype=v.dtype) for v in values]
    order = np.lexsort(codes.T[::-1])
    sorted_codes = codes[order]
    boundary = np.empty(codes.shape[0], dtype=bool)
    boundary[0] = True
    boundary[1:] = (sorted_codes[1:] != sorted_codes[:-1]).any(axis=1)
    starts = np.flatnonzero(boundary)
    counts = np.diff(np.append(starts, codes.shape[0]))
    sums = [np.add.reduceat(v[order], starts) for v in values]
    return sorted_codes[starts], counts, sums


class _LevelAcc:
    """Per-level partial aggregates, merged across parse chunks."""

    def __init__(self) -> None:
        self.node_codes: list[np.ndarray] = []      # (n,1) cell
        self.node_vals: list[list[np.ndarray]] = [] # count, dlon, dlat
        self.src_codes: list[np.ndarray] = []       # (n,1) cell — source-only sums
        self.src_vals: list[list[np.ndarray]] = []  # tt
        self.ntb_codes: list[np.ndarray] = []       # (n,2) cell,bucket
        self.ntb_vals: list[list[np.ndarray]] = []  # count
        self.user_codes: list[np.ndarray] = []      # (n,2) cell,user
        self.edge_codes: list[np.ndarray] = []      # (n,2) src,dst
        self.edge_vals: list[list[np.ndarray]] = [] # count, tt
        self.etb_codes: list[np.ndarray] = []       # (n,3) src,dst,bucket
        self.etb_vals: list[list[np.ndarray]] = []  # count


class AggregateJob(Job):
    """Movement CSV lines in; merged node/edge NDJSON per spatial partition out."""

    def __init__(self, grid: GridHierarchy, scheme: PartitionScheme,
                 alpha: float = 64.0, bucketing: TimeBucketing = TimeBucketing(),
                 track_users: bool = True):
        self.grid = grid
        self.scheme = scheme
        self.alpha = alpha
        self.bucketing = bucketing
        self.track_users = track_users
        self._index: RectIndex | None = None

    def setup(self, broadcast: bytes | None) -> None:
        self._index = RectIndex(self.scheme)

    def _reset(self) -> None:
        self._acc = {l: _LevelAcc() for l in range(1, self.grid.levels + 1)}
        self._dropped = 0
        self._maybe_header = True

    def map_split(self, lines: Iterator[str], emit: Callable[[str, str], None]) -> None:
        self._reset()
        buf: list[str] = []
        for line in lines:
            buf.append(line)
            if len(buf) >= _PARSE_CHUNK:
                self._consume(buf)
                buf = []
        if buf:
            self._consume(buf)

    def _consume(self, buf: list[str]) -> None:
        if self._maybe_header:
            self._maybe_header = False
            if buf and buf[0][:1] not in "-0123456789":
                buf = buf[1:]
                if not buf:
                    return
        frame = pd.read_csv(
            io.StringIO("\n".join(buf)), header=None, names=_MOVE_COLS,
            dtype={c: (np.int64 if c in _MOVE_COLS[:3] else np.float64) for c in _MOVE_COLS},
        )
        user = frame["user_id"].to_numpy()
        ts = frame["t_src"].to_numpy()
        td = frame["t_dst"].to_numpy()
        lon_s = frame["lon_s"].to_numpy()
        lat_s = frame["lat_s"].to_numpy()
        lon_d = frame["lon_d"].to_numpy()
        lat_d = frame["lat_d"].to_numpy()

        r = self.grid.region
        bucket = self.bucketing.buckets_many(ts)
        ok = (
            (lon_s >= r.lon_min) & (lon_s <= r.lon_max)
            & (lat_s >= r.lat_min) & (lat_s <= r.lat_max)
            & (lon_d >= r.lon_min) & (lon_d <= r.lon_max)
            & (lat_d >= r.lat_min) & (lat_d <= r.lat_max)
            & (bucket >= 0)
        )
        self._dropped += int(ok.size - np.count_nonzero(ok))
        if not ok.all():
            user, ts, td, bucket = user[ok], ts[ok], td[ok], bucket[ok]
            lon_s, lat_s, lon_d, lat_d = lon_s[ok], lat_s[ok], lon_d[ok], lat_d[ok]
        if user.size == 0:
            return

        d_km = haversine_km_many(lon_s, lat_s, lon_d, lat_d)
        tt = td - ts

        for level in range(1, self.grid.levels + 1):
            acc = self._acc[level]
            src = self.grid.cell_index_many(lon_s, lat_s, level)
            dst = self.grid.cell_index_many(lon_d, lat_d, level)
            sc_lon, sc_lat = self.grid.cell_center_many(src, level)
            dc_lon, dc_lat = self.grid.cell_center_many(dst, level)
            dlon = np.concatenate([
                np.rint((lon_s - sc_lon) * CENTROID_SCALE).astype(np.int64),
                np.rint((lon_d - dc_lon) * CENTROID_SCALE).astype(np.int64),
            ])
            dlat = np.concatenate([
                np.rint((lat_s - sc_lat) * CENTROID_SCALE).astype(np.int64),
                np.rint((lat_d - dc_lat) * CENTROID_SCALE).astype(np.int64),
            ])
            both = np.concatenate([src, dst])
            ones = np.ones(both.size, dtype=np.int64)
            codes, _, sums = _group_sum(both[:, None], ones, dlon, dlat)
            acc.node_codes.append(codes)
            acc.node_vals.append(sums)

            codes, _, sums = _group_sum(src[:, None], tt)
            acc.src_codes.append(codes)
            acc.src_vals.append(sums)

            codes, _, sums = _group_sum(np.column_stack([src, bucket]), np.ones(src.size, dtype=np.int64))
            acc.ntb_codes.append(codes)
            acc.ntb_vals.append(sums)

            if self.track_users:
                pairs = np.column_stack([both, np.concatenate([user, user])])
                upairs, _, _ = _group_sum(pairs)
                acc.user_codes.append(upairs)

            keep = d_km < self.alpha * self.grid.cell_len_km(level)
            esrc, edst = src[keep], dst[keep]
            if esrc.size:
                codes, _, sums = _group_sum(
                    np.column_stack([esrc, edst]), np.ones(esrc.size, dtype=np.int64), tt[keep]
                )
                acc.edge_codes.append(codes)
                acc.edge_vals.append(sums)
                codes, _, sums = _group_sum(
                    np.column_stack([esrc, edst, bucket[keep]]), np.ones(esrc.size, dtype=np.int64)
                )
                acc.etb_codes.append(codes)
                acc.etb_vals.append(sums)

    @staticmethod
    def _merged(codes_list, vals_list, width):
        if not codes_list:
            empty = np.empty((0, width), dtype=np.int64)
            return empty, []
        codes = np.concatenate(codes_list, axis=0)
        if not vals_list:
            merged, _, _ = _group_sum(codes)
            return merged, []
        cols = len(vals_list[0])
        vals = [np.concatenate([v[i] for v in vals_list]) for i in range(cols)]
        merged, _, sums = _group_sum(codes, *vals)
        return merged, sums

    def _pids_for_cells(self, cells: np.ndarray, level: int) -> np.ndarray:
        lon, lat = self.grid.cell_center_many(cells, level)
        return self._index.locate_many(lon, lat)

    def cleanup(self, emit: Callable[[str, str], None]) -> None:
        for level in range(1, self.grid.levels + 1):
            acc = self._acc[level]
            nodes, nsums = self._merged(acc.node_codes, acc.node_vals, 1)
            srcs, ssums = self._merged(acc.src_codes, acc.src_vals, 1)
            ntb, ntbsums = self._merged(acc.ntb_codes, acc.ntb_vals, 2)
            users, _ = self._merged(acc.user_codes, [], 2)
            edges, esums = self._merged(acc.edge_codes, acc.edge_vals, 2)
            etb, etbsums = self._merged(acc.etb_codes, acc.etb_vals, 3)

            if nodes.shape[0]:
                cells = nodes[:, 0]
                pids = self._pids_for_cells(cells, level)
                tt_map = dict(zip(srcs[:, 0].tolist(), ssums[0].tolist())) if srcs.shape[0] else {}
                tb_map = _pairs_to_lists(ntb[:, 0], ntb[:, 1], ntbsums[0]) if ntb.shape[0] else {}
                user_map = _pairs_to_lists(users[:, 0], users[:, 1]) if users.shape[0] else {}
                counts, dlons, dlats = (s.tolist() for s in nsums)
                for i, cell in enumerate(cells.tolist()):
                    value = [
                        counts[i], dlons[i], dlats[i],
                        tt_map.get(cell, 0),
                        tb_map.get(cell, []),
                        sorted(user_map[cell]) if self.track_users and cell in user_map else None,
                    ]
                    emit(f"{pids[i]:05d}|n|{level:02d}|{cell:012d}", json.dumps(value, separators=(",", ":")))

            if edges.shape[0]:
                pids = self._pids_for_cells(edges[:, 0], level)
                tb_map = _pairs_to_lists(edges_key(etb[:, 0], etb[:, 1], etb[:, 2]),
                                         etb[:, 2], etbsums[0], pair_key=True) if etb.shape[0] else {}
                counts, tts = (s.tolist() for s in esums)
                srcl, dstl = edges[:, 0].tolist(), edges[:, 1].tolist()
                for i in range(edges.shape[0]):
                    tb = tb_map.get((srcl[i], dstl[i]), [])
                    value = [counts[i], tts[i], tb]
                    emit(
                        f"{pids[i]:05d}|e|{level:02d}|{srcl[i]:012d}|{dstl[i]:012d}",
                        json.dumps(value, separators=(",", ":")),
                    )
        if self._dropped:
            emit("00000|c|dropped", str(self._dropped))
        self._reset()

    def partition(self, key: str) -> int:
        return int(key[:5])

    def reduce(self, key: str, values: list[str], write: Callable[[str], None]) -> None:
        parts = key.split("|")
        kind = parts[1]
        if kind == "c":
            write(counter_line(parts[2], sum(int(v) for v in values)))
            return
        level = int(parts[2])
        if kind == "n":
            count = dlon = dlat = tt = 0
            tb: dict[int, int] = {}
            users: set[int] = set()
            tracked = False
            for v in values:
                c, dx, dy, t, tbl, ul = json.loads(v)
                count += c
                dlon += dx
                dlat += dy
                tt += t
                for b, n in tbl:
                    tb[b] = tb.get(b, 0) + n
                if ul is not None:
                    tracked = True
                    users.update(ul)
            cell = int(parts[3])
            c_lon, c_lat = self.grid.cell_center(level, cell)
            write(node_line(
                level, cell,
                c_lon + dlon / (CENTROID_SCALE * count),
                c_lat + dlat / (CENTROID_SCALE * count),
                count, len(users) if tracked else None, tt,
                [[b, tb[b]] for b in sorted(tb)],
            ))
        else:
            count = tt = 0
            tb = {}
            for v in values:
                c, t, tbl = json.loads(v)
                count += c
                tt += t
                for b, n in tbl:
                    tb[b] = tb.get(b, 0) + n
            write(edge_line(
                level, int(parts[3]), int(parts[4]), count, tt,
                [[b, tb[b]] for b in sorted(tb)],
            ))


def edges_key(src: np.ndarray, dst: np.ndarray, _b: np.ndarray) -> list[tuple[int, int]]:
    return list(zip(src.tolist(), dst.tolist()))


def _pairs_to_lists(keys, seconds, counts=None, pair_key: bool = False) -> dict:
    """Fold parallel key/value arrays into {key: [[v, n], …]} or {key: [v, …]}."""
    out: dict = {}
    if counts is None:
        for k, v in zip(keys.tolist(), seconds.tolist()):
            out.setdefault(k, []).append(v)
        return out
    key_list = keys if pair_key else keys.tolist()
    for k, v, n in zip(key_list, seconds.tolist(), counts.tolist()):
        out.setdefault(k, []).append([v, n])
    return out
