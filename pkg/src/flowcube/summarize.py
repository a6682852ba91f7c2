"""Node summarization: keep nodes that dominate their spatial neighborhood.

Every aggregated node is scored by the percentile rank of its count among
all nodes within a great-circle radius (r cell-lengths at its level). To keep
neighborhoods complete across partition boundaries, each node fans out to
every partition whose rectangle meets a safe degree-window around it; only
the replica in the node's own partition (the home replica) produces a
verdict, so each node is judged exactly once.

Output is the aggregate node line plus a "rank" field, written only for
nodes with rank strictly above the threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geo import EARTH_RADIUS_KM, GridHierarchy, haversine_km_many, km_to_deg_window
from .mapreduce import Job
from .partition import PartitionScheme, RectIndex

_BATCH = 1 << 16


@dataclass(frozen=True)
class SummaryConfig:
    """r: neighborhood radius in cell lengths (scalar or one value per level)."""

    r: float | tuple[float, ...] = 8.0
    threshold: float = 80.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 100.0:
            raise ValueError("threshold must be in [0, 100]")
        rs = self.r if isinstance(self.r, tuple) else (self.r,)
        if any(v <= 0 for v in rs):
            raise ValueError("neighborhood radius must be > 0")

    def r_for(self, level: int) -> float:
        if isinstance(self.r, tuple):
            return self.r[level - 1]
        return self.r


def percentile_rank(count: int, neighbor_counts: Sequence[int] | np.ndarray) -> float:
    """Mean-rank percentile of count among its neighbors; empty -> 100."""
    n = len(neighbor_counts)
    if n == 0:
        return 100.0
    arr = np.asarray(neighbor_counts)
    below = int(np.count_nonzero(arr < count))
    ties = int(np.count_nonzero(arr == count))
    return 100.0 * (below + 0.5 * ties) / n


def summary_line(rec: dict, rank: float) -> str:
    out = {"t": "n", "l": rec["l"], "id": rec["id"], "lon": rec["lon"], "lat": rec["lat"],
           "c": rec["c"], "u": rec["u"], "tt": rec["tt"], "tb": rec["tb"], "rank": rank}
    return json.dumps(out, separators=(",", ":"))


def _unit_sphere(lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    lam = np.radians(lons)
    phi = np.radians(lats)
    return np.column_stack((
        EARTH_RADIUS_KM * np.cos(phi) * np.cos(lam),
        EARTH_RADIUS_KM * np.cos(phi) * np.sin(lam),
        EARTH_RADIUS_KM * np.sin(phi),
    ))


def _chord_km(great_circle_km: float) -> float:
    half = min(great_circle_km / (2.0 * EARTH_RADIUS_KM), math.pi / 2.0)
    return 2.0 * EARTH_RADIUS_KM * math.sin(half)


class SummarizeJob(Job):
    """Aggregate NDJSON in; ranked, thresholded node NDJSON per partition out."""

    def __init__(self, grid: GridHierarchy, scheme: PartitionScheme, config: SummaryConfig = SummaryConfig()):
        self.grid = grid
        self.scheme = scheme
        self.config = config
        self._index: RectIndex | None = None

    def setup(self, broadcast: bytes | None) -> None:
        self._index = RectIndex(self.scheme)

    def offset_deg(self, level: int) -> float:
        r_km = self.grid.cell_len_km(level) * self.config.r_for(level)
        return km_to_deg_window(r_km, self.grid.region.max_abs_lat)

    def map_split(self, lines: Iterator[str], emit: Callable[[str, str], None]) -> None:
        batch: list[dict] = []
        for line in lines:
            rec = json.loads(line)
            if rec["t"] != "n":
                continue
            batch.append(rec)
            if len(batch) >= _BATCH:
                self._fan_out(batch, emit)
                batch = []
        if batch:
            self._fan_out(batch, emit)

    def _fan_out(self, batch: list[dict], emit: Callable[[str, str], None]) -> None:
        levels = np.array([r["l"] for r in batch], dtype=np.int64)
        lons = np.array([r["lon"] for r in batch], dtype=np.float64)
        lats = np.array([r["lat"] for r in batch], dtype=np.float64)
        homes = self._index.locate_many(lons, lats)
        offsets = np.array([self.offset_deg(l) for l in range(1, self.grid.levels + 1)])
        off = offsets[levels - 1]

        # Vectorized window-vs-rectangle test per partition (same convention
        # as RectIndex.neighbor_partitions).
        region = self._index.region
        targets = [np.zeros(len(batch), dtype=bool) for _ in range(self.scheme.n_partitions)]
        for pid, rect in enumerate(self.scheme.rects):
            lon_hi_closed = rect.lon_max == region.lon_max
            lat_hi_closed = rect.lat_max == region.lat_max
            lon_lo, lon_hi = lons - off, lons + off
            lat_lo, lat_hi = lats - off, lats + off
            lon_ok = (lon_hi >= rect.lon_min) & (
                (lon_lo < rect.lon_max) | (lon_hi_closed & (lon_lo <= rect.lon_max))
            )
            lat_ok = (lat_hi >= rect.lat_min) & (
                (lat_lo < rect.lat_max) | (lat_hi_closed & (lat_lo <= rect.lat_max))
            )
            targets[pid] = lon_ok & lat_ok
        for i, rec in enumerate(batch):
            for pid in range(self.scheme.n_partitions):
                if targets[pid][i] or pid == homes[i]:
                    value = json.dumps(
                        [rec["l"], rec["id"], rec["lon"], rec["lat"], rec["c"],
                         rec["u"], rec["tt"], rec["tb"], bool(pid == homes[i])],
                        separators=(",", ":"),
                    )
                    emit(f"{pid:05d}", value)

    def partition(self, key: str) -> int:
        return int(key)

    def reduce(self, key: str, values: list[str], write: Callable[[str], None]) -> None:
        by_level: dict[int, dict[int, list]] = {}
        for v in values:
            l, cell, lon, lat, c, u, tt, tb, home = json.loads(v)
            slot = by_level.setdefault(l, {})
            seen = slot.get(cell)
            if seen is None:
                slot[cell] = [lon, lat, c, u, tt, tb, home]
            elif home and not seen[6]:
                seen[6] = True

        out: list[tuple[int, int, str]] = []
        for level, cells in by_level.items():
            ids = np.array(sorted(cells), dtype=np.int64)
            lons = np.array([cells[i][0] for i in ids.tolist()])
            lats = np.array([cells[i][1] for i in ids.tolist()])
            counts = np.array([cells[i][2] for i in ids.tolist()], dtype=np.int64)
            home_mask = np.array([cells[i][6] for i in ids.tolist()], dtype=bool)
            r_km = self.grid.cell_len_km(level) * self.config.r_for(level)
            pts = _unit_sphere(lons, lats)
            tree = cKDTree(pts)
            # Chord radius padded by a few ulps; the exact strict haversine
            # test below decides membership.
            chord = _chord_km(r_km) * (1.0 + 1e-12) + 1e-12
            home_idx = np.flatnonzero(home_mask)
            if home_idx.size == 0:
                continue
            candidates = tree.query_ball_point(pts[home_idx], chord)
            for j, cand in zip(home_idx.tolist(), candidates):
                cand = np.asarray(cand, dtype=np.int64)
                cand = cand[cand != j]
                if cand.size:
                    d = haversine_km_many(lons[j], lats[j], lons[cand], lats[cand])
                    cand = cand[d < r_km]
                rank = percentile_rank(int(counts[j]), counts[cand])
                if rank > self.config.threshold:
                    cell = int(ids[j])
                    rec = {"l": level, "id": cell, "lon": float(lons[j]), "lat": float(lats[j]),
                           "c": int(counts[j]), "u": cells[cell][3], "tt": cells[cell][4],
                           "tb": cells[cell][5]}
                    out.append((level, cell, summary_line(rec, rank)))
        for _, _, line in sorted(out, key=lambda t: (t[0], t[1])):
            write(line)
