"""Balanced rectangular decomposition of the region, plus point-location.

A small sample of movement source points drives a recursive bisection: each
rectangle splits at the sample median along whichever axis balances the two
halves best. The resulting rectangles are shipped to every pipeline stage and
queried through a packed bounding-rectangle tree.

Boundary convention (shared with grid cells): a rectangle owns the half-open
extent [min, max) on each axis, except that a rectangle touching the region's
max edge owns that edge too. Every in-region point therefore belongs to
exactly one rectangle.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geo import GeoPoint, OutOfRegionError, Region

_FANOUT = 8


def sample_source_points(
    chunks: Iterable[dict[str, np.ndarray]],
    rate: float,
    seed: int,
) -> np.ndarray:
    """Bernoulli-sample movement source points; returns an (n, 2) lon/lat array.

    The draw stream depends only on the seed and record order, so the sample
    is reproducible regardless of how the input was chunked.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sample rate must be in (0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    picked: list[np.ndarray] = []
    total = 0
    for cols in chunks:
        n = cols["lon_s"].size
        total += n
        mask = rng.random(n) < rate if rate < 1.0 else np.ones(n, dtype=bool)
        if mask.any():
            picked.append(np.column_stack((cols["lon_s"][mask], cols["lat_s"][mask])))
    if total == 0:
        raise ValueError("cannot partition: no input movements")
    if not picked:
        raise ValueError(f"cannot partition: rate {rate} sampled 0 of {total} movements")
    return np.concatenate(picked, axis=0)


def _median_cut(coords: np.ndarray) -> float:
    """Upper median: with the half-open convention this puts n//2 points left."""
    return float(np.sort(coords)[coords.size // 2])


def _split_rect(rect: Region, pts: np.ndarray) -> tuple[int, float]:
    """Pick (axis, cut) for one rectangle; axis 0 = lon, 1 = lat."""
    longer = 0 if rect.width >= rect.height else 1
    if pts.shape[0] == 0:
        # Degenerate: no guidance from the sample, halve the longer axis.
        lo, hi = (rect.lon_min, rect.lon_max) if longer == 0 else (rect.lat_min, rect.lat_max)
        return longer, (lo + hi) / 2.0

    best: tuple[int, int, float] | None = None  # (imbalance, axis, cut)
    for axis in range(2):
        lo, hi = (rect.lon_min, rect.lon_max) if axis == 0 else (rect.lat_min, rect.lat_max)
        cut = _median_cut(pts[:, axis])
        if not lo < cut < hi:
            cut = (lo + hi) / 2.0
        left = int(np.count_nonzero(pts[:, axis] < cut))
        imbalance = abs(pts.shape[0] - 2 * left)
        # Tie on imbalance -> longer axis, then lon.
        rank = (imbalance, 0 if axis == longer else 1, axis)
        if best is None or rank < best[0]:
            best = (rank, axis, cut)
    _, axis, cut = best
    return axis, cut


def recursive_bisect(
    points: np.ndarray,
    depth: int,
    region: Region,
    seed: int = 0,
    sample_rate: float = 1.0,
) -> "PartitionScheme":
    """Split the region into 2**depth rectangles balancing sample counts."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if points.shape[0] == 0:
        raise ValueError("cannot partition an empty sample")

    rects: list[Region] = []
    counts: list[int] = []

    def recurse(rect: Region, pts: np.ndarray, d: int) -> None:
        if d == 0:
            rects.append(rect)
            counts.append(int(pts.shape[0]))
            return
        axis, cut = _split_rect(rect, pts)
        if axis == 0:
            left = Region(rect.lon_min, rect.lat_min, cut, rect.lat_max)
            right = Region(cut, rect.lat_min, rect.lon_max, rect.lat_max)
        else:
            left = Region(rect.lon_min, rect.lat_min, rect.lon_max, cut)
            right = Region(rect.lon_min, cut, rect.lon_max, rect.lat_max)
        mask = pts[:, axis] < cut
        recurse(left, pts[mask], d - 1)
        recurse(right, pts[~mask], d - 1)

    recurse(region, points, depth)
    return PartitionScheme(depth=depth, rects=rects, counts=counts, seed=seed, sample_rate=sample_rate)


@dataclass
class PartitionScheme:
    depth: int
    rects: list[Region]
    counts: list[int]
    seed: int
    sample_rate: float

    @property
    def n_partitions(self) -> int:
        return len(self.rects)

    @property
    def region(self) -> Region:
        lon_min = min(r.lon_min for r in self.rects)
        lat_min = min(r.lat_min for r in self.rects)
        lon_max = max(r.lon_max for r in self.rects)
        lat_max = max(r.lat_max for r in self.rects)
        return Region(lon_min, lat_min, lon_max, lat_max)

    def to_json(self) -> str:
        return json.dumps(
            {
                "depth": self.depth,
                "rects": [[r.lon_min, r.lat_min, r.lon_max, r.lat_max] for r in self.rects],
                "counts": self.counts,
                "seed": self.seed,
                "sample_rate": self.sample_rate,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PartitionScheme":
        raw = json.loads(text)
        return cls(
            depth=int(raw["depth"]),
            rects=[Region(*r) for r in raw["rects"]],
            counts=[int(c) for c in raw["counts"]],
            seed=int(raw.get("seed", 0)),
            sample_rate=float(raw.get("sample_rate", 1.0)),
        )

    def save(self, path: str | os.PathLike) -> None:
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PartitionScheme":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


class RectIndex:
    """Static packed bounding-rectangle tree over a partition scheme.

    Leaves are the scheme's rectangles (payload = partition id); internal
    nodes hold the bounding box of their children. With the leaf counts in
    play here the tree is shallow, but queries stay sublinear and — more
    importantly — the exact ownership tests live in one place.
    """

    def __init__(self, scheme: PartitionScheme):
        self.scheme = scheme
        self.region = scheme.region
        boxes = np.array(
            [[r.lon_min, r.lat_min, r.lon_max, r.lat_max] for r in scheme.rects],
            dtype=np.float64,
        )
        self._leaf_boxes = boxes
        # Effective closed upper edges: open unless flush with the region max.
        self._lon_max_closed = boxes[:, 2] == self.region.lon_max
        self._lat_max_closed = boxes[:, 3] == self.region.lat_max
        self._nodes: list[tuple[np.ndarray, list[int] | None, list[int] | None]] = []
        self._root = self._build(list(range(len(scheme.rects))))

    def _build(self, ids: list[int]) -> int:
        # STR-style packing: sort by center lon, slice, sort slices by center lat.
        if len(ids) <= _FANOUT:
            box = self._enclose(ids)
            self._nodes.append((box, ids, None))
            return len(self._nodes) - 1
        boxes = self._leaf_boxes[ids]
        cx = (boxes[:, 0] + boxes[:, 2]) / 2
        cy = (boxes[:, 1] + boxes[:, 3]) / 2
        order = np.lexsort((cy, cx))
        ids = [ids[i] for i in order]
        n_groups = -(-len(ids) // _FANOUT)
        children = []
        for g in range(n_groups):
            children.append(self._build(ids[g * _FANOUT : (g + 1) * _FANOUT]))
        box = self._enclose_nodes(children)
        self._nodes.append((box, None, children))
        return len(self._nodes) - 1

    def _enclose(self, ids: list[int]) -> np.ndarray:
        b = self._leaf_boxes[ids]
        return np.array([b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()])

    def _enclose_nodes(self, children: list[int]) -> np.ndarray:
        b = np.array([self._nodes[c][0] for c in children])
        return np.array([b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()])

    def _owns(self, pid: int, lon: float, lat: float) -> bool:
        w, s, e, n = self._leaf_boxes[pid]
        if not (w <= lon and s <= lat):
            return False
        lon_ok = lon < e or (self._lon_max_closed[pid] and lon == e)
        lat_ok = lat < n or (self._lat_max_closed[pid] and lat == n)
        return lon_ok and lat_ok

    def locate(self, p: GeoPoint | tuple[float, float]) -> int:
        lon, lat = (p.lon, p.lat) if isinstance(p, GeoPoint) else p
        if not self.region.contains(lon, lat):
            raise OutOfRegionError(f"point ({lon}, {lat}) outside region")
        stack = [self._root]
        while stack:
            box, leaf_ids, children = self._nodes[stack.pop()]
            if not (box[0] <= lon <= box[2] and box[1] <= lat <= box[3]):
                continue
            if leaf_ids is not None:
                for pid in leaf_ids:
                    if self._owns(pid, lon, lat):
                        return pid
            else:
                stack.extend(children)
        raise OutOfRegionError(f"no rectangle owns ({lon}, {lat})")  # pragma: no cover

    def locate_many(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        """Vectorized locate over point arrays (same convention as locate)."""
        lons = np.asarray(lons, dtype=np.float64)
        lats = np.asarray(lats, dtype=np.float64)
        out = np.full(lons.shape, -1, dtype=np.int64)
        b = self._leaf_boxes
        for pid in range(b.shape[0]):
            w, s, e, n = b[pid]
            lon_ok = (lons >= w) & ((lons < e) | (self._lon_max_closed[pid] & (lons == e)))
            lat_ok = (lats >= s) & ((lats < n) | (self._lat_max_closed[pid] & (lats == n)))
            hit = lon_ok & lat_ok & (out == -1)
            out[hit] = pid
        if np.any(out == -1):
            bad = int(np.flatnonzero(out == -1)[0])
            raise OutOfRegionError(f"point ({lons.flat[bad]}, {lats.flat[bad]}) outside region")
        return out

    def _window_hits(self, pid: int, lo_lon: float, lo_lat: float, hi_lon: float, hi_lat: float) -> bool:
        # Closed query window against the rectangle's effective extent, so a
        # zero-size window reduces exactly to locate().
        w, s, e, n = self._leaf_boxes[pid]
        lon_ok = hi_lon >= w and (lo_lon < e or (self._lon_max_closed[pid] and lo_lon <= e))
        lat_ok = hi_lat >= s and (lo_lat < n or (self._lat_max_closed[pid] and lo_lat <= n))
        return lon_ok and lat_ok

    def neighbor_partitions(self, p: GeoPoint | tuple[float, float], offset_deg: float) -> set[int]:
        """Ids of all rectangles meeting the closed square around p."""
        if offset_deg < 0:
            raise ValueError("offset must be >= 0")
        lon, lat = (p.lon, p.lat) if isinstance(p, GeoPoint) else p
        lo_lon, hi_lon = lon - offset_deg, lon + offset_deg
        lo_lat, hi_lat = lat - offset_deg, lat + offset_deg
        found: set[int] = set()
        stack = [self._root]
        while stack:
            box, leaf_ids, children = self._nodes[stack.pop()]
            if box[0] > hi_lon or box[2] < lo_lon or box[1] > hi_lat or box[3] < lo_lat:
                continue
            if leaf_ids is not None:
                for pid in leaf_ids:
                    if self._window_hits(pid, lo_lon, lo_lat, hi_lon, hi_lat):
                        found.add(pid)
            else:
                stack.extend(children)
        return found


def partition_stage(
    chunks: Iterable[dict[str, np.ndarray]],
    region: Region,
    depth: int,
    rate: float,
    seed: int,
    out_path: str | os.PathLike,
) -> PartitionScheme:
    """Sample sources, bisect, persist the scheme."""
    pts = sample_source_points(chunks, rate, seed)
    scheme = recursive_bisect(pts, depth, region, seed=seed, sample_rate=rate)
    scheme.save(out_path)
    return scheme
