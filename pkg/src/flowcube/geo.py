"""Geodesy and hierarchical-grid arithmetic shared by every pipeline stage.

The grid is a stack of uniform lon/lat grids over one region. Level 1 is the
coarsest; each level down shrinks the cell edge by a fixed integer factor.
Cell ids are row-major integers per level, computed in O(1) from coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EARTH_RADIUS_KM = 6371.0
# Nominal meridian arc length of one degree on the R=6371 km sphere.
KM_PER_DEG = 111.195


class OutOfRegionError(ValueError):
    """A coordinate fell outside the configured study region."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class Region:
    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError(f"degenerate region {self.bounds()}")

    def bounds(self):
        return (self.lon_min, self.lat_min, self.lon_max, self.lat_max)

    @property
    def width(self) -> float:
        return self.lon_max - self.lon_min

    @property
    def height(self) -> float:
        return self.lat_max - self.lat_min

    def contains(self, lon: float, lat: float) -> bool:
        """Closed containment: boundary points belong to the region."""
        return (self.lon_min <= lon <= self.lon_max
                and self.lat_min <= lat <= self.lat_max)

    def intersects(self, other: "Region") -> bool:
        """Closed-rectangle intersection (shared edges count)."""
        return (self.lon_min <= other.lon_max and other.lon_min <= self.lon_max
                and self.lat_min <= other.lat_max and other.lat_min <= self.lat_max)

    @property
    def max_abs_lat(self) -> float:
        return max(abs(self.lat_min), abs(self.lat_max))


class CellId(NamedTuple):
    level: int
    index: int


@dataclass(frozen=True)
class MovementRecord:
    """One directed trip: a user leaving src at t_src and arriving at dst at t_dst."""

    user: int
    src: GeoPoint
    dst: GeoPoint
    t_src: int
    t_dst: int

    def __post_init__(self):
        if self.t_dst < self.t_src:
            raise ValueError(f"movement ends before it starts ({self.t_src} > {self.t_dst})")

    @property
    def travel_time(self) -> int:
        return self.t_dst - self.t_src


def great_circle_km(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_km(a.lon, a.lat, b.lon, b.lat)


def haversine_km(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance on the R=6371 km sphere."""
    d2r = math.pi / 180.0
    dlat = (lat2 - lat1) * d2r
    dlon = (lon2 - lon1) * d2r
    s1 = math.sin(dlat / 2.0)
    s2 = math.sin(dlon / 2.0)
    h = s1 * s1 + math.cos(lat1 * d2r) * math.cos(lat2 * d2r) * s2 * s2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_many(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Vectorized haversine_km over coordinate arrays."""
    d2r = math.pi / 180.0
    dlat = (np.asarray(lat2) - np.asarray(lat1)) * d2r
    dlon = (np.asarray(lon2) - np.asarray(lon1)) * d2r
    s1 = np.sin(dlat / 2.0)
    s2 = np.sin(dlon / 2.0)
    h = s1 * s1 + np.cos(np.asarray(lat1) * d2r) * np.cos(np.asarray(lat2) * d2r) * s2 * s2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


class GridHierarchy:
    """Region bounds plus L nested uniform grids (level 1 coarsest, L finest).

    cell_len(l) = base_cell_arcsec * growth**(L - l) arc-seconds, so consecutive
    levels differ by the integer `growth` factor and level L has the base size.
    """

    def __init__(self, region: Region, levels: int, base_cell_arcsec: float,
                 growth: int = 2):
        if levels < 1:
            raise ValueError("need at least one level")
        if base_cell_arcsec <= 0:
            raise ValueError("base cell size must be positive")
        if growth < 1:
            raise ValueError("growth factor must be >= 1")
        self.region = region
        self.levels = levels
        self.base_cell_arcsec = base_cell_arcsec
        self.growth = growth
        # 1-indexed per-level tables; slot 0 unused.
        self._len_deg = [0.0] * (levels + 1)
        self._cols = [0] * (levels + 1)
        self._rows = [0] * (levels + 1)
        for l in range(1, levels + 1):
            arcsec = base_cell_arcsec * growth ** (levels - l)
            len_deg = arcsec / 3600.0
            self._len_deg[l] = len_deg
            self._cols[l] = max(1, math.ceil(region.width / len_deg))
            self._rows[l] = max(1, math.ceil(region.height / len_deg))

    def _check_level(self, level: int):
        if not 1 <= level <= self.levels:
            raise ValueError(f"level {level} outside 1..{self.levels}")

    def cell_len_deg(self, level: int) -> float:
        self._check_level(level)
        return self._len_deg[level]

    def cell_len_km(self, level: int) -> float:
        """Nominal cell edge in km (arc-seconds of latitude at KM_PER_DEG)."""
        self._check_level(level)
        return self.base_cell_arcsec * self.growth ** (self.levels - level) \
            * KM_PER_DEG / 3600.0

    def cols(self, level: int) -> int:
        self._check_level(level)
        return self._cols[level]

    def rows(self, level: int) -> int:
        self._check_level(level)
        return self._rows[level]

    def cell_count(self, level: int) -> int:
        return self.cols(level) * self.rows(level)

    def cell_index(self, lon: float, lat: float, level: int) -> int:
        """Row-major cell index of a point, O(1), no lookup structures.

        Points on a cell's max edge are clamped into the last row/column so
        the mapping is total over the closed region.
        """
        self._check_level(level)
        r = self.region
        if not r.contains(lon, lat):
            raise OutOfRegionError(f"point ({lon}, {lat}) outside region {r.bounds()}")
        len_deg = self._len_deg[level]
        col = int((lon - r.lon_min) / len_deg)
        row = int((lat - r.lat_min) / len_deg)
        cols = self._cols[level]
        if col >= cols:
            col = cols - 1
        if row >= self._rows[level]:
            row = self._rows[level] - 1
        return row * cols + col

    def cell_bounds(self, level: int, index: int) -> Region:
        """Cell rectangle, clipped to the region on the max edges."""
        self._check_level(level)
        cols = self._cols[level]
        rows = self._rows[level]
        if not 0 <= index < rows * cols:
            raise ValueError(f"cell index {index} outside level {level} grid ({rows}x{cols})")
        row, col = divmod(index, cols)
        len_deg = self._len_deg[level]
        r = self.region
        return Region(
            r.lon_min + col * len_deg,
            r.lat_min + row * len_deg,
            min(r.lon_min + (col + 1) * len_deg, r.lon_max),
            min(r.lat_min + (row + 1) * len_deg, r.lat_max),
        )

    def cell_center(self, level: int, index: int) -> tuple[float, float]:
        b = self.cell_bounds(level, index)
        return ((b.lon_min + b.lon_max) / 2.0, (b.lat_min + b.lat_max) / 2.0)

    def cell_index_many(self, lons: np.ndarray, lats: np.ndarray, level: int) -> np.ndarray:
        """Vectorized cell_index over coordinate arrays (same clamping)."""
        self._check_level(level)
        r = self.region
        lons = np.asarray(lons, dtype=np.float64)
        lats = np.asarray(lats, dtype=np.float64)
        ok = (lons >= r.lon_min) & (lons <= r.lon_max) & (lats >= r.lat_min) & (lats <= r.lat_max)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise OutOfRegionError(
                f"point ({lons.flat[bad]}, {lats.flat[bad]}) outside region {r.bounds()}"
            )
        len_deg = self._len_deg[level]
        col = ((lons - r.lon_min) / len_deg).astype(np.int64)
        row = ((lats - r.lat_min) / len_deg).astype(np.int64)
        np.minimum(col, self._cols[level] - 1, out=col)
        np.minimum(row, self._rows[level] - 1, out=row)
        return row * self._cols[level] + col

    def cell_center_many(self, indices: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized cell_center over index arrays (same max-edge clipping)."""
        self._check_level(level)
        indices = np.asarray(indices, dtype=np.int64)
        cols = self._cols[level]
        len_deg = self._len_deg[level]
        r = self.region
        row, col = np.divmod(indices, cols)
        lo_lon = r.lon_min + col * len_deg
        lo_lat = r.lat_min + row * len_deg
        hi_lon = np.minimum(r.lon_min + (col + 1) * len_deg, r.lon_max)
        hi_lat = np.minimum(r.lat_min + (row + 1) * len_deg, r.lat_max)
        return (lo_lon + hi_lon) / 2.0, (lo_lat + hi_lat) / 2.0

    # Grid config file: the single source of truth shared by all stages.

    def to_config(self) -> dict:
        r = self.region
        return {
            "region": [r.lon_min, r.lat_min, r.lon_max, r.lat_max],
            "levels": self.levels,
            "base_cell_arcsec": self.base_cell_arcsec,
            "growth": self.growth,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "GridHierarchy":
        w, s, e, n = cfg["region"]
        return cls(
            Region(float(w), float(s), float(e), float(n)),
            int(cfg["levels"]),
            float(cfg["base_cell_arcsec"]),
            int(cfg.get("growth", 2)),
        )

    @classmethod
    def load(cls, path) -> "GridHierarchy":
        with open(path) as f:
            return cls.from_config(json.load(f))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_config(), f)
            f.write("\n")


def cell_id(p: GeoPoint, level: int, grid: GridHierarchy) -> CellId:
    return CellId(level, grid.cell_index(p.lon, p.lat, level))


def cell_centroid_bounds(c: CellId, grid: GridHierarchy) -> tuple[GeoPoint, Region]:
    bounds = grid.cell_bounds(c.level, c.index)
    lon, lat = grid.cell_center(c.level, c.index)
    return GeoPoint(lon, lat), bounds


def km_to_deg_window(km: float, max_abs_lat: float) -> float:
    """Half-width in degrees of a lon/lat square guaranteed to contain a
    great-circle disc of radius `km` anywhere below `max_abs_lat`.

    Longitude degrees shrink by cos(lat), so the window is sized at the
    worst latitude of the region. Near-polar regions fall back to a
    latitude-only bound times a large safety factor.
    """
    lat = min(abs(max_abs_lat), 89.5)
    return km / (KM_PER_DEG * math.cos(math.radians(lat)))
