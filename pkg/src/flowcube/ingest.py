"""Event parsing and per-user trajectory construction.

Raw input is a CSV of geolocated events (`user_id,epoch_seconds,lon,lat`).
Each user's events, sorted by time, form a trajectory; every consecutive
pair of *distinct* locations becomes one :class:`~flowcube.geo.MovementRecord`.
Movements are the interchange format for everything downstream.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from .geo import GeoPoint, MovementRecord, Region

MOVEMENT_COLUMNS = ("user_id", "t_src", "t_dst", "lon_s", "lat_s", "lon_d", "lat_d")
EVENT_COLUMNS = ("user_id", "epoch_seconds", "lon", "lat")

# Reading movement CSVs in bounded slabs keeps peak memory flat on
# multi-million-row files without giving up the vectorized parse.
_CHUNK_ROWS = 1 << 19


class MalformedInputError(ValueError):
    """Raised when an event file exceeds the tolerated malformed-line fraction."""


@dataclass(frozen=True)
class GeoEvent:
    """One geolocated event: a user seen at a point at a moment in time."""

    user: int
    t: int
    point: GeoPoint

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError(f"event time must be >= 0, got {self.t}")


@dataclass
class IngestCounters:
    """Bookkeeping surfaced by the ingest stage."""

    lines: int = 0
    events: int = 0
    malformed: int = 0
    out_of_region: int = 0
    collapsed: int = 0
    users: int = 0
    movements: int = 0
    samples: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "lines": self.lines,
            "events": self.events,
            "malformed": self.malformed,
            "out_of_region": self.out_of_region,
            "collapsed": self.collapsed,
            "users": self.users,
            "movements": self.movements,
        }


def _parse_event_line(line: str) -> tuple[int, int, float, float] | None:
    parts = line.split(",")
    if len(parts) != 4:
        return None
    try:
        user = int(parts[0])
        t = int(parts[1])
        lon = float(parts[2])
        lat = float(parts[3])
    except ValueError:
        return None
    if t < 0 or not (math.isfinite(lon) and math.isfinite(lat)):
        return None
    if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
        return None
    return user, t, lon, lat


def _looks_like_header(line: str) -> bool:
    first = line.split(",", 1)[0].strip()
    try:
        float(first)
    except ValueError:
        return True
    return False


def parse_events(
    stream: Iterable[str] | IO[str],
    counters: IngestCounters | None = None,
    max_malformed_fraction: float = 0.1,
) -> Iterator[GeoEvent]:
    """Yield events from CSV lines in file order.

    Malformed lines are counted and skipped; if, at end of input, they exceed
    ``max_malformed_fraction`` of all data lines, :class:`MalformedInputError`
    is raised with a few offending samples. An optional header row (detected
    by a non-numeric first field) is ignored.
    """
    counters = counters if counters is not None else IngestCounters()
    first = True
    for raw in stream:
        line = raw.rstrip("\n").rstrip("\r")
        if first:
            first = False
            if line and _looks_like_header(line):
                continue
        if not line:
            continue
        counters.lines += 1
        parsed = _parse_event_line(line)
        if parsed is None:
            counters.malformed += 1
            if len(counters.samples) < 5:
                counters.samples.append(line[:120])
            continue
        user, t, lon, lat = parsed
        counters.events += 1
        yield GeoEvent(user, t, GeoPoint(lon, lat))
    if counters.lines and counters.malformed > max_malformed_fraction * counters.lines:
        raise MalformedInputError(
            f"{counters.malformed}/{counters.lines} lines malformed "
            f"(limit {max_malformed_fraction:.0%}); samples: {counters.samples}"
        )


def read_events_csv(
    path: str | os.PathLike,
    counters: IngestCounters | None = None,
    max_malformed_fraction: float = 0.1,
) -> Iterator[GeoEvent]:
    """Stream events from a file path (see :func:`parse_events`)."""
    with open(path, "r", encoding="utf-8") as fh:
        yield from parse_events(fh, counters, max_malformed_fraction)


def _events_to_arrays(events: Iterable[GeoEvent]) -> tuple[np.ndarray, ...]:
    users, ts, lons, lats = [], [], [], []
    for ev in events:
        users.append(ev.user)
        ts.append(ev.t)
        lons.append(ev.point.lon)
        lats.append(ev.point.lat)
    return (
        np.asarray(users, dtype=np.int64),
        np.asarray(ts, dtype=np.int64),
        np.asarray(lons, dtype=np.float64),
        np.asarray(lats, dtype=np.float64),
    )


def movements_from_arrays(
    user: np.ndarray,
    t: np.ndarray,
    lon: np.ndarray,
    lat: np.ndarray,
    region: Region | None = None,
    max_gap_seconds: int | None = None,
    counters: IngestCounters | None = None,
) -> dict[str, np.ndarray]:
    """Vectorized trajectory construction over parallel event arrays.

    Returns column arrays keyed by :data:`MOVEMENT_COLUMNS`, ordered by
    (user, t_src). Ties in time preserve input order; consecutive events of a
    user at the exact same coordinates collapse to one with the latest
    timestamp, so dwell time at a place belongs to the outgoing movement.
    """
    counters = counters if counters is not None else IngestCounters()
    user = np.asarray(user, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)

    if region is not None and user.size:
        keep = (
            (lon >= region.lon_min)
            & (lon <= region.lon_max)
            & (lat >= region.lat_min)
            & (lat <= region.lat_max)
        )
        counters.out_of_region += int(user.size - np.count_nonzero(keep))
        user, t, lon, lat = user[keep], t[keep], lon[keep], lat[keep]

    empty = {c: np.empty(0, dtype=np.int64 if i < 3 else np.float64) for i, c in enumerate(MOVEMENT_COLUMNS)}
    if user.size == 0:
        return empty

    # lexsort is stable with the last key primary; the arange tiebreak pins
    # equal timestamps to input order.
    order = np.lexsort((np.arange(user.size), t, user))
    user, t, lon, lat = user[order], t[order], lon[order], lat[order]
    counters.users += int(np.unique(user).size)

    same = np.zeros(user.size, dtype=bool)
    same[1:] = (user[1:] == user[:-1]) & (lon[1:] == lon[:-1]) & (lat[1:] == lat[:-1])
    # Keep the last row of every same-coordinate run: its timestamp is the
    # departure time.
    last_of_run = np.ones(user.size, dtype=bool)
    last_of_run[:-1] = ~same[1:]
    counters.collapsed += int(user.size - np.count_nonzero(last_of_run))
    user, t, lon, lat = (a[last_of_run] for a in (user, t, lon, lat))

    if user.size < 2:
        return empty
    pair = user[1:] == user[:-1]
    if max_gap_seconds is not None:
        pair &= (t[1:] - t[:-1]) <= max_gap_seconds
    src = np.flatnonzero(pair)
    out = {
        "user_id": user[src],
        "t_src": t[src],
        "t_dst": t[src + 1],
        "lon_s": lon[src],
        "lat_s": lat[src],
        "lon_d": lon[src + 1],
        "lat_d": lat[src + 1],
    }
    counters.movements += int(src.size)
    return out


def build_movements(
    events: Iterable[GeoEvent],
    region: Region | None = None,
    max_gap_seconds: int | None = None,
    counters: IngestCounters | None = None,
) -> list[MovementRecord]:
    """Group events by user and emit one movement per consecutive distinct-location pair."""
    cols = movements_from_arrays(
        *_events_to_arrays(events), region=region, max_gap_seconds=max_gap_seconds, counters=counters
    )
    return [
        MovementRecord(
            user=int(cols["user_id"][i]),
            t_src=int(cols["t_src"][i]),
            t_dst=int(cols["t_dst"][i]),
            src=GeoPoint(float(cols["lon_s"][i]), float(cols["lat_s"][i])),
            dst=GeoPoint(float(cols["lon_d"][i]), float(cols["lat_d"][i])),
        )
        for i in range(cols["user_id"].size)
    ]


def write_movements_csv(cols: dict[str, np.ndarray], path: str | os.PathLike) -> int:
    """Write movement columns as the canonical CSV; returns the row count.

    Floats are rendered in shortest round-trip form so rewriting a parsed
    file is byte-identical.
    """
    df = pd.DataFrame({c: cols[c] for c in MOVEMENT_COLUMNS})
    tmp = f"{path}.tmp.{os.getpid()}"
    df.to_csv(tmp, index=False)
    os.replace(tmp, path)
    return int(df.shape[0])


def movements_to_arrays(movements: Sequence[MovementRecord]) -> dict[str, np.ndarray]:
    cols = {c: [] for c in MOVEMENT_COLUMNS}
    for m in movements:
        cols["user_id"].append(m.user)
        cols["t_src"].append(m.t_src)
        cols["t_dst"].append(m.t_dst)
        cols["lon_s"].append(m.src.lon)
        cols["lat_s"].append(m.src.lat)
        cols["lon_d"].append(m.dst.lon)
        cols["lat_d"].append(m.dst.lat)
    return {
        c: np.asarray(v, dtype=np.int64 if c in ("user_id", "t_src", "t_dst") else np.float64)
        for c, v in cols.items()
    }


def read_movements_csv(path: str | os.PathLike) -> Iterator[dict[str, np.ndarray]]:
    """Stream a movement CSV as column-array chunks."""
    dtypes = {c: np.int64 if c in ("user_id", "t_src", "t_dst") else np.float64 for c in MOVEMENT_COLUMNS}
    for chunk in pd.read_csv(path, chunksize=_CHUNK_ROWS, dtype=dtypes):
        missing = set(MOVEMENT_COLUMNS) - set(chunk.columns)
        if missing:
            raise MalformedInputError(f"movement file {path} missing columns {sorted(missing)}")
        yield {c: chunk[c].to_numpy() for c in MOVEMENT_COLUMNS}


def read_movements_all(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a whole movement CSV into column arrays."""
    chunks = list(read_movements_csv(path))
    if not chunks:
        return {c: np.empty(0) for c in MOVEMENT_COLUMNS}
    return {c: np.concatenate([ch[c] for ch in chunks]) for c in MOVEMENT_COLUMNS}


def movement_records(cols: dict[str, np.ndarray]) -> Iterator[MovementRecord]:
    for i in range(len(cols["user_id"])):
        yield MovementRecord(
            user=int(cols["user_id"][i]),
            t_src=int(cols["t_src"][i]),
            t_dst=int(cols["t_dst"][i]),
            src=GeoPoint(float(cols["lon_s"][i]), float(cols["lat_s"][i])),
            dst=GeoPoint(float(cols["lon_d"][i]), float(cols["lat_d"][i])),
        )


def ingest_file(
    events_path: str | os.PathLike,
    out_path: str | os.PathLike,
    region: Region | None = None,
    max_gap_seconds: int | None = None,
    max_malformed_fraction: float = 0.1,
) -> IngestCounters:
    """Full ingest stage: events CSV in, movement CSV out, counters back."""
    counters = IngestCounters()
    users, ts, lons, lats = [], [], [], []
    for ev in read_events_csv(events_path, counters, max_malformed_fraction):
        users.append(ev.user)
        ts.append(ev.t)
        lons.append(ev.point.lon)
        lats.append(ev.point.lat)
    cols = movements_from_arrays(
        np.asarray(users, dtype=np.int64),
        np.asarray(ts, dtype=np.int64),
        np.asarray(lons, dtype=np.float64),
        np.asarray(lats, dtype=np.float64),
        region=region,
        max_gap_seconds=max_gap_seconds,
        counters=counters,
    )
    write_movements_csv(cols, out_path)
    return counters
