"""Synthetic geolocated event traces.

Users get home points drawn from a few dense square clusters laid over a
sparse uniform background; `skew` is the fraction of users homed in a
cluster, and the clusters jointly cover `cluster_area_fraction` of the
region. Each user's trace is a noisy walk: most events jitter around the
home, some dwell exactly at the previous spot (exercises duplicate
collapsing), and a few jump far away (provides long-distance movements).
Fully deterministic for a given seed.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd

from .geo import Region

EVENT_COLUMNS = ("user_id", "t", "lon", "lat")


def synth_events(
    users: int,
    events_per_user: int,
    region: Region,
    seed: int,
    skew: float = 0.8,
    clusters: int = 4,
    cluster_area_fraction: float = 0.05,
    dwell_prob: float = 0.15,
    jump_prob: float = 0.05,
    max_step_seconds: int = 7200,
) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ({user_id, t, lon, lat} arrays in user-major order, generator info)."""
    if users < 1 or events_per_user < 1:
        raise ValueError("need at least one user and one event per user")
    if not 0.0 <= skew <= 1.0:
        raise ValueError(f"skew must be in [0, 1], got {skew}")
    rng = np.random.default_rng(seed)

    area = region.width * region.height
    side = math.sqrt(area * cluster_area_fraction / clusters)
    cl_lon = rng.uniform(region.lon_min + side / 2, region.lon_max - side / 2, clusters)
    cl_lat = rng.uniform(region.lat_min + side / 2, region.lat_max - side / 2, clusters)

    # Homes keep a margin from the cluster edge so the walk noise below
    # rarely escapes the square; the skew knob then maps ~directly to
    # the event-mass share landing inside the dense areas.
    clustered = rng.random(users) < skew
    which = rng.integers(0, clusters, users)
    reach = side * 0.35
    home_lon = np.where(
        clustered,
        cl_lon[which] + rng.uniform(-reach, reach, users),
        rng.uniform(region.lon_min, region.lon_max, users))
    home_lat = np.where(
        clustered,
        cl_lat[which] + rng.uniform(-reach, reach, users),
        rng.uniform(region.lat_min, region.lat_max, users))

    n = users * events_per_user
    user_col = np.repeat(np.arange(1, users + 1, dtype=np.int64), events_per_user)
    first = np.zeros(n, bool)
    first[::events_per_user] = True

    # Timestamps: per-user start plus strictly positive increments.
    start = rng.integers(0, 7 * 86400, users)
    steps = rng.integers(60, max_step_seconds, size=n)
    steps[first] = np.repeat(start, events_per_user)[first]
    t_col = _segment_cumsum(steps, events_per_user, users)

    sigma = side / 12.0
    lon = np.repeat(home_lon, events_per_user) + rng.normal(0.0, sigma, n)
    lat = np.repeat(home_lat, events_per_user) + rng.normal(0.0, sigma, n)
    roll = rng.random(n)
    jump = roll < jump_prob
    lon[jump] = rng.uniform(region.lon_min, region.lon_max, int(jump.sum()))
    lat[jump] = rng.uniform(region.lat_min, region.lat_max, int(jump.sum()))
    np.clip(lon, region.lon_min, region.lon_max, out=lon)
    np.clip(lat, region.lat_min, region.lat_max, out=lat)

    # Dwells repeat the previous event's exact coordinates; never the
    # first event of a user, so the fill cannot cross a user boundary.
    dwell = (roll >= jump_prob) & (roll < jump_prob + dwell_prob) & ~first
    src = np.where(~dwell, np.arange(n), 0)
    src = np.maximum.accumulate(src)
    lon, lat = lon[src], lat[src]

    cols = {"user_id": user_col, "t": t_col, "lon": lon, "lat": lat}
    info = {
        "clusters": [(float(a), float(b), float(side)) for a, b in zip(cl_lon, cl_lat)],
        "cluster_users": int(clustered.sum()),
        "events": n,
    }
    return cols, info


def _segment_cumsum(steps: np.ndarray, seg_len: int, segments: int) -> np.ndarray:
    """Cumulative sum restarted at every segment boundary."""
    total = np.cumsum(steps)
    base = np.repeat(np.concatenate(([0], total[seg_len - 1::seg_len][:-1])), seg_len)
    return (total - base).astype(np.int64)


def write_events_csv(cols: dict[str, np.ndarray], path: str | Path) -> None:
    frame = pd.DataFrame({k: cols[k] for k in EVENT_COLUMNS})
    tmp = str(path) + ".inprogress"
    frame.to_csv(tmp, index=False)
    Path(tmp).replace(path)


def synth_to_file(path: str | Path, users: int, events_per_user: int, region: Region,
                  seed: int, **kwargs) -> dict:
    cols, info = synth_events(users, events_per_user, region, seed, **kwargs)
    write_events_csv(cols, path)
    return info


def in_cluster_fraction(cols: dict[str, np.ndarray], info: dict) -> float:
    """Share of events inside any cluster square (skew diagnostic)."""
    hit = np.zeros(len(cols["lon"]), bool)
    for lon, lat, side in info["clusters"]:
        hit |= ((np.abs(cols["lon"] - lon) <= side / 2)
                & (np.abs(cols["lat"] - lat) <= side / 2))
    return float(hit.mean())
