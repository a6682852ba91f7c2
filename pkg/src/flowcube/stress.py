"""Query-load generation and replay against a loopback service.

Two traffic shapes: `population` draws query-box centers from a weighted
point sample so load follows data density, `hotspot` hammers one small
dense sub-region. Levels are uniform over 1..L and the box edge scales
with the level's cell size, so coarse queries cover wide areas and fine
ones stay local. The replay is open-loop: request i is dispatched at
t0 + i/rate regardless of how earlier requests are doing, which is what
exposes queueing under load.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from pathlib import Path

import numpy as np

from .cube import CubeStore
from .geo import GridHierarchy, Region

DEFAULT_BOX_CELLS = 40.0
_HOTSPOT_CELLS = 10.0


def stress_gen(
    lons: np.ndarray,
    lats: np.ndarray,
    weights: np.ndarray,
    grid: GridHierarchy,
    mode: str,
    n: int,
    seed: int,
    box_cells: float = DEFAULT_BOX_CELLS,
    max_bucket: int = 0,
) -> list[dict]:
    """Deterministic query script: [{level, bbox, from, to}, ...]."""
    lons = np.asarray(lons, float)
    lats = np.asarray(lats, float)
    weights = np.asarray(weights, float)
    if len(lons) == 0:
        raise ValueError("empty point sample")
    if mode not in ("population", "hotspot"):
        raise ValueError(f"unknown stress mode {mode!r}")
    if n < 1:
        raise ValueError("need at least one query")
    rng = np.random.default_rng(seed)
    region = grid.region
    probs = weights / weights.sum()

    if mode == "population":
        picks = rng.choice(len(lons), size=n, p=probs)
        cx, cy = lons[picks], lats[picks]
    else:
        anchor = int(rng.choice(len(lons), p=probs))
        side = _HOTSPOT_CELLS * grid.cell_len_deg(grid.levels)
        side = min(side, region.width, region.height)
        w = min(max(lons[anchor] - side / 2, region.lon_min), region.lon_max - side)
        s = min(max(lats[anchor] - side / 2, region.lat_min), region.lat_max - side)
        cx = rng.uniform(w, w + side, n)
        cy = rng.uniform(s, s + side, n)

    levels = rng.integers(1, grid.levels + 1, size=n)
    max_bucket = max(max_bucket, 0)
    a = rng.integers(0, max_bucket + 1, size=n)
    b = rng.integers(0, max_bucket + 1, size=n)
    bf, bt = np.minimum(a, b), np.maximum(a, b)

    queries = []
    for i in range(n):
        level = int(levels[i])
        edge = box_cells * grid.cell_len_deg(level)
        w = max(region.lon_min, float(cx[i]) - edge / 2)
        e = min(region.lon_max, float(cx[i]) + edge / 2)
        s = max(region.lat_min, float(cy[i]) - edge / 2)
        t = min(region.lat_max, float(cy[i]) + edge / 2)
        if e <= w:
            w, e = region.lon_min, min(region.lon_max, region.lon_min + edge)
        if t <= s:
            s, t = region.lat_min, min(region.lat_max, region.lat_min + edge)
        queries.append({"level": level,
                        "bbox": [w, s, e, t],
                        "from": int(bf[i]), "to": int(bt[i]),
                        "center": [float(cx[i]), float(cy[i])]})
    return queries


def queries_from_store(store: CubeStore, mode: str, n: int, seed: int,
                       box_cells: float = DEFAULT_BOX_CELLS) -> list[dict]:
    """Build the density proxy from the snapshot's finest populated level."""
    for level in range(store.levels, 0, -1):
        if store.node_count(level):
            lons, lats, counts = store.node_sample(level)
            return stress_gen(lons, lats, counts.astype(float), store.grid,
                              mode, n, seed, box_cells=box_cells,
                              max_bucket=max(store.max_bucket(), 0))
    raise ValueError("snapshot has no nodes to derive a density proxy from")


class LocalServer:
    """uvicorn on an ephemeral loopback port, run in a daemon thread."""

    def __init__(self, app):
        import uvicorn

        self._config = uvicorn.Config(app, host="127.0.0.1", port=0,
                                      log_level="warning", access_log=False)
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def __enter__(self) -> "LocalServer":
        self._thread.start()
        deadline = time.time() + 15.0
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("server failed to start")
            if not self._thread.is_alive():
                raise RuntimeError("server thread died during startup")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        self.port = sock.getsockname()[1]
        self.base_url = f"http://127.0.0.1:{self.port}"
        return self

    def __exit__(self, *exc):
        self._server.should_exit = True
        self._thread.join(timeout=10.0)


async def _replay(base_url: str, queries: list[dict], rate: float,
                  timeout: float) -> list[dict]:
    import httpx

    results: list[dict | None] = [None] * len(queries)
    limits = httpx.Limits(max_connections=256, max_keepalive_connections=64)
    async with httpx.AsyncClient(base_url=base_url, timeout=timeout,
                                 limits=limits) as client:
        async def one(i: int, q: dict) -> None:
            params = {"level": q["level"],
                      "bbox": ",".join(str(v) for v in q["bbox"]),
                      "from": q["from"], "to": q["to"]}
            t0 = time.perf_counter()
            try:
                resp = await client.get("/api/graph", params=params)
                status = resp.status_code
            except httpx.HTTPError:
                status = -1
            ms = (time.perf_counter() - t0) * 1000.0
            results[i] = {"ms": ms, "status": status, "level": q["level"]}

        t0 = time.perf_counter()
        tasks = []
        for i, q in enumerate(queries):
            target = t0 + i / rate
            delay = target - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            tasks.append(asyncio.create_task(one(i, q)))
        await asyncio.gather(*tasks)
    return results  # type: ignore[return-value]


def run_stress(base_url: str, queries: list[dict], rate: float = 40.0,
               timeout: float = 30.0) -> dict:
    """Replay at a fixed request rate; report latency stats over all n."""
    t0 = time.perf_counter()
    samples = asyncio.run(_replay(base_url, queries, rate, timeout))
    wall = time.perf_counter() - t0
    lat = np.array([s["ms"] for s in samples])
    return {
        "n": len(samples),
        "rate_qps": rate,
        "wall_s": wall,
        "avg_ms": float(lat.mean()),
        "median_ms": float(np.median(lat)),
        "p90_ms": float(np.percentile(lat, 90)),
        "errors": int(sum(1 for s in samples if s["status"] != 200)),
        "samples": samples,
    }


def stress_snapshot(snapshot: str | Path, mode: str, n: int, rate: float,
                    seed: int, out_path: str | Path | None = None,
                    box_cells: float = DEFAULT_BOX_CELLS) -> dict:
    """Spin up a loopback service over the snapshot and replay a script."""
    from .service import create_app

    store = CubeStore.load(snapshot)
    queries = queries_from_store(store, mode, n, seed, box_cells=box_cells)
    with LocalServer(create_app(snapshot)) as server:
        report = run_stress(server.base_url, queries, rate=rate)
    report["mode"] = mode
    report["seed"] = seed
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=1)
    return report
