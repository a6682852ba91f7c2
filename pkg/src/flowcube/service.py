"""HTTP query front door over a loaded snapshot.

Handlers are plain (non-async) functions, so the ASGI server runs each
request on its own worker thread and a slow query never stalls the
others; the snapshot itself is immutable, making concurrent reads safe
without locks. Responses carry a schema version and compress well under
the negotiated gzip.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.gzip import GZipMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.datastructures import MutableHeaders

from .cube import CubeStore, QueryError
from .geo import Region

SCHEMA_VERSION = 1
DEFAULT_MAX_ELEMENTS = 50_000
DEFAULT_HARD_CAP = 500_000

log = logging.getLogger("flowcube.service")


class SnapshotHolder:
    """Atomic snapshot slot: reload swaps the reference, readers keep theirs."""

    def __init__(self):
        self._store: CubeStore | None = None
        self._lock = threading.Lock()

    def get(self) -> CubeStore | None:
        return self._store

    def load(self, path: str | Path) -> CubeStore:
        store = CubeStore.load(path)
        with self._lock:
            self._store = store
        return store


def _parse_time_param(raw: str, store: CubeStore, name: str) -> int:
    """Bucket index, given either an integer or an ISO-8601 timestamp."""
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise HTTPException(400, f"{name} must be a bucket index or ISO-8601 time")
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return store.bucketing.bucket(int(stamp.timestamp()))


def _json(payload: dict) -> Response:
    """Serialize straight to bytes; the generic encoder walks every element
    of a many-thousand-row payload and dominates latency on big responses."""
    return Response(json.dumps(payload, separators=(",", ":")),
                    media_type="application/json")


def _parse_bbox(raw: str) -> Region:
    parts = raw.split(",")
    if len(parts) != 4:
        raise HTTPException(400, "bbox must be w,s,e,n")
    try:
        w, s, e, n = (float(p) for p in parts)
    except ValueError:
        raise HTTPException(400, "bbox must be four numbers")
    try:
        return Region(w, s, e, n)
    except ValueError as exc:
        raise HTTPException(400, str(exc))


class AccessLog:
    """Request log + Server-Timing header as a raw ASGI wrapper; the
    decorator-style middleware re-streams every body and costs more than a
    typical cache-hit query."""

    def __init__(self, app):
        self.app = app

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        t0 = time.perf_counter()
        seen = {}

        async def send_timed(message):
            if message["type"] == "http.response.start":
                micros = (time.perf_counter() - t0) * 1e6
                MutableHeaders(scope=message).append(
                    "Server-Timing", f"app;dur={micros / 1000:.3f}")
                seen["status"] = message["status"]
                seen["us"] = micros
            await send(message)

        await self.app(scope, receive, send_timed)
        if seen:
            query = scope.get("query_string", b"").decode()
            log.info("%s %s%s %d %.0fus", scope["method"], scope["path"],
                     f"?{query}" if query else "", seen["status"], seen["us"])


def create_app(snapshot: str | Path | None = None,
               max_response_elems: int = DEFAULT_MAX_ELEMENTS,
               hard_cap: int = DEFAULT_HARD_CAP,
               static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="flowcube query service", openapi_url=None)
    # level 1 compresses a graph payload well enough; the default level
    # spends more time deflating than the query itself takes
    app.add_middleware(GZipMiddleware, minimum_size=1024, compresslevel=1)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"])
    app.add_middleware(AccessLog)

    holder = SnapshotHolder()
    app.state.holder = holder
    app.state.max_response_elems = max_response_elems
    app.state.hard_cap = hard_cap
    if snapshot is not None:
        holder.load(snapshot)

    def require_store() -> CubeStore:
        store = holder.get()
        if store is None:
            raise HTTPException(503, "no snapshot loaded")
        return store

    @app.get("/api/meta")
    def meta():
        store = require_store()
        hdr = store.header
        return _json({
            "v": SCHEMA_VERSION,
            "grid": hdr["grid"],
            "levels": store.levels,
            "bucketing": hdr["bucketing"],
            "max_bucket": store.max_bucket(),
            "provenance": hdr["provenance"],
            "counts": hdr.get("counts", {}),
        })

    @app.get("/api/graph")
    def graph(request: Request):
        store = require_store()
        params = request.query_params
        for required in ("level", "bbox"):
            if required not in params:
                raise HTTPException(400, f"missing query param {required!r}")
        try:
            level = int(params["level"])
        except ValueError:
            raise HTTPException(400, "level must be an integer")
        if not 1 <= level <= store.levels:
            raise HTTPException(422, f"level must be in 1..{store.levels}")
        box = _parse_bbox(params["bbox"])
        top = store.max_bucket()
        bf = _parse_time_param(params["from"], store, "from") if "from" in params else 0
        bt = _parse_time_param(params["to"], store, "to") if "to" in params else max(top, 0)
        if bf > bt:
            raise HTTPException(400, f"empty window [{bf}, {bt}]")
        if store.estimate(level, box) > app.state.hard_cap:
            raise HTTPException(413, "query would exceed the response hard cap; "
                                     "zoom in or raise --hard-cap")
        try:
            node_rows, edge_rows, truncated = store.query_bbox_json(
                level, box, (bf, bt), max_elements=app.state.max_response_elems)
        except QueryError as exc:
            raise HTTPException(400, str(exc))
        bbox_json = json.dumps(list(box.bounds()), separators=(",", ":"))
        body = (f'{{"v":{SCHEMA_VERSION},"level":{level},"bbox":{bbox_json},'
                f'"window":[{bf},{bt}],'
                f'"truncated":{"true" if truncated else "false"},'
                f'"nodes":[{node_rows}],"edges":[{edge_rows}]}}')
        return Response(body, media_type="application/json")

    @app.get("/api/node/{level}/{cell}")
    def node(level: int, cell: int):
        store = require_store()
        try:
            return _json(store.node_detail(level, cell))
        except QueryError as exc:
            raise HTTPException(422, str(exc))
        except KeyError:
            raise HTTPException(404, f"no node {cell} at level {level}")

    @app.exception_handler(HTTPException)
    async def error_body(_request, exc: HTTPException):
        return JSONResponse({"error": exc.detail}, status_code=exc.status_code,
                            headers=getattr(exc, "headers", None))

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(snapshot: str | Path, port: int = 8080, host: str = "127.0.0.1",
          max_response_elems: int = DEFAULT_MAX_ELEMENTS,
          hard_cap: int = DEFAULT_HARD_CAP,
          static_dir: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(snapshot, max_response_elems=max_response_elems,
                     hard_cap=hard_cap, static_dir=static_dir)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    uvicorn.run(app, host=host, port=port, log_level="warning")
