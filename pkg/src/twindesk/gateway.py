"""HTTP gateway: single entry point for every platform capability.

Bearer tokens from the platform configuration map to principals with one of
three roles: ``Viewer`` (read-only), ``Developer`` (everything except other
users' accounting), ``Admin`` (everything).  Authorization runs before body
parsing, so an under-privileged caller always sees 403 regardless of payload.

Error mapping: 401 missing/invalid token, 403 insufficient role or foreign
private resource, 404 unknown resource, 409 lifecycle/uniqueness/capacity
conflicts, 422 configuration validation failures (the body carries the full
diagnostic report), 400 malformed requests.  Machine-readable codes ride in
``{"error": {"code": ...}}``.  Full request/response examples: docs/api.md.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .dtconfig import ConfigDoc, depth, parse_config, parse_config_dict
from .errors import (
    BadRequestError,
    CapacityError,
    ConflictError,
    ForbiddenError,
    InUseError,
    InvalidTransitionError,
    NoAnalysisPipelineError,
    NotFoundError,
    ParseError,
    PlatformError,
    UnauthorizedError,
    UnknownPathError,
    UnknownSnapshotError,
    UnknownTargetError,
    UnknownTriggerError,
    ValidationFailedError,
)
from .graph import check_consistency, map_config, run_query
from .incubator import run_whatif
from .registry import AssetKind, AssetQuery, Visibility
from .service import Platform, Principal

log = logging.getLogger(__name__)

STATUS_BY_ERROR = [
    (UnauthorizedError, 401),
    (ForbiddenError, 403),
    (UnknownSnapshotError, 404),
    (UnknownTargetError, 404),
    (UnknownTriggerError, 404),
    (NotFoundError, 404),
    (InvalidTransitionError, 409),
    (InUseError, 409),
    (CapacityError, 409),
    (NoAnalysisPipelineError, 409),
    (ConflictError, 409),
    (ValidationFailedError, 422),
    (ParseError, 400),
    (UnknownPathError, 400),
    (BadRequestError, 400),
]

# method, path, module operation, minimum role (None = unauthenticated).
# The coverage test in tests/test_gateway.py walks this table.
ROUTE_TABLE = [
    ("GET", "/health", "gateway.health", None),
    ("POST", "/assets", "asset-registry.register_asset", "Developer"),
    ("GET", "/assets", "asset-registry.list_assets", "Viewer"),
    ("GET", "/assets/{asset_id}", "asset-registry.get_asset", "Viewer"),
    ("PATCH", "/assets/{asset_id}", "asset-registry.update_asset", "Developer"),
    ("DELETE", "/assets/{asset_id}", "asset-registry.delete_asset", "Developer"),
    ("POST", "/assets/{asset_id}/share", "asset-registry.share_asset", "Developer"),
    ("POST", "/dts", "lifecycle.create_dt", "Developer"),
    ("GET", "/dts", "lifecycle.list_instances", "Viewer"),
    ("GET", "/dts/{dt_id}", "lifecycle.get_instance", "Viewer"),
    ("POST", "/dts/{dt_id}/execute", "lifecycle.execute_dt", "Developer"),
    ("POST", "/dts/{dt_id}/save", "lifecycle.save_dt", "Developer"),
    ("POST", "/dts/{dt_id}/restore", "lifecycle.restore_dt", "Developer"),
    ("POST", "/dts/{dt_id}/terminate", "lifecycle.terminate_dt", "Developer"),
    ("POST", "/dts/{dt_id}/evolve", "lifecycle.evolve_dt", "Developer"),
    ("GET", "/dts/{dt_id}/analysis", "lifecycle.analyse_dt", "Viewer"),
    ("POST", "/dts/{dt_id}/whatif", "incubator.run_whatif", "Developer"),
    ("GET", "/data/series/{series_key}", "data-hub.query_range", "Viewer"),
    ("GET", "/data/series/{series_key}/latest", "data-hub.latest", "Viewer"),
    ("POST", "/events", "data-hub.publish_event", "Developer"),
    ("GET", "/events", "data-hub.poll_events", "Viewer"),
    ("POST", "/commands", "data-hub.send_command", "Developer"),
    ("GET", "/commands", "data-hub.fetch_commands", "Viewer"),
    ("GET", "/workspaces", "exec-manager.workspaces", "Viewer"),
    ("GET", "/usage", "exec-manager.usage_report", "Viewer"),
    ("GET", "/graph/{dt_id}", "twin-graph.map_config", "Viewer"),
    ("POST", "/graph/query", "twin-graph.run_query", "Viewer"),
]


def create_app(platform: Platform) -> FastAPI:
    app = FastAPI(title="twindesk gateway", version=__version__, docs_url=None,
                  redoc_url=None, openapi_url=None)
    app.state.platform = platform
    # the console is normally served from this same origin (/console/); CORS
    # keeps token-authenticated calls working when it runs on a dev server
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(PlatformError)
    async def platform_error_handler(request: Request, exc: PlatformError):
        status = next((code for cls, code in STATUS_BY_ERROR if isinstance(exc, cls)), 500)
        return JSONResponse(status_code=status, content={"error": exc.to_dict()})

    def require(min_role: str):
        def dependency(request: Request) -> Principal:
            auth = request.headers.get("authorization", "")
            if not auth.lower().startswith("bearer "):
                raise UnauthorizedError("missing bearer token")
            principal = platform.principal_for(auth[7:].strip())
            if principal is None:
                raise UnauthorizedError("unknown token")
            if principal.rank() < Principal(user="", role=min_role).rank():
                raise ForbiddenError(f"role {principal.role} may not do this")
            return principal
        return dependency

    viewer = Depends(require("Viewer"))
    developer = Depends(require("Developer"))

    def is_admin(p: Principal) -> bool:
        return p.role == "Admin"

    def owned_instance(dt_id: str, p: Principal):
        inst = platform.engine.get_instance(dt_id)
        if inst.owner != p.user and not is_admin(p):
            raise ForbiddenError(f"instance {dt_id!r} belongs to {inst.owner}")
        return inst

    async def body_of(request: Request) -> dict:
        try:
            raw = await request.body()
            if not raw:
                return {}
            import json
            data = json.loads(raw)
        except Exception:
            raise BadRequestError("request body must be a JSON object")
        if not isinstance(data, dict):
            raise BadRequestError("request body must be a JSON object")
        return data

    def config_from_body(body: dict) -> ConfigDoc:
        if ("config" in body) == ("config_text" in body):
            raise BadRequestError("provide exactly one of 'config' or 'config_text'")
        if "config_text" in body:
            return parse_config(body["config_text"])
        return parse_config_dict(body["config"])

    # -- health ---------------------------------------------------------------

    @app.get("/health")
    def health():
        sched = platform.scheduler
        return {"status": "ok", "version": __version__,
                "sim_now_ms": sched.now_ms if sched else None}

    # -- assets ----------------------------------------------------------------

    @app.post("/assets", status_code=201)
    async def register_asset(request: Request, p: Principal = developer):
        body = await body_of(request)
        try:
            kind = AssetKind(body.get("kind", ""))
        except ValueError:
            raise BadRequestError(f"unknown asset kind {body.get('kind')!r}")
        from .registry import Port
        rec = platform.registry.register_asset(
            p.user, kind, body.get("name", ""),
            ports=[Port.from_dict(x) for x in body.get("ports", [])],
            params=body.get("params") or {},
            metadata=body.get("metadata") or {},
            visibility=Visibility(body.get("visibility", "Private")),
            content=body.get("content"),
        )
        return {"asset": rec.to_dict()}

    @app.get("/assets")
    def list_assets(p: Principal = viewer,
                    kind: Optional[str] = None, owner: Optional[str] = None,
                    visibility: Optional[str] = None, text: Optional[str] = None):
        query = AssetQuery(
            kind=AssetKind(kind) if kind else None,
            owner=owner,
            visibility=Visibility(visibility) if visibility else None,
            text=text,
        )
        return {"assets": [r.to_dict() for r in platform.registry.list_assets(query, p.user)]}

    @app.get("/assets/{asset_id}")
    def get_asset(asset_id: str, p: Principal = viewer):
        return {"asset": platform.registry.get_asset(asset_id, p.user).to_dict()}

    @app.patch("/assets/{asset_id}")
    async def update_asset(asset_id: str, request: Request, p: Principal = developer):
        body = await body_of(request)
        content = body.pop("content", None)
        rec = platform.registry.update_asset(asset_id, body, p.user, content=content)
        return {"asset": rec.to_dict()}

    @app.delete("/assets/{asset_id}")
    def delete_asset(asset_id: str, p: Principal = developer):
        platform.registry.delete_asset(asset_id, p.user)
        return {"deleted": asset_id}

    @app.post("/assets/{asset_id}/share")
    def share_asset(asset_id: str, p: Principal = developer):
        return {"asset": platform.registry.share_asset(asset_id, p.user).to_dict()}

    # -- twin lifecycle -----------------------------------------------------------

    def instance_payload(inst, include_config=True) -> dict:
        out = inst.to_dict(include_config=include_config)
        out["depth"] = depth(inst.config)
        return out

    @app.post("/dts", status_code=201)
    async def create_dt(request: Request, p: Principal = developer):
        body = await body_of(request)
        doc = config_from_body(body)
        inst = platform.engine.create_dt(doc, p.user)
        return {"instance": instance_payload(inst)}

    @app.get("/dts")
    def list_dts(p: Principal = viewer):
        insts = platform.engine.list_instances(
            owner=None if is_admin(p) else p.user)
        return {"instances": [instance_payload(i, include_config=False) for i in insts]}

    @app.get("/dts/{dt_id}")
    def get_dt(dt_id: str, p: Principal = viewer):
        return {"instance": instance_payload(owned_instance(dt_id, p))}

    @app.post("/dts/{dt_id}/execute")
    def execute_dt(dt_id: str, p: Principal = developer):
        inst = owned_instance(dt_id, p)
        platform.engine.execute_dt(inst.id)
        return {"instance": instance_payload(inst, include_config=False)}

    @app.post("/dts/{dt_id}/save")
    def save_dt(dt_id: str, p: Principal = developer):
        inst = owned_instance(dt_id, p)
        snapshot = platform.engine.save_dt(inst.id)
        return {"snapshot": snapshot,
                "instance": instance_payload(inst, include_config=False)}

    @app.post("/dts/{dt_id}/restore")
    async def restore_dt(dt_id: str, request: Request, p: Principal = developer):
        body = await body_of(request)
        snapshot = body.get("snapshot")
        if not snapshot:
            raise BadRequestError("body needs a 'snapshot' id")
        inst = owned_instance(dt_id, p)
        platform.engine.restore_dt(inst.id, snapshot)
        return {"instance": instance_payload(inst, include_config=False)}

    @app.post("/dts/{dt_id}/terminate")
    def terminate_dt(dt_id: str, p: Principal = developer):
        inst = owned_instance(dt_id, p)
        platform.engine.terminate_dt(inst.id)
        return {"instance": instance_payload(inst, include_config=False)}

    @app.post("/dts/{dt_id}/evolve")
    async def evolve_dt(dt_id: str, request: Request, p: Principal = developer):
        body = await body_of(request)
        inst = owned_instance(dt_id, p)
        from .dtconfig import diff_config
        old = inst.config
        if "event_id" in body:
            event = next((e for e in platform.hub.poll_events(after=int(body["event_id"]) - 1)
                          if e.id == int(body["event_id"])), None)
            if event is None:
                raise NotFoundError(f"no event {body['event_id']}")
            platform.engine.evolve_dt(inst.id, trigger=event)
        else:
            platform.engine.evolve_dt(inst.id, new_config=config_from_body(body))
        changes = diff_config(old, inst.config)
        return {"instance": instance_payload(inst),
                "changes": [c.to_dict() for c in changes]}

    @app.get("/dts/{dt_id}/analysis")
    def analyse_dt(dt_id: str, p: Principal = viewer, mode: Optional[str] = None,
                   from_ms: Optional[int] = Query(None, alias="from"),
                   to_ms: Optional[int] = Query(None, alias="to")):
        inst = owned_instance(dt_id, p)
        request: dict = {}
        if mode:
            request["mode"] = mode
        if from_ms is not None:
            request["from"] = from_ms
        if to_ms is not None:
            request["to"] = to_ms
        return {"analysis": platform.engine.analyse_dt(inst.id, request)}

    @app.post("/dts/{dt_id}/whatif")
    async def whatif(dt_id: str, request: Request, p: Principal = developer):
        body = await body_of(request)
        inst = owned_instance(dt_id, p)
        candidates = body.get("candidates")
        if not isinstance(candidates, list):
            raise BadRequestError("body needs a 'candidates' list")
        horizon = int(body.get("horizon_ms", 60_000))
        return {"results": run_whatif(platform.engine, inst.id, candidates, horizon)}

    # -- telemetry -------------------------------------------------------------

    @app.get("/data/series/{series_key}")
    def series_range(series_key: str, p: Principal = viewer,
                     from_ms: int = Query(0, alias="from"),
                     to_ms: int = Query(2**62, alias="to")):
        points = platform.hub.query_range(series_key, from_ms, to_ms)
        return {"key": series_key, "points": [p_.as_pair() for p_ in points]}

    @app.get("/data/series/{series_key}/latest")
    def series_latest(series_key: str, p: Principal = viewer):
        point = platform.hub.latest(series_key)
        return {"key": series_key, "point": point.as_pair() if point else None}

    @app.post("/events", status_code=201)
    async def publish_event(request: Request, p: Principal = developer):
        body = await body_of(request)
        if not body.get("type"):
            raise BadRequestError("body needs a 'type'")
        ev = platform.hub.publish_event(body.get("source", "User"), body["type"],
                                        body.get("payload") or {})
        return {"event": ev.to_dict()}

    @app.get("/events")
    def poll_events(p: Principal = viewer, after: int = 0,
                    type: Optional[str] = None):
        return {"events": [e.to_dict() for e in platform.hub.poll_events(after, type)]}

    @app.post("/commands", status_code=201)
    async def send_command(request: Request, p: Principal = developer):
        body = await body_of(request)
        if not body.get("target") or not body.get("name"):
            raise BadRequestError("body needs 'target' and 'name'")
        cmd = platform.hub.send_command(body["target"], body["name"],
                                        body.get("args") or {})
        return {"command": cmd.to_dict()}

    @app.get("/commands")
    def fetch_commands(target: str = "", p: Principal = viewer):
        if not target:
            raise BadRequestError("query parameter 'target' is required")
        return {"commands": [c.to_dict() for c in platform.hub.fetch_commands(target)]}

    # -- workspaces and accounting ------------------------------------------------

    @app.get("/workspaces")
    def workspaces(p: Principal = viewer):
        owner = None if is_admin(p) else p.user
        return {"workspaces": [w.to_dict() for w in platform.executor.workspaces(owner)]}

    @app.get("/usage")
    def usage(p: Principal = viewer, user: Optional[str] = None):
        target = user or p.user
        if target != p.user and not is_admin(p):
            raise ForbiddenError("only Admin may read another user's usage")
        return {"usage": platform.executor.usage_report(target)}

    # -- twin graph ----------------------------------------------------------------

    @app.get("/graph/{dt_id}")
    def graph_view(dt_id: str, p: Principal = viewer, format: str = "text"):
        inst = owned_instance(dt_id, p)
        graph = map_config(inst.config, platform.registry)
        if format == "json":
            return {"canonical": graph.canonical(),
                    "consistency": check_consistency(graph).to_dict()}
        return PlainTextResponse(graph.canonical())

    @app.post("/graph/query")
    async def graph_query(request: Request, p: Principal = viewer):
        body = await body_of(request)
        dt_id = body.get("dt_id")
        query = body.get("query")
        if not dt_id or not query:
            raise BadRequestError("body needs 'dt_id' and 'query'")
        inst = owned_instance(dt_id, p)
        graph = map_config(inst.config, platform.registry)
        rows = run_query(graph, query)
        enriched = [
            {var: {"id": nid, "label": graph.nodes[nid].label,
                   "properties": graph.nodes[nid].props_dict()}
             for var, nid in row.items()}
            for row in rows
        ]
        return {"bindings": enriched}

    # -- console ---------------------------------------------------------------

    console_dir = platform.config.console_dir
    if console_dir and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")

    return app


def serve(platform: Platform) -> None:
    """Run the gateway under uvicorn (blocking)."""
    import uvicorn

    platform.start()
    app = create_app(platform)
    try:
        uvicorn.run(app, host=platform.config.host, port=platform.config.port,
                    log_level="warning")
    finally:
        platform.shutdown()
