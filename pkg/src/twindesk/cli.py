"""Command-line client for the platform gateway.

Reads ``DTAAS_ADDR`` and ``DTAAS_TOKEN`` from the environment (flags
override).  ``--output structured`` prints raw JSON for scripting; the
default output is terse text.  Failures exit non-zero with the machine error
code on stderr.
"""

from __future__ import annotations

import json
import os
import sys
import time
from typing import Any, Optional

import click
import httpx

DEFAULT_ADDR = "http://127.0.0.1:8612"


class Client:
    def __init__(self, addr: str, token: str, structured: bool):
        self.addr = addr.rstrip("/")
        self.structured = structured
        self.http = httpx.Client(base_url=self.addr, timeout=30.0,
                                 headers={"Authorization": f"Bearer {token}"})

    def call(self, method: str, path: str, **kwargs) -> dict:
        try:
            resp = self.http.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            click.echo(f"CONNECTION_FAILED: {exc}", err=True)
            sys.exit(2)
        if resp.status_code >= 400:
            try:
                err = resp.json().get("error", {})
            except Exception:
                err = {}
            code = err.get("code", f"HTTP_{resp.status_code}")
            message = err.get("message", resp.text[:200])
            click.echo(f"{code}: {message}", err=True)
            sys.exit(1)
        if resp.headers.get("content-type", "").startswith("text/"):
            return {"text": resp.text}
        return resp.json()

    def emit(self, payload: Any, text: Optional[str] = None) -> None:
        if self.structured:
            click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))
        elif text is not None:
            click.echo(text)
        else:
            click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


pass_client = click.make_pass_decorator(Client)


@click.group()
@click.option("--addr", default=None, help="gateway base URL (env DTAAS_ADDR)")
@click.option("--token", default=None, help="bearer token (env DTAAS_TOKEN)")
@click.option("--output", type=click.Choice(["text", "structured"]), default="text")
@click.pass_context
def main(ctx, addr, token, output):
    """Desk-scale digital twin platform client."""
    if ctx.invoked_subcommand == "serve":
        ctx.obj = None
        return
    addr = addr or os.environ.get("DTAAS_ADDR", DEFAULT_ADDR)
    token = token or os.environ.get("DTAAS_TOKEN", "")
    ctx.obj = Client(addr, token, structured=(output == "structured"))


@main.command()
@click.option("--config", "config_path", default="platform.cfg",
              type=click.Path(exists=True), help="platform configuration file")
def serve(config_path):
    """Run the gateway server."""
    from .gateway import serve as run_server
    from .service import Platform, PlatformConfig

    run_server(Platform(PlatformConfig.load(config_path)))


# ---------------------------------------------------------------------------
# assets
# ---------------------------------------------------------------------------

@main.group()
def assets():
    """Manage reusable twin assets."""


def _parse_kv(pairs: tuple[str, ...]) -> dict:
    out = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        if not key or not _:
            raise click.BadParameter(f"expected key=value, got {pair!r}")
        out[key] = value
    return out


@assets.command("add")
@click.option("--kind", required=True,
              type=click.Choice(["Data", "Model", "Function", "Tool", "ReadyDT"]))
@click.option("--name", required=True)
@click.option("--port", "ports", multiple=True,
              help="name:direction[:payload], e.g. feed:out:data")
@click.option("--param", "params", multiple=True, help="key=value")
@click.option("--meta", "metas", multiple=True, help="key=value")
@click.option("--content-file", type=click.Path(exists=True))
@click.option("--shared", is_flag=True)
@pass_client
def assets_add(client, kind, name, ports, params, metas, content_file, shared):
    """Register a new asset owned by the caller."""
    port_list = []
    for spec in ports:
        parts = spec.split(":")
        if len(parts) < 2:
            raise click.BadParameter(f"port {spec!r} needs name:direction")
        port_list.append({"name": parts[0], "direction": parts[1],
                          "payload": parts[2] if len(parts) > 2 else "data"})
    body = {
        "kind": kind, "name": name, "ports": port_list,
        "params": _parse_kv(params), "metadata": _parse_kv(metas),
        "visibility": "Shared" if shared else "Private",
    }
    if content_file:
        with open(content_file, encoding="utf-8") as fh:
            body["content"] = fh.read()
    data = client.call("POST", "/assets", json=body)
    client.emit(data, data["asset"]["id"])


@assets.command("ls")
@click.option("--kind", default=None)
@click.option("--text", default=None)
@pass_client
def assets_ls(client, kind, text):
    """List assets visible to the caller."""
    params = {k: v for k, v in (("kind", kind), ("text", text)) if v}
    data = client.call("GET", "/assets", params=params)
    lines = [f"{a['id']}  {a['kind']:<8} v{a['version']} {a['visibility']:<7} {a['name']}"
             for a in data["assets"]]
    client.emit(data, "\n".join(lines) if lines else "(none)")


@assets.command("rm")
@click.argument("asset_id")
@pass_client
def assets_rm(client, asset_id):
    data = client.call("DELETE", f"/assets/{asset_id}")
    client.emit(data, f"deleted {asset_id}")


@assets.command("share")
@click.argument("asset_id")
@pass_client
def assets_share(client, asset_id):
    data = client.call("POST", f"/assets/{asset_id}/share")
    client.emit(data, f"{asset_id} is now {data['asset']['visibility']}")


# ---------------------------------------------------------------------------
# twins
# ---------------------------------------------------------------------------

@main.group()
def dt():
    """Drive twin instances through their lifecycle."""


@dt.command("create")
@click.option("-f", "--file", "config_file", required=True,
              type=click.Path(exists=True), help="configuration document")
@pass_client
def dt_create(client, config_file):
    with open(config_file, encoding="utf-8") as fh:
        text = fh.read()
    data = client.call("POST", "/dts", json={"config_text": text})
    client.emit(data, data["instance"]["id"])


@dt.command("ls")
@pass_client
def dt_ls(client):
    data = client.call("GET", "/dts")
    lines = [f"{i['id']}  {i['phase']:<10} depth={i['depth']} {i['name']}"
             for i in data["instances"]]
    client.emit(data, "\n".join(lines) if lines else "(none)")


def _simple_dt_op(client, dt_id, op):
    data = client.call("POST", f"/dts/{dt_id}/{op}")
    client.emit(data, f"{dt_id}: {data['instance']['phase']}")


@dt.command("execute")
@click.argument("dt_id")
@pass_client
def dt_execute(client, dt_id):
    _simple_dt_op(client, dt_id, "execute")


@dt.command("terminate")
@click.argument("dt_id")
@pass_client
def dt_terminate(client, dt_id):
    _simple_dt_op(client, dt_id, "terminate")


@dt.command("save")
@click.argument("dt_id")
@pass_client
def dt_save(client, dt_id):
    data = client.call("POST", f"/dts/{dt_id}/save")
    client.emit(data, data["snapshot"])


@dt.command("restore")
@click.argument("dt_id")
@click.option("--snapshot", required=True)
@pass_client
def dt_restore(client, dt_id, snapshot):
    data = client.call("POST", f"/dts/{dt_id}/restore", json={"snapshot": snapshot})
    client.emit(data, f"{dt_id}: {data['instance']['phase']}")


@dt.command("evolve")
@click.argument("dt_id")
@click.option("-f", "--file", "config_file", type=click.Path(exists=True))
@click.option("--event", "event_id", type=int)
@pass_client
def dt_evolve(client, dt_id, config_file, event_id):
    """Swap in a new configuration, or fire rules for a stored event."""
    if (config_file is None) == (event_id is None):
        raise click.UsageError("provide exactly one of --file or --event")
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            body = {"config_text": fh.read()}
    else:
        body = {"event_id": event_id}
    data = client.call("POST", f"/dts/{dt_id}/evolve", json=body)
    n = len(data["changes"])
    client.emit(data, f"{dt_id}: {n} change(s) applied")


@dt.command("analyse")
@click.argument("dt_id")
@click.option("--historical", is_flag=True)
@pass_client
def dt_analyse(client, dt_id, historical):
    params = {"mode": "historical"} if historical else {}
    data = client.call("GET", f"/dts/{dt_id}/analysis", params=params)
    est = data["analysis"].get("estimates", {})
    client.emit(data, f"g_hat={est.get('g_hat')} updates={est.get('updates')} "
                      f"anomalies={len(data['analysis'].get('anomalies', []))}")


@dt.command("whatif")
@click.argument("dt_id")
@click.option("--candidate", "candidates", multiple=True, required=True,
              help="setpoint:band, e.g. 35:0.5")
@click.option("--horizon-ms", default=60_000)
@pass_client
def dt_whatif(client, dt_id, candidates, horizon_ms):
    cands = []
    for spec in candidates:
        sp, _, band = spec.partition(":")
        if not band:
            raise click.BadParameter(f"candidate {spec!r} needs setpoint:band")
        cands.append({"setpoint": float(sp), "band": float(band)})
    data = client.call("POST", f"/dts/{dt_id}/whatif",
                       json={"candidates": cands, "horizon_ms": horizon_ms})
    lines = [f"#{r['rank']} setpoint={r['setpoint']} band={r['band']} "
             f"score={r['score']:.4f}" for r in data["results"]]
    client.emit(data, "\n".join(lines))


# ---------------------------------------------------------------------------
# telemetry
# ---------------------------------------------------------------------------

@main.group()
def data():
    """Query stored telemetry."""


@data.command("query")
@click.argument("series_key")
@click.option("--from", "from_ms", default=0)
@click.option("--to", "to_ms", default=2**62)
@pass_client
def data_query(client, series_key, from_ms, to_ms):
    data_ = client.call("GET", f"/data/series/{series_key}",
                        params={"from": from_ms, "to": to_ms})
    lines = [f"{t} {v}" for t, v in data_["points"]]
    client.emit(data_, "\n".join(lines) if lines else "(empty)")


@data.command("tail")
@click.argument("series_key")
@click.option("--seconds", default=5.0)
@pass_client
def data_tail(client, series_key, seconds):
    """Poll the latest point for a while."""
    deadline = time.monotonic() + seconds
    last = None
    rows = []
    while time.monotonic() < deadline:
        data_ = client.call("GET", f"/data/series/{series_key}/latest")
        point = data_.get("point")
        if point and point != last:
            last = point
            rows.append(point)
            if not client.structured:
                click.echo(f"{point[0]} {point[1]}")
        time.sleep(0.2)
    if client.structured:
        client.emit({"key": series_key, "points": rows})


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------

@main.group()
def demo():
    """End-to-end demonstrations."""


@demo.command("incubator")
@click.option("--ticks", default=2000, help="plant ticks to run (100 ms each)")
@click.option("--seed", default=77)
@click.option("--lid-open-s", default=60.0)
@click.option("--lid-close-s", default=120.0)
@click.option("--timeout-s", default=120.0, help="wall-clock budget")
@pass_client
def demo_incubator(client, ticks, seed, lid_open_s, lid_close_s, timeout_s):
    """Boot the incubator twin, run the lid scenario, report the outcome."""
    from .incubator import demo_config

    listing = client.call("GET", "/assets", params={"owner": "demo"})
    by_name = {a["name"]: a["id"] for a in listing["assets"]}
    try:
        ids = {
            "telemetry": by_name["incubator-telemetry"],
            "model": by_name["thermal-2p"],
            "estimator": by_name["rls-estimator"],
            "detector": by_name["anomaly-detector"],
            "planner": by_name["whatif-planner"],
            "sim": by_name["euler-sim"],
        }
    except KeyError as missing:
        click.echo(f"DEMO_ASSETS_MISSING: {missing}", err=True)
        sys.exit(1)

    endpoint = (f"builtin:incubator?seed={seed}"
                f"&lid_open_s={lid_open_s}&lid_close_s={lid_close_s}")
    doc = demo_config(ids, endpoint=endpoint)
    created = client.call("POST", "/dts", json={"config": doc.to_dict()})
    dt_id = created["instance"]["id"]
    click.echo(f"created {dt_id}", err=True)

    # anchor the horizon to the current clock: the box starts ticking at
    # execute, but the platform's sim clock may be far past zero already
    health = client.call("GET", "/health")
    start_point = client.call("GET", "/data/series/inc.t_box/latest").get("point")
    start_ms = start_point[0] if start_point else (health.get("sim_now_ms") or 0)
    client.call("POST", f"/dts/{dt_id}/execute")
    click.echo("executing; waiting for the scenario to play out...", err=True)

    goal_ms = start_ms + ticks * 100
    deadline = time.monotonic() + timeout_s
    now_ms = start_ms
    while time.monotonic() < deadline:
        point = client.call("GET", "/data/series/inc.t_box/latest").get("point")
        if point:
            now_ms = point[0]
            if now_ms >= goal_ms:
                break
        time.sleep(0.3)
    else:
        click.echo("TIMEOUT: simulation did not reach the requested ticks", err=True)
        sys.exit(1)

    analysis = client.call("GET", f"/dts/{dt_id}/analysis")["analysis"]
    events = client.call("GET", "/events")["events"]
    opens = [e for e in events if e["type"] == "anomaly.lid-open"]
    closes = [e for e in events if e["type"] == "anomaly.lid-closed"]
    series = client.call("GET", "/data/series/inc.t_box",
                         params={"from": start_ms, "to": now_ms})["points"]
    instance = client.call("GET", f"/dts/{dt_id}")["instance"]
    params = instance["config"]["c_a"]["parameters"]

    lid_open_abs = start_ms + int(lid_open_s * 1000)
    lid_close_abs = start_ms + int(lid_close_s * 1000)
    setpoint, band = 35.0, 0.5
    reentry = next((t for t, v in series
                    if t > lid_close_abs and abs(v - setpoint) <= band), None)
    summary = {
        "instance": dt_id,
        "ticks": ticks,
        "sim_ms": now_ms - start_ms,
        "g_hat": analysis["estimates"].get("g_hat"),
        "lid_open_detected_ms": opens[0]["payload"]["at"] - start_ms if opens else None,
        "lid_close_detected_ms": closes[0]["payload"]["at"] - start_ms if closes else None,
        "reentry_ms": reentry - start_ms if reentry is not None else None,
        "controller": {"setpoint": params.get("setpoint"), "band": params.get("band")},
        "conductance_belief": params.get("conductance"),
        "detected": bool(opens),
    }
    client.call("POST", f"/dts/{dt_id}/terminate")
    client.emit(summary, "\n".join(f"{k}: {v}" for k, v in summary.items()))
    if ticks * 100 > lid_open_abs - start_ms and not opens:
        sys.exit(1)


if __name__ == "__main__":
    main()
