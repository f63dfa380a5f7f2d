// Gateway client. Every request goes through request(), which records the
// (method, path) pair so end-to-end tests can assert the console only talks
// to documented endpoints. No business rules live here: the console renders
// whatever the server returns.

export interface Diagnostic {
  severity: "error" | "warning";
  rule: string;
  message: string;
  path: string;
}

export interface ValidationReport {
  valid: boolean;
  diagnostics: Diagnostic[];
}

export class GatewayError extends Error {
  code: string;
  status: number;
  report: ValidationReport | null;

  constructor(status: number, code: string, message: string,
              report: ValidationReport | null = null) {
    super(message);
    this.status = status;
    this.code = code;
    this.report = report;
  }
}

export interface Asset {
  id: string;
  kind: string;
  name: string;
  owner: string;
  visibility: string;
  version: number;
  params: Record<string, unknown>;
  metadata: Record<string, string>;
}

export interface Instance {
  id: string;
  name: string;
  phase: "Created" | "Executing" | "Terminated";
  owner: string;
  parent: string | null;
  children: string[];
  workspace: string | null;
  snapshots: string[];
  depth: number;
  config?: ConfigDoc;
}

export interface ConfigDoc {
  name: string;
  c_a: { parameters: Record<string, unknown>; [k: string]: unknown };
  [k: string]: unknown;
}

export interface EventRecord {
  id: number;
  source: string;
  type: string;
  payload: Record<string, unknown>;
  timestamp: number;
}

export interface WhatifResult {
  rank: number;
  setpoint: number;
  band: number;
  score: number;
  variant: string;
}

export type SeriesPoint = [number, number];

export class Gateway {
  base: string;
  token: string;
  calls: { method: string; path: string }[] = [];

  constructor(base: string, token: string) {
    this.base = base.replace(/\/$/, "");
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    this.calls.push({ method, path });
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.token}`,
    };
    let payload: string | undefined;
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      payload = JSON.stringify(body);
    }
    let resp: Response;
    try {
      resp = await fetch(this.base + path, { method, headers, body: payload });
    } catch (err) {
      throw new GatewayError(0, "CONNECTION_FAILED", String(err));
    }
    const text = await resp.text();
    const isJson = (resp.headers.get("content-type") ?? "").includes("json");
    if (!resp.ok) {
      if (isJson) {
        const parsed = JSON.parse(text) as {
          error?: { code?: string; message?: string; report?: ValidationReport };
        };
        const e = parsed.error ?? {};
        throw new GatewayError(resp.status, e.code ?? `HTTP_${resp.status}`,
                               e.message ?? text, e.report ?? null);
      }
      throw new GatewayError(resp.status, `HTTP_${resp.status}`, text);
    }
    return (isJson ? JSON.parse(text) : text) as T;
  }

  health() {
    return this.request<{ status: string; sim_now_ms: number | null }>("GET", "/health");
  }

  // assets
  listAssets(filter: { kind?: string; text?: string } = {}) {
    const q = new URLSearchParams();
    if (filter.kind) q.set("kind", filter.kind);
    if (filter.text) q.set("text", filter.text);
    const suffix = q.toString() ? `?${q}` : "";
    return this.request<{ assets: Asset[] }>("GET", `/assets${suffix}`);
  }

  shareAsset(id: string) {
    return this.request<{ asset: Asset }>("POST", `/assets/${id}/share`);
  }

  // twins
  createTwin(configText: string) {
    return this.request<{ instance: Instance }>("POST", "/dts",
                                                { config_text: configText });
  }

  listTwins() {
    return this.request<{ instances: Instance[] }>("GET", "/dts");
  }

  getTwin(id: string) {
    return this.request<{ instance: Instance }>("GET", `/dts/${id}`);
  }

  execute(id: string) {
    return this.request<{ instance: Instance }>("POST", `/dts/${id}/execute`);
  }

  save(id: string) {
    return this.request<{ snapshot: string; instance: Instance }>(
      "POST", `/dts/${id}/save`);
  }

  restore(id: string, snapshot: string) {
    return this.request<{ instance: Instance }>("POST", `/dts/${id}/restore`,
                                                { snapshot });
  }

  terminate(id: string) {
    return this.request<{ instance: Instance }>("POST", `/dts/${id}/terminate`);
  }

  evolve(id: string, config: ConfigDoc) {
    return this.request<{ instance: Instance; changes: unknown[] }>(
      "POST", `/dts/${id}/evolve`, { config });
  }

  analysis(id: string) {
    return this.request<{ analysis: Record<string, any> }>(
      "GET", `/dts/${id}/analysis`);
  }

  whatif(id: string, candidates: { setpoint: number; band: number }[],
         horizonMs: number) {
    return this.request<{ results: WhatifResult[] }>(
      "POST", `/dts/${id}/whatif`, { candidates, horizon_ms: horizonMs });
  }

  // telemetry
  series(key: string, fromMs: number, toMs: number) {
    return this.request<{ key: string; points: SeriesPoint[] }>(
      "GET", `/data/series/${key}?from=${fromMs}&to=${toMs}`);
  }

  latest(key: string) {
    return this.request<{ key: string; point: SeriesPoint | null }>(
      "GET", `/data/series/${key}/latest`);
  }

  events(after: number) {
    return this.request<{ events: EventRecord[] }>("GET", `/events?after=${after}`);
  }

  // graph
  graphText(id: string) {
    return this.request<string>("GET", `/graph/${id}`);
  }
}

const TOKEN_KEY = "twindesk.token";

// the token is the only state that survives a reload
export function storedToken(): string | null {
  try {
    return window.localStorage.getItem(TOKEN_KEY);
  } catch {
    return null;
  }
}

export function storeToken(token: string | null): void {
  try {
    if (token === null) window.localStorage.removeItem(TOKEN_KEY);
    else window.localStorage.setItem(TOKEN_KEY, token);
  } catch {
    /* storage unavailable: stay in-memory */
  }
}
