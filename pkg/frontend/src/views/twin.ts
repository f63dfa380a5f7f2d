import { GatewayError, Instance } from "../api.js";
import { AppCtx } from "../ctx.js";
import { button, clear, el, errorBox, phaseBadge } from "../dom.js";

// Lifecycle actions available per phase; buttons outside this table would
// only earn a 409 from the gateway, so they render disabled.
const ACTIONS: Record<string, string[]> = {
  Created: ["execute", "evolve", "terminate"],
  Executing: ["save", "evolve", "terminate"],
  Terminated: ["restore"],
};

export async function twinListView(root: HTMLElement, ctx: AppCtx): Promise<void> {
  clear(root);
  const status = el("div", { class: "status" });
  const list = el("table", { class: "twin-table" });
  root.append(el("h2", {}, ["Twin instances"]), status, list);
  try {
    const { instances } = await ctx.api.listTwins();
    list.append(el("tr", {}, ["Id", "Name", "Phase", "Depth", ""]
      .map((h) => el("th", {}, [h]))));
    for (const inst of instances) {
      list.append(el("tr", { "data-instance": inst.id }, [
        el("td", {}, [inst.id]),
        el("td", {}, [inst.name]),
        el("td", {}, [phaseBadge(inst.phase)]),
        el("td", {}, [String(inst.depth)]),
        el("td", {}, [button("Open", () => ctx.navigate(`#/twin/${inst.id}`),
                             { "data-open": inst.id })]),
      ]));
    }
    if (instances.length === 0) status.append("none yet; compose one");
  } catch (err) {
    status.append(errorBox(err instanceof GatewayError ? err.code : "UNEXPECTED",
                           String(err instanceof GatewayError ? err.message : err)));
  }
}

export async function twinView(root: HTMLElement, ctx: AppCtx, id: string): Promise<void> {
  clear(root);
  const header = el("div", { class: "twin-header" });
  const actions = el("div", { class: "toolbar", id: "twin-actions" });
  const status = el("div", { class: "status" });
  const childrenBox = el("div", { id: "twin-children" });
  const paramsEditor = el("textarea", { id: "twin-params", rows: "4", spellcheck: "false" });
  const configBox = el("pre", { id: "twin-config", class: "code" });
  const graphBox = el("pre", { id: "twin-graph", class: "code" });
  const links = el("div", { class: "toolbar" }, [
    button("Telemetry", () => ctx.navigate(`#/telemetry/${id}`)),
    button("What-if", () => ctx.navigate(`#/whatif/${id}`)),
  ]);
  root.append(header, actions, status, links,
              el("h3", {}, ["Children"]), childrenBox,
              el("h3", {}, ["Parameters (JSON, applied by evolve)"]), paramsEditor,
              el("h3", {}, ["Configuration"]), configBox,
              el("h3", {}, ["Graph"]), graphBox);

  let busy = false;

  async function refresh(): Promise<void> {
    let inst: Instance;
    try {
      inst = (await ctx.api.getTwin(id)).instance;
    } catch (err) {
      showError(err);
      return;
    }
    clear(header);
    header.append(el("h2", {}, [`${inst.name} `, phaseBadge(inst.phase)]),
                  el("div", { class: "hint" },
                     [`${inst.id} · owner ${inst.owner}`,
                      inst.workspace ? ` · workspace ${inst.workspace}` : "",
                      ` · ${inst.snapshots.length} snapshot(s)`]));
    renderActions(inst);
    await renderChildren(inst);
    const editor = paramsEditor as HTMLTextAreaElement;
    if (document.activeElement !== editor) {
      editor.value = JSON.stringify(inst.config?.c_a.parameters ?? {});
    }
    configBox.textContent = JSON.stringify(inst.config, null, 2);
    try {
      graphBox.textContent = await ctx.api.graphText(id);
    } catch {
      graphBox.textContent = "(graph unavailable)";
    }
  }

  function renderActions(inst: Instance): void {
    clear(actions);
    const enabled = new Set(ACTIONS[inst.phase] ?? []);
    const canRestore = enabled.has("restore") && inst.snapshots.length > 0;
    const make = (op: string, fn: () => Promise<unknown>) => {
      const b = button(op, () => void run(fn), { "data-op": op });
      const allowed = op === "restore" ? canRestore : enabled.has(op);
      b.disabled = busy || !allowed;
      actions.append(b);
    };
    make("execute", () => ctx.api.execute(id));
    make("save", () => ctx.api.save(id));
    make("restore", () => ctx.api.restore(id, inst.snapshots[inst.snapshots.length - 1]));
    make("evolve", async () => {
      // evolve = resubmit the instance's own configuration with the edited
      // parameters; the server owns all validation
      const current = (await ctx.api.getTwin(id)).instance.config!;
      const raw = (paramsEditor as HTMLTextAreaElement).value;
      current.c_a.parameters = JSON.parse(raw) as Record<string, unknown>;
      return ctx.api.evolve(id, current);
    });
    make("terminate", () => ctx.api.terminate(id));
  }

  async function renderChildren(inst: Instance): Promise<void> {
    clear(childrenBox);
    if (inst.children.length === 0) {
      childrenBox.append(el("div", { class: "hint" }, ["(leaf twin)"]));
      return;
    }
    const tree = el("ul", { class: "child-tree" });
    for (const cid of inst.children) {
      tree.append(await childNode(cid));
    }
    childrenBox.append(tree);
  }

  async function childNode(cid: string): Promise<HTMLElement> {
    const child = (await ctx.api.getTwin(cid)).instance;
    const item = el("li", { "data-child": cid },
                    [`${child.name} `, phaseBadge(child.phase)]);
    if (child.children.length > 0) {
      const sub = el("ul", {});
      for (const gid of child.children) sub.append(await childNode(gid));
      item.append(sub);
    }
    return item;
  }

  async function run(fn: () => Promise<unknown>): Promise<void> {
    if (busy) return;
    busy = true;
    clear(status);
    for (const b of actions.querySelectorAll("button")) b.disabled = true;
    try {
      await fn();
    } catch (err) {
      showError(err);
    } finally {
      busy = false;
      await refresh();
    }
  }

  function showError(err: unknown): void {
    clear(status);
    if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
    else status.append(errorBox("UNEXPECTED", String(err)));
  }

  await refresh();
  const timer = window.setInterval(() => void refresh(), 2000);
  ctx.onLeave(() => window.clearInterval(timer));
}
