import { EventRecord, GatewayError } from "../api.js";
import { AppCtx } from "../ctx.js";
import { button, clear, el, errorBox, lineChart } from "../dom.js";

const POLL_MS = 1000;
const DEFAULT_WINDOW_MS = 5 * 60 * 1000; // sliding window; a UI setting only

// Telemetry: polling chart over one series plus the event feed.
export async function telemetryView(root: HTMLElement, ctx: AppCtx,
                                    twinId?: string): Promise<void> {
  clear(root);
  const keyInput = el("input", { id: "series-key", value: "inc.t_box" });
  const windowInput = el("input", { id: "series-window",
                                    value: String(DEFAULT_WINDOW_MS / 1000) });
  const chartBox = el("div", { id: "chart-box" });
  const status = el("div", { class: "status" });
  const feed = el("ul", { id: "event-feed" });
  root.append(
    el("h2", {}, ["Telemetry", twinId ? ` · ${twinId}` : ""]),
    el("div", { class: "toolbar" }, [
      el("label", {}, ["series "]), keyInput,
      el("label", {}, [" window (s) "]), windowInput,
      button("Apply", () => void poll()),
    ]),
    status, chartBox,
    el("h3", {}, ["Events"]), feed,
  );

  let lastEvent = 0;

  async function poll(): Promise<void> {
    const key = (keyInput as HTMLInputElement).value.trim();
    if (!key) return;
    try {
      const latest = await ctx.api.latest(key);
      clear(status);
      if (latest.point === null) {
        status.append(`series ${key}: no data yet`);
      } else {
        const windowMs = Number((windowInput as HTMLInputElement).value) * 1000
          || DEFAULT_WINDOW_MS;
        const to = latest.point[0];
        const { points } = await ctx.api.series(key, Math.max(0, to - windowMs), to);
        clear(chartBox);
        chartBox.append(lineChart(points));
        chartBox.append(el("div", { class: "hint", id: "chart-info" },
                           [`${points.length} points · latest ${latest.point[1].toFixed(3)}`
                            + ` @ ${latest.point[0]} ms`]));
      }
      const { events } = await ctx.api.events(lastEvent);
      for (const ev of events) {
        lastEvent = Math.max(lastEvent, ev.id);
        feed.prepend(renderEvent(ev));
      }
    } catch (err) {
      clear(status);
      if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
      else status.append(errorBox("UNEXPECTED", String(err)));
    }
  }

  function renderEvent(ev: EventRecord): HTMLElement {
    return el("li", { class: "event", "data-type": ev.type }, [
      el("b", {}, [`#${ev.id} ${ev.type}`]),
      ` from ${ev.source} @ ${ev.timestamp} ms `,
      el("code", {}, [JSON.stringify(ev.payload)]),
    ]);
  }

  await poll();
  const timer = window.setInterval(() => void poll(), POLL_MS);
  ctx.onLeave(() => window.clearInterval(timer));
}
