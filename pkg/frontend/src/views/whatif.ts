import { GatewayError, WhatifResult } from "../api.js";
import { AppCtx } from "../ctx.js";
import { button, clear, el, errorBox } from "../dom.js";

// What-if: score candidate controller settings in ephemeral simulations,
// render the server's ranking, optionally apply the winner through evolve.
export function whatifView(root: HTMLElement, ctx: AppCtx, twinId: string): void {
  clear(root);
  const rows = el("tbody", { id: "candidate-rows" });
  const table = el("table", { class: "cand-table" }, [
    el("thead", {}, [el("tr", {}, [el("th", {}, ["setpoint"]), el("th", {}, ["band"]),
                                   el("th", {}, [""])])]),
    rows,
  ]);
  const horizon = el("input", { id: "whatif-horizon", value: "60000" });
  const status = el("div", { class: "status" });
  const results = el("div", { id: "whatif-results" });
  const runBtn = button("Run what-if", () => void run(), { id: "whatif-run" });
  root.append(
    el("h2", {}, [`What-if · ${twinId}`]),
    table,
    el("div", { class: "toolbar" }, [
      button("Add candidate", () => addRow()),
      el("label", {}, [" horizon (ms) "]), horizon, runBtn,
    ]),
    status, results,
  );

  function addRow(setpoint = "35.0", band = "0.5"): void {
    const tr = el("tr", { class: "candidate" }, [
      el("td", {}, [el("input", { class: "cand-setpoint", value: setpoint })]),
      el("td", {}, [el("input", { class: "cand-band", value: band })]),
    ]);
    tr.append(el("td", {}, [button("x", () => tr.remove())]));
    rows.append(tr);
  }

  addRow("35.0", "0.5");
  addRow("35.0", "5.0");

  function candidates(): { setpoint: number; band: number }[] {
    const out: { setpoint: number; band: number }[] = [];
    for (const tr of rows.querySelectorAll("tr.candidate")) {
      const sp = (tr.querySelector(".cand-setpoint") as HTMLInputElement).value;
      const band = (tr.querySelector(".cand-band") as HTMLInputElement).value;
      out.push({ setpoint: Number(sp), band: Number(band) });
    }
    return out;
  }

  async function run(): Promise<void> {
    clear(status);
    clear(results);
    runBtn.disabled = true;
    try {
      const horizonMs = Number((horizon as HTMLInputElement).value) || 60000;
      const { results: ranked } = await ctx.api.whatif(twinId, candidates(), horizonMs);
      results.append(renderRanking(ranked));
    } catch (err) {
      if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
      else status.append(errorBox("UNEXPECTED", String(err)));
    } finally {
      runBtn.disabled = false;
    }
  }

  function renderRanking(ranked: WhatifResult[]): HTMLElement {
    const table2 = el("table", { class: "rank-table", id: "rank-table" });
    table2.append(el("tr", {}, ["Rank", "Setpoint", "Band", "Score", ""]
      .map((h) => el("th", {}, [h]))));
    for (const r of ranked) {
      const apply = el("td", {});
      if (r.rank === 1) {
        apply.append(button("Apply winner", () => void applyWinner(r),
                            { id: "apply-winner" }));
      }
      table2.append(el("tr", { "data-rank": String(r.rank) }, [
        el("td", {}, [String(r.rank)]),
        el("td", {}, [String(r.setpoint)]),
        el("td", {}, [String(r.band)]),
        el("td", {}, [r.score.toFixed(6)]),
        apply,
      ]));
    }
    return table2;
  }

  async function applyWinner(winner: WhatifResult): Promise<void> {
    clear(status);
    try {
      const { instance } = await ctx.api.getTwin(twinId);
      const config = instance.config!;
      config.c_a.parameters = {
        ...config.c_a.parameters,
        setpoint: winner.setpoint,
        band: winner.band,
      };
      await ctx.api.evolve(twinId, config);
      status.append(el("div", { class: "ok", id: "apply-ok" },
                       [`applied setpoint=${winner.setpoint} band=${winner.band}`]));
    } catch (err) {
      if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
      else status.append(errorBox("UNEXPECTED", String(err)));
    }
  }
}
