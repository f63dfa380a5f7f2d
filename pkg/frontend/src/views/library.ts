import { GatewayError } from "../api.js";
import { AppCtx } from "../ctx.js";
import { button, clear, el, errorBox } from "../dom.js";

// Library: browse, filter and share the reusable asset catalog.
export async function libraryView(root: HTMLElement, ctx: AppCtx): Promise<void> {
  clear(root);
  const kindSelect = el("select", { id: "filter-kind" });
  for (const kind of ["", "Data", "Model", "Function", "Tool", "ReadyDT"]) {
    kindSelect.append(el("option", { value: kind }, [kind || "(all kinds)"]));
  }
  const textInput = el("input", { id: "filter-text", placeholder: "search name/metadata" });
  const status = el("div", { class: "status" });
  const table = el("table", { class: "asset-table" });
  root.append(
    el("h2", {}, ["Asset library"]),
    el("div", { class: "toolbar" }, [kindSelect, textInput,
                                     button("Filter", () => void refresh())]),
    status, table,
  );

  async function refresh(): Promise<void> {
    clear(status);
    try {
      const kind = (kindSelect as HTMLSelectElement).value || undefined;
      const text = (textInput as HTMLInputElement).value || undefined;
      const { assets } = await ctx.api.listAssets({ kind, text });
      clear(table);
      table.append(el("tr", {}, ["Kind", "Name", "Owner", "Version", "Visibility", ""]
        .map((h) => el("th", {}, [h]))));
      for (const asset of assets) {
        const shareCell = el("td", {});
        if (asset.visibility !== "Shared") {
          shareCell.append(button("Share", async () => {
            try {
              await ctx.api.shareAsset(asset.id);
              await refresh();
            } catch (err) {
              showError(err);
            }
          }, { "data-share": asset.id }));
        } else {
          shareCell.append("shared");
        }
        table.append(el("tr", { "data-asset": asset.id }, [
          el("td", {}, [asset.kind]),
          el("td", {}, [asset.name]),
          el("td", {}, [asset.owner]),
          el("td", {}, [`v${asset.version}`]),
          el("td", {}, [asset.visibility]),
          shareCell,
        ]));
      }
      if (assets.length === 0) status.append("no assets visible");
    } catch (err) {
      showError(err);
    }
  }

  function showError(err: unknown): void {
    clear(status);
    if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
    else status.append(errorBox("UNEXPECTED", String(err)));
  }

  await refresh();
}
