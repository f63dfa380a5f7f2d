import { GatewayError } from "../api.js";
import { AppCtx } from "../ctx.js";
import { button, clear, el, errorBox } from "../dom.js";

const TEMPLATE = `name: my-twin
c_a:
  ft_pairs:
    - {function: <function-asset-id>, tool: <tool-asset-id>}
  parameters:
    setpoint: 35.0
c_i: {workspace_flavour: IsolatedProcess, cpu_units: 1, memory_mb: 128, tick_ms: 100}
`;

// Composer: edit a configuration document; the server validates, the console
// only renders its diagnostics (rule id, severity, path, message).
export function composerView(root: HTMLElement, ctx: AppCtx): void {
  clear(root);
  const editor = el("textarea", { id: "composer-editor", rows: "18", spellcheck: "false" });
  (editor as HTMLTextAreaElement).value = TEMPLATE;
  const diagnostics = el("div", { id: "composer-diagnostics" });
  const submit = button("Validate & create", () => void create(), { id: "composer-create" });

  root.append(
    el("h2", {}, ["Compose a twin"]),
    el("p", { class: "hint" },
       ["The document is validated server-side on create; problems come back ",
        "as diagnostics with stable rule ids."]),
    editor, el("div", { class: "toolbar" }, [submit]), diagnostics,
  );

  async function create(): Promise<void> {
    clear(diagnostics);
    submit.disabled = true;
    try {
      const { instance } = await ctx.api.createTwin((editor as HTMLTextAreaElement).value);
      ctx.navigate(`#/twin/${instance.id}`);
    } catch (err) {
      if (err instanceof GatewayError && err.report) {
        const table = el("table", { class: "diag-table", id: "diag-table" });
        table.append(el("tr", {}, ["Severity", "Rule", "Path", "Message"]
          .map((h) => el("th", {}, [h]))));
        for (const d of err.report.diagnostics) {
          table.append(el("tr", { class: `diag-${d.severity}`, "data-rule": d.rule }, [
            el("td", {}, [d.severity]),
            el("td", { class: "rule-id" }, [d.rule]),
            el("td", {}, [d.path]),
            el("td", {}, [d.message]),
          ]));
        }
        diagnostics.append(errorBox(err.code, err.message), table);
      } else if (err instanceof GatewayError) {
        diagnostics.append(errorBox(err.code, err.message));
      } else {
        diagnostics.append(errorBox("UNEXPECTED", String(err)));
      }
    } finally {
      submit.disabled = false;
    }
  }
}
