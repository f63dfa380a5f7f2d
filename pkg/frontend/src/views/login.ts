import { Gateway, GatewayError } from "../api.js";
import { button, clear, el, errorBox } from "../dom.js";

export function loginView(root: HTMLElement, base: string,
                          onToken: (token: string) => void): void {
  clear(root);
  const tokenInput = el("input", { id: "login-token", type: "password",
                                   placeholder: "bearer token" });
  const status = el("div", { class: "status" });
  root.append(
    el("h2", {}, ["Sign in"]),
    el("p", { class: "hint" }, ["Paste a platform token; it is the only thing ",
                                "kept across reloads."]),
    el("div", { class: "toolbar" }, [tokenInput,
                                     button("Sign in", () => void attempt(),
                                            { id: "login-submit" })]),
    status,
  );

  async function attempt(): Promise<void> {
    clear(status);
    const token = (tokenInput as HTMLInputElement).value.trim();
    try {
      await new Gateway(base, token).listAssets();  // 401 when the token is bad
      onToken(token);
    } catch (err) {
      if (err instanceof GatewayError) status.append(errorBox(err.code, err.message));
      else status.append(errorBox("UNEXPECTED", String(err)));
    }
  }
}
