import { Gateway, storedToken, storeToken } from "./api.js";
import { AppCtx } from "./ctx.js";
import { button, clear, el } from "./dom.js";
import { composerView } from "./views/composer.js";
import { libraryView } from "./views/library.js";
import { loginView } from "./views/login.js";
import { telemetryView } from "./views/telemetry.js";
import { twinListView, twinView } from "./views/twin.js";
import { whatifView } from "./views/whatif.js";

export interface AppHandle {
  ctx: AppCtx;
  render: () => Promise<void>;
}

/** Mount the console; exported so tests can boot it against any gateway. */
export function initApp(root: HTMLElement, base: string,
                        initialToken: string | null = null): AppHandle {
  let token = initialToken ?? storedToken();
  let leaveHooks: (() => void)[] = [];

  const ctx: AppCtx = {
    api: new Gateway(base, token ?? ""),
    navigate(hash: string) {
      const changed = window.location.hash !== hash;
      if (changed) window.location.hash = hash;
      // render directly: browsers also fire hashchange, but a re-render is
      // idempotent and some DOM implementations never emit the event
      void render();
    },
    onLeave(fn: () => void) {
      leaveHooks.push(fn);
    },
    logout() {
      token = null;
      storeToken(null);
      void render();
    },
  };

  function nav(): HTMLElement {
    return el("nav", {}, [
      button("Library", () => ctx.navigate("#/library"), { id: "nav-library" }),
      button("Composer", () => ctx.navigate("#/composer"), { id: "nav-composer" }),
      button("Twins", () => ctx.navigate("#/twins"), { id: "nav-twins" }),
      button("Telemetry", () => ctx.navigate("#/telemetry"), { id: "nav-telemetry" }),
      button("Sign out", () => ctx.logout(), { id: "nav-logout" }),
    ]);
  }

  async function render(): Promise<void> {
    for (const fn of leaveHooks) fn();
    leaveHooks = [];
    clear(root);
    if (!token) {
      loginView(root, base, (t) => {
        token = t;
        storeToken(t);
        ctx.api = new Gateway(base, t);
        void render();
      });
      return;
    }
    ctx.api.token = token;
    const page = el("main", { id: "page" });
    root.append(nav(), page);
    const hash = window.location.hash || "#/library";
    const [, route, arg] = hash.split("/");
    switch (route) {
      case "composer":
        composerView(page, ctx);
        break;
      case "twins":
        await twinListView(page, ctx);
        break;
      case "twin":
        await twinView(page, ctx, arg);
        break;
      case "telemetry":
        await telemetryView(page, ctx, arg);
        break;
      case "whatif":
        whatifView(page, ctx, arg);
        break;
      default:
        await libraryView(page, ctx);
    }
  }

  window.addEventListener("hashchange", () => void render());
  return { ctx, render };
}

// browser entry point: same origin as the gateway that serves /console/
declare global {
  interface Window { __twindeskTest?: boolean }
}

if (typeof window !== "undefined" && !window.__twindeskTest) {
  const root = document.getElementById("app");
  if (root) {
    void initApp(root as HTMLElement, window.location.origin).render();
  }
}
