import { Gateway } from "./api.js";

export interface AppCtx {
  api: Gateway;
  navigate: (hash: string) => void;
  /** register a polling interval so the router can stop it on navigation */
  onLeave: (fn: () => void) => void;
  logout: () => void;
}
