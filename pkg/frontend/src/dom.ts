// Tiny DOM helpers; no framework.

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return node;
}

export function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function button(label: string, onClick: () => void,
                       attrs: Record<string, string> = {}): HTMLButtonElement {
  const b = el("button", attrs, [label]);
  b.addEventListener("click", onClick);
  return b;
}

/** Render a gateway failure with its machine code. */
export function errorBox(code: string, message: string): HTMLElement {
  return el("div", { class: "error-box", "data-code": code },
            [el("b", {}, [code]), ` ${message}`]);
}

export function phaseBadge(phase: string): HTMLElement {
  return el("span", { class: `badge badge-${phase.toLowerCase()}`, "data-phase": phase },
            [phase]);
}

/** SVG polyline chart; renders fine without a canvas. */
export function lineChart(points: [number, number][], width = 560, height = 160,
                          band?: { center: number; width: number }): SVGSVGElement {
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "chart");
  if (points.length === 0) return svg;
  const ts = points.map((p) => p[0]);
  const vs = points.map((p) => p[1]);
  const t0 = Math.min(...ts);
  const t1 = Math.max(...ts, t0 + 1);
  let v0 = Math.min(...vs);
  let v1 = Math.max(...vs, v0 + 1e-9);
  if (band) {
    v0 = Math.min(v0, band.center - band.width);
    v1 = Math.max(v1, band.center + band.width);
  }
  const pad = (v1 - v0) * 0.1 + 1e-9;
  v0 -= pad;
  v1 += pad;
  const x = (t: number) => ((t - t0) / (t1 - t0)) * (width - 10) + 5;
  const y = (v: number) => height - 5 - ((v - v0) / (v1 - v0)) * (height - 10);
  if (band) {
    const rect = document.createElementNS(svg.namespaceURI, "rect");
    rect.setAttribute("x", "5");
    rect.setAttribute("width", String(width - 10));
    rect.setAttribute("y", String(y(band.center + band.width)));
    rect.setAttribute("height",
                      String(Math.abs(y(band.center - band.width) - y(band.center + band.width))));
    rect.setAttribute("class", "chart-band");
    svg.appendChild(rect);
  }
  const line = document.createElementNS(svg.namespaceURI, "polyline");
  line.setAttribute("points", points.map((p) => `${x(p[0])},${y(p[1])}`).join(" "));
  line.setAttribute("class", "chart-line");
  line.setAttribute("fill", "none");
  svg.appendChild(line);
  return svg;
}
