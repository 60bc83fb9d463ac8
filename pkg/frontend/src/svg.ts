/**
 * Minimal dependency-free SVG panel renderer: axes (linear or log), line
 * series, scatter points, legend.  Identical inputs produce identical bytes.
 */

export interface Point {
  x: number;
  y: number;
}

export interface Series {
  label: string;
  color: string;
  points: Point[];
  /** "line" joins points (sorted by x); "scatter" draws markers only. */
  style: "line" | "scatter";
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  logX: boolean;
  logY: boolean;
  series: Series[];
}

export class RenderError extends Error {}

/** Categorical palette (colorblind-safe Okabe-Ito). */
export const PALETTE = [
  "#0072B2",
  "#E69F00",
  "#009E73",
  "#D55E00",
  "#CC79A7",
  "#56B4E9",
  "#F0E442",
  "#000000",
];

const W = 460;
const H = 340;
const MARGIN = { left: 62, right: 14, top: 30, bottom: 44 };

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(0).replace("+", "");
  return String(Number(v.toPrecision(4)));
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

interface Scale {
  (v: number): number;
  ticks: number[];
}

function makeScale(
  values: number[],
  log: boolean,
  rangeLo: number,
  rangeHi: number,
  axis: string,
): Scale {
  let vals = values.filter((v) => Number.isFinite(v));
  if (log) {
    vals = vals.filter((v) => v > 0);
    if (vals.length === 0) {
      throw new RenderError(`log ${axis}-axis requested but no positive values`);
    }
  }
  if (vals.length === 0) {
    throw new RenderError(`no finite values for the ${axis} axis`);
  }
  let lo = Math.min(...vals);
  let hi = Math.max(...vals);
  if (lo === hi) {
    // Degenerate span: widen symmetrically so the point sits mid-axis.
    if (log) {
      lo /= 10;
      hi *= 10;
    } else {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  const tl = log ? Math.log10(lo) : lo;
  const th = log ? Math.log10(hi) : hi;
  const scale = ((v: number) => {
    const t = log ? Math.log10(v) : v;
    return rangeLo + ((t - tl) / (th - tl)) * (rangeHi - rangeLo);
  }) as Scale;
  const ticks: number[] = [];
  if (log) {
    for (let e = Math.ceil(tl); e <= Math.floor(th); e++) {
      ticks.push(10 ** e);
    }
    if (ticks.length < 2) {
      ticks.push(lo, hi);
    }
  } else {
    const n = 5;
    for (let i = 0; i <= n; i++) {
      ticks.push(lo + ((hi - lo) * i) / n);
    }
  }
  scale.ticks = [...new Set(ticks)].sort((a, b) => a - b);
  return scale;
}

/** Render one panel to an SVG fragment positioned at (ox, oy). */
function renderPanel(spec: PanelSpec, ox: number, oy: number): string {
  const allX = spec.series.flatMap((s) => s.points.map((p) => p.x));
  const allY = spec.series.flatMap((s) => s.points.map((p) => p.y));
  if (allX.length === 0) {
    throw new RenderError(`panel "${spec.title}" has no data points`);
  }
  const sx = makeScale(allX, spec.logX, MARGIN.left, W - MARGIN.right, "x");
  const sy = makeScale(allY, spec.logY, H - MARGIN.bottom, MARGIN.top, "y");
  const parts: string[] = [];
  parts.push(`<g transform="translate(${ox},${oy})">`);
  parts.push(
    `<text x="${W / 2}" y="16" text-anchor="middle" font-size="13" font-weight="bold">${esc(spec.title)}</text>`,
  );
  // Frame
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${W - MARGIN.left - MARGIN.right}" height="${H - MARGIN.top - MARGIN.bottom}" fill="none" stroke="#888"/>`,
  );
  // Ticks and grid
  for (const t of sx.ticks) {
    const x = sx(t);
    if (!Number.isFinite(x)) continue;
    parts.push(
      `<line x1="${x.toFixed(2)}" y1="${H - MARGIN.bottom}" x2="${x.toFixed(2)}" y2="${H - MARGIN.bottom + 4}" stroke="#444"/>`,
      `<text x="${x.toFixed(2)}" y="${H - MARGIN.bottom + 16}" text-anchor="middle" font-size="10">${fmt(t)}</text>`,
    );
  }
  for (const t of sy.ticks) {
    const y = sy(t);
    if (!Number.isFinite(y)) continue;
    parts.push(
      `<line x1="${MARGIN.left - 4}" y1="${y.toFixed(2)}" x2="${MARGIN.left}" y2="${y.toFixed(2)}" stroke="#444"/>`,
      `<text x="${MARGIN.left - 6}" y="${(y + 3).toFixed(2)}" text-anchor="end" font-size="10">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${W / 2}" y="${H - 8}" text-anchor="middle" font-size="11">${esc(spec.xLabel)}</text>`,
    `<text x="14" y="${H / 2}" text-anchor="middle" font-size="11" transform="rotate(-90 14 ${H / 2})">${esc(spec.yLabel)}</text>`,
  );
  // Series
  for (const s of spec.series) {
    const pts = [...s.points]
      .filter(
        (p) =>
          Number.isFinite(p.x) &&
          Number.isFinite(p.y) &&
          (!spec.logX || p.x > 0) &&
          (!spec.logY || p.y > 0),
      )
      .sort((a, b) => a.x - b.x);
    if (pts.length === 0) continue;
    const coords = pts.map((p) => `${sx(p.x).toFixed(2)},${sy(p.y).toFixed(2)}`);
    if (s.style === "line" && pts.length > 1) {
      parts.push(
        `<polyline points="${coords.join(" ")}" fill="none" stroke="${s.color}" stroke-width="1.6"/>`,
      );
    }
    for (const c of coords) {
      const [x, y] = c.split(",");
      parts.push(`<circle cx="${x}" cy="${y}" r="2.6" fill="${s.color}"/>`);
    }
  }
  // Legend
  let ly = MARGIN.top + 6;
  for (const s of spec.series) {
    parts.push(
      `<rect x="${W - MARGIN.right - 120}" y="${ly - 7}" width="9" height="9" fill="${s.color}"/>`,
      `<text x="${W - MARGIN.right - 107}" y="${ly + 1}" font-size="10">${esc(s.label)}</text>`,
    );
    ly += 14;
  }
  parts.push("</g>");
  return parts.join("\n");
}

/** Compose one or more panels into a standalone SVG document (stacked). */
export function renderSvg(panels: PanelSpec[], footnote: string): string {
  if (panels.length === 0) {
    throw new RenderError("no panels to render");
  }
  const height = H * panels.length + 18;
  const body = panels.map((p, i) => renderPanel(p, 0, H * i)).join("\n");
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect width="100%" height="100%" fill="white"/>`,
    body,
    `<text x="6" y="${height - 5}" font-size="9" fill="#555">${esc(footnote)}</text>`,
    `</svg>`,
  ].join("\n");
}
