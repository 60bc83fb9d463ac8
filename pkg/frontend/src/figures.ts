/**
 * The four figure kinds, each built from grouped medians of the results CSV
 * (or, for "series", straight from a capture-series dump).
 */

import { writeFileSync } from "node:fs";
import { distinct, groupedMedians } from "./aggregate.js";
import { ResultRow, SeriesPoint, loadResults, loadSeries } from "./csv.js";
import { PALETTE, PanelSpec, RenderError, Series, renderSvg } from "./svg.js";

export const FIGURE_KINDS = [
  "barrier-vs-sigma",
  "cka-panels",
  "series",
  "l2-vs-barrier",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  input: string;
  kind: FigureKind;
  output: string;
  /** Metric column for barrier-vs-sigma (default barrier_ce_train). */
  metric?: string;
  /** Extra grouping keys beyond the per-kind defaults. */
  groupBy?: string[];
  logX?: boolean;
  logY?: boolean;
}

const FOOTNOTE = "lines/points are medians across seeds";

function color(i: number): string {
  return PALETTE[i % PALETTE.length];
}

/** One line per t_frac: median metric vs sigma. */
export function barrierVsSigmaPanel(
  rows: ResultRow[],
  metric: string,
  logX: boolean,
  logY: boolean,
): PanelSpec {
  const keys = ["t_frac", "sigma"];
  const meds = groupedMedians(rows, keys, metric);
  const tFracs = distinct<number>(rows, "t_frac");
  const series: Series[] = tFracs.map((tf, i) => ({
    label: `t/T = ${tf}`,
    color: color(i),
    style: "line",
    points: meds
      .filter((m) => m.key.t_frac === tf)
      .map((m) => ({ x: m.key.sigma as number, y: m.value })),
  }));
  return {
    title: `${metric} at T vs perturbation magnitude`,
    xLabel: "sigma",
    yLabel: `median ${metric}`,
    logX,
    logY,
    series,
  };
}

/** Two panels: median CKA angle vs sigma per t_frac, and CKA vs barrier. */
export function ckaPanels(
  rows: ResultRow[],
  logX: boolean,
  logY: boolean,
): PanelSpec[] {
  const angleVsSigma = barrierVsSigmaPanel(rows, "cka_angle", logX, false);
  angleVsSigma.title = "angular CKA at T vs perturbation magnitude";
  angleVsSigma.yLabel = "median cka_angle";
  const scatter: PanelSpec = {
    title: "angular CKA vs train-CE barrier (all cells)",
    xLabel: "barrier_ce_train",
    yLabel: "cka_angle",
    logX: logY, // barrier on x mirrors the y-log toggle of the line panel
    logY: false,
    series: [
      {
        label: "cells",
        color: color(0),
        style: "scatter",
        points: rows
          .filter((r) => r.cka_angle !== null && r.barrier_ce_train !== null)
          .map((r) => ({
            x: r.barrier_ce_train as number,
            y: r.cka_angle as number,
          })),
      },
    ],
  };
  if (scatter.series[0].points.length === 0) {
    throw new RenderError(
      "cka-panels: no rows with both cka_angle and barrier_ce_train",
    );
  }
  return [angleVsSigma, scatter];
}

/** Two stacked panels from a capture-series dump: l2 and barrier vs step. */
export function seriesPanels(points: SeriesPoint[], logY: boolean): PanelSpec[] {
  if (points.length === 0) {
    throw new RenderError("series: no points in the dump");
  }
  const mk = (field: "l2" | "barrier"): PanelSpec => ({
    title: `${field} divergence over training`,
    xLabel: "step",
    yLabel: field,
    logX: false,
    logY,
    series: [
      {
        label: field,
        color: color(field === "l2" ? 0 : 1),
        style: "line",
        points: points.map((p) => ({ x: p.step, y: p[field] })),
      },
    ],
  });
  return [mk("l2"), mk("barrier")];
}

/** Scatter of final L2 distance against the train-CE barrier, per cell. */
export function l2VsBarrierPanel(
  rows: ResultRow[],
  logX: boolean,
  logY: boolean,
): PanelSpec {
  const tFracs = distinct<number>(rows, "t_frac");
  const series: Series[] = tFracs.map((tf, i) => ({
    label: `t/T = ${tf}`,
    color: color(i),
    style: "scatter",
    points: rows
      .filter(
        (r) => r.t_frac === tf && r.l2 !== null && r.barrier_ce_train !== null,
      )
      .map((r) => ({ x: r.l2 as number, y: r.barrier_ce_train as number })),
  }));
  if (series.every((s) => s.points.length === 0)) {
    throw new RenderError("l2-vs-barrier: no rows with both l2 and barrier");
  }
  return {
    title: "L2 distance vs train-CE barrier at T",
    xLabel: "l2",
    yLabel: "barrier_ce_train",
    logX,
    logY,
    series,
  };
}

/** Render a figure to SVG text (pure; no file IO). */
export function renderFigure(
  kind: FigureKind,
  rows: ResultRow[] | null,
  series: SeriesPoint[] | null,
  opts: { metric?: string; logX?: boolean; logY?: boolean } = {},
): string {
  const logX = opts.logX ?? true;
  const logY = opts.logY ?? false;
  switch (kind) {
    case "barrier-vs-sigma":
      return renderSvg(
        [barrierVsSigmaPanel(rows!, opts.metric ?? "barrier_ce_train", logX, logY)],
        FOOTNOTE,
      );
    case "cka-panels":
      return renderSvg(ckaPanels(rows!, logX, logY), FOOTNOTE);
    case "series":
      return renderSvg(seriesPanels(series!, logY), FOOTNOTE);
    case "l2-vs-barrier":
      return renderSvg([l2VsBarrierPanel(rows!, logX, logY)], FOOTNOTE);
  }
}

/** Full pipeline: read input(s), render, write the SVG file. */
export function render(spec: FigureSpec): void {
  const opts = { metric: spec.metric, logX: spec.logX, logY: spec.logY };
  const svg =
    spec.kind === "series"
      ? renderFigure(spec.kind, null, loadSeries(spec.input), opts)
      : renderFigure(spec.kind, loadResults(spec.input), null, opts);
  writeFileSync(spec.output, svg);
}
