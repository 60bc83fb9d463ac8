/**
 * Grouping and medians — the only statistics the renderer performs.
 *
 * Medians (not means) across seeds: robust at the small seed counts these
 * sweeps use, and noted in every legend.
 */

import { ResultRow } from "./csv.js";

export class AggregationError extends Error {}

/** Median of a non-empty array; average of the two middle values when even. */
export function median(values: number[]): number {
  if (values.length === 0) {
    throw new AggregationError("median of an empty group");
  }
  const sorted = [...values].sort((a, b) => a - b);
  const mid = Math.floor(sorted.length / 2);
  return sorted.length % 2 === 1
    ? sorted[mid]
    : (sorted[mid - 1] + sorted[mid]) / 2;
}

export interface GroupedMedian {
  key: Record<string, string | number>;
  n: number;
  value: number;
}

/**
 * Median of `metric` per combination of `keys` (typically across seeds).
 * Rows where the metric is blank (error rows) are dropped; a group with no
 * usable rows at all is a diagnostic error naming the offending keys.
 */
export function groupedMedians(
  rows: ResultRow[],
  keys: string[],
  metric: string,
): GroupedMedian[] {
  if (rows.length === 0) {
    throw new AggregationError("no rows to aggregate");
  }
  for (const k of [...keys, metric]) {
    if (!(k in rows[0])) {
      throw new AggregationError(`column does not exist: ${k}`);
    }
  }
  const groups = new Map<string, { key: Record<string, string | number>; vals: number[] }>();
  for (const row of rows) {
    const key: Record<string, string | number> = {};
    for (const k of keys) {
      key[k] = row[k] as string | number;
    }
    const id = JSON.stringify(keys.map((k) => key[k]));
    if (!groups.has(id)) {
      groups.set(id, { key, vals: [] });
    }
    const v = row[metric];
    if (v !== null && typeof v === "number") {
      groups.get(id)!.vals.push(v);
    }
  }
  const out: GroupedMedian[] = [];
  for (const { key, vals } of groups.values()) {
    if (vals.length === 0) {
      const label = Object.entries(key)
        .map(([k, v]) => `${k}=${v}`)
        .join(", ");
      throw new AggregationError(
        `empty group for metric ${metric}: every row at ${label} has a blank value`,
      );
    }
    out.push({ key, n: vals.length, value: median(vals) });
  }
  // Deterministic output order: sort by the stringified key.
  out.sort((a, b) => {
    const ka = JSON.stringify(keys.map((k) => a.key[k]));
    const kb = JSON.stringify(keys.map((k) => b.key[k]));
    return ka < kb ? -1 : ka > kb ? 1 : 0;
  });
  return out;
}

/** Distinct values of a column, in ascending order. */
export function distinct<T extends string | number>(
  rows: ResultRow[],
  column: string,
): T[] {
  const seen = new Set<T>();
  for (const row of rows) {
    seen.add(row[column] as T);
  }
  return [...seen].sort((a, b) => (a < b ? -1 : a > b ? 1 : 0));
}
