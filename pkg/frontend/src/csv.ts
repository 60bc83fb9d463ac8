/**
 * Reading the fixed results-CSV schema and the series/curve dumps.
 *
 * Files start with an optional `# trainstab <version>` comment line, then a
 * header row.  Rendering never mutates inputs; blank metric cells (error
 * rows) become null.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

/** Column order of the results CSV, fixed by the producing pipeline. */
export const CSV_COLUMNS = [
  "mode",
  "seed",
  "t_frac",
  "t_step",
  "kind",
  "mask",
  "sigma",
  "l2",
  "barrier_ce_train",
  "barrier_err_test",
  "barrier_wm",
  "barrier_am",
  "fixed_frac_wm",
  "cka_angle",
  "ensemble_acc",
  "acc_a",
  "acc_b",
  "ce_a",
  "ce_b",
  "lambda_l2",
  "r2_l2",
  "wall_s",
] as const;

export type ResultColumn = (typeof CSV_COLUMNS)[number];

const STRING_COLUMNS = new Set<ResultColumn>(["mode", "kind", "mask"]);

export interface ResultRow {
  mode: string;
  kind: string;
  mask: string;
  seed: number;
  t_frac: number;
  t_step: number;
  sigma: number;
  [metric: string]: string | number | null;
}

export class CsvSchemaError extends Error {}

function parseTable(text: string): string[][] {
  // Normalize line endings first: producers may mix \r\n rows with \n
  // comment lines, which defeats delimiter auto-detection.
  const normalized = text.replace(/\r\n/g, "\n");
  const parsed = Papa.parse<string[]>(normalized.trim(), {
    comments: "#",
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new CsvSchemaError(`CSV parse error at row ${e.row}: ${e.message}`);
  }
  return parsed.data;
}

/** Parse results-CSV text; the header must match the fixed schema exactly. */
export function parseResults(text: string): ResultRow[] {
  const rows = parseTable(text);
  if (rows.length === 0) {
    throw new CsvSchemaError("empty CSV: no header row");
  }
  const header = rows[0];
  if (
    header.length !== CSV_COLUMNS.length ||
    header.some((h, i) => h !== CSV_COLUMNS[i])
  ) {
    throw new CsvSchemaError(
      `unexpected header: expected [${CSV_COLUMNS.join(",")}], got [${header.join(",")}]`,
    );
  }
  return rows.slice(1).map((cells, rowIdx) => {
    if (cells.length !== CSV_COLUMNS.length) {
      throw new CsvSchemaError(
        `row ${rowIdx + 1}: expected ${CSV_COLUMNS.length} cells, got ${cells.length}`,
      );
    }
    const row: Record<string, string | number | null> = {};
    CSV_COLUMNS.forEach((col, i) => {
      const raw = cells[i];
      if (STRING_COLUMNS.has(col)) {
        row[col] = raw;
      } else if (raw === "") {
        row[col] = null;
      } else {
        const v = Number(raw);
        if (Number.isNaN(v)) {
          throw new CsvSchemaError(
            `row ${rowIdx + 1}, column ${col}: not a number: ${JSON.stringify(raw)}`,
          );
        }
        row[col] = v;
      }
    });
    return row as ResultRow;
  });
}

export function loadResults(path: string): ResultRow[] {
  return parseResults(readFileSync(path, "utf-8"));
}

export interface SeriesPoint {
  step: number;
  l2: number;
  barrier: number;
}

/** Parse a capture-series dump: step,l2,barrier with the usual comment line. */
export function parseSeries(text: string): SeriesPoint[] {
  const rows = parseTable(text);
  if (rows.length === 0) {
    throw new CsvSchemaError("empty series CSV");
  }
  const header = rows[0];
  const expected = ["step", "l2", "barrier"];
  if (header.length !== 3 || header.some((h, i) => h !== expected[i])) {
    throw new CsvSchemaError(
      `unexpected series header: expected [${expected.join(",")}], got [${header.join(",")}]`,
    );
  }
  return rows.slice(1).map((cells, i) => {
    const [step, l2, barrier] = cells.map(Number);
    if ([step, l2, barrier].some(Number.isNaN)) {
      throw new CsvSchemaError(`series row ${i + 1}: non-numeric cell`);
    }
    return { step, l2, barrier };
  });
}

export function loadSeries(path: string): SeriesPoint[] {
  return parseSeries(readFileSync(path, "utf-8"));
}
