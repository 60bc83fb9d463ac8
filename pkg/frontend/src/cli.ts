#!/usr/bin/env node
/**
 * trainstab-figures: render paper-style SVG figures from results CSVs.
 *
 *   trainstab-figures --kind barrier-vs-sigma --input results.csv --output fig.svg
 *   trainstab-figures --kind series --input series.csv --output fig.svg --log-y
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { FIGURE_KINDS, FigureKind, render } from "./figures.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .option("kind", {
      choices: FIGURE_KINDS as unknown as string[],
      demandOption: true,
      describe: "figure kind",
    })
    .option("input", {
      type: "string",
      demandOption: true,
      describe: "results CSV (or series CSV for --kind series)",
    })
    .option("output", {
      type: "string",
      demandOption: true,
      describe: "output SVG path",
    })
    .option("metric", {
      type: "string",
      default: "barrier_ce_train",
      describe: "metric column for barrier-vs-sigma",
    })
    .option("log-x", { type: "boolean", default: true })
    .option("log-y", {
      type: "boolean",
      default: false,
      describe: "log-scale y axis (readability of small barriers)",
    })
    .strict()
    .fail((msg) => {
      throw new Error(msg);
    })
    .parse();

  render({
    input: args.input,
    kind: args.kind as FigureKind,
    output: args.output,
    metric: args.metric,
    logX: args["log-x"] as boolean,
    logY: args["log-y"] as boolean,
  });
  console.log(`wrote ${args.output}`);
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  main(hideBin(process.argv)).catch((err) => {
    console.error(`error: ${err.message}`);
    process.exit(1);
  });
}
