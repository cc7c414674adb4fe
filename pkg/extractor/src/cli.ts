#!/usr/bin/env node
/**
 * Extraction CLI.
 *
 *   epiprep-extract extract --image <path> --mode natural|fixed [--angle <rad>] --out <path>
 *   epiprep-extract fulfill --request <request.json> --image <path> --out <path>
 *
 * `fulfill` answers the matcher's extraction-request file (written when it
 * exits with code 3): `{image, mode, angle_rad}`. Exit code 0 on success,
 * 1 on any error (unreadable image, malformed request, bad arguments).
 */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { extractFeatures } from "./detect";
import { writeFeatures } from "./features";
import { loadGray } from "./image";

async function runExtract(
  imagePath: string,
  mode: string,
  angle: number | undefined,
  outPath: string,
): Promise<void> {
  if (mode !== "natural" && mode !== "fixed") {
    throw new Error(`mode must be natural or fixed, got '${mode}'`);
  }
  if (mode === "fixed" && (angle === undefined || !Number.isFinite(angle))) {
    throw new Error("fixed mode requires --angle <radians>");
  }
  const img = await loadGray(imagePath);
  const set = await extractFeatures(img, mode, angle ?? 0);
  writeFeatures(set, outPath);
  console.log(`${outPath}: ${set.features.length} features (${mode}${
    mode === "fixed" ? ` @ ${angle}` : ""})`);
}

export async function main(argv: string[]): Promise<number> {
  const command = argv[0];
  try {
    if (command === "extract") {
      const { values } = parseArgs({
        args: argv.slice(1),
        options: {
          image: { type: "string" },
          mode: { type: "string", default: "natural" },
          angle: { type: "string" },
          out: { type: "string" },
        },
      });
      if (!values.image || !values.out) throw new Error("--image and --out are required");
      const angle = values.angle !== undefined ? Number(values.angle) : undefined;
      await runExtract(values.image, values.mode!, angle, values.out);
      return 0;
    }
    if (command === "fulfill") {
      const { values } = parseArgs({
        args: argv.slice(1),
        options: {
          request: { type: "string" },
          image: { type: "string" },
          out: { type: "string" },
        },
      });
      if (!values.request || !values.image || !values.out) {
        throw new Error("--request, --image and --out are required");
      }
      let req: { image?: string; mode?: string; angle_rad?: number };
      try {
        req = JSON.parse(fs.readFileSync(values.request, "utf-8"));
      } catch (e) {
        throw new Error(`malformed request file: ${(e as Error).message}`);
      }
      if (req.mode !== "fixed" || typeof req.angle_rad !== "number"
          || !Number.isFinite(req.angle_rad)) {
        throw new Error("request must carry mode 'fixed' and a finite angle_rad");
      }
      await runExtract(values.image, "fixed", req.angle_rad, values.out);
      return 0;
    }
    throw new Error(`unknown command '${command ?? ""}' (use extract or fulfill)`);
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
