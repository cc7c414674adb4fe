/**
 * Canonical feature-file format shared with the matching pipeline.
 *
 * Text format: header `EPF1 <count> <dim> <mode> [<angle_rad>]`, then one
 * record per feature: `x y scale orientation d_1 ... d_D`, whitespace
 * separated, full float precision. Descriptors are unit-norm.
 */

import * as fs from "node:fs";

export const MAGIC = "EPF1";

export type Mode = "natural" | "fixed";

export interface Feature {
  x: number;
  y: number;
  scale: number;
  orientation: number;
  descriptor: Float64Array;
}

export interface FeatureSet {
  mode: Mode;
  fixedAngle?: number;
  features: Feature[];
}

/** Shortest digit string that round-trips the float64 exactly. */
function fmt(v: number): string {
  if (!Number.isFinite(v)) throw new Error(`non-finite value ${v}`);
  return String(v);
}

export function serializeFeatures(set: FeatureSet): string {
  const dim = set.features.length > 0 ? set.features[0].descriptor.length : 0;
  let header = `${MAGIC} ${set.features.length} ${dim} ${set.mode}`;
  if (set.mode === "fixed") {
    if (set.fixedAngle === undefined || !Number.isFinite(set.fixedAngle)) {
      throw new Error("fixed mode requires a finite angle");
    }
    header += ` ${fmt(set.fixedAngle)}`;
  }
  const lines = [header];
  for (const f of set.features) {
    if (f.descriptor.length !== dim) throw new Error("inconsistent descriptor length");
    const parts = [fmt(f.x), fmt(f.y), fmt(f.scale), fmt(f.orientation)];
    for (const d of f.descriptor) parts.push(fmt(d));
    lines.push(parts.join(" "));
  }
  return lines.join("\n") + "\n";
}

export function writeFeatures(set: FeatureSet, path: string): void {
  fs.writeFileSync(path, serializeFeatures(set));
}

export function parseFeatures(text: string): FeatureSet {
  const lines = text.split("\n").filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) throw new Error("empty feature file");
  const head = lines[0].split(/\s+/);
  if (head[0] !== MAGIC || head.length < 4) throw new Error("bad header");
  const count = Number(head[1]);
  const dim = Number(head[2]);
  const mode = head[3] as Mode;
  if (mode !== "natural" && mode !== "fixed") throw new Error(`bad mode ${head[3]}`);
  const fixedAngle = mode === "fixed" ? Number(head[4]) : undefined;
  if (mode === "fixed" && !Number.isFinite(fixedAngle)) throw new Error("bad fixed angle");
  if (lines.length - 1 !== count) {
    throw new Error(`expected ${count} records, found ${lines.length - 1}`);
  }
  const features: Feature[] = [];
  for (let i = 1; i < lines.length; i++) {
    const vals = lines[i].split(/\s+/).map(Number);
    if (vals.length !== 4 + dim || vals.some((v) => !Number.isFinite(v))) {
      throw new Error(`bad record on line ${i + 1}`);
    }
    features.push({
      x: vals[0],
      y: vals[1],
      scale: vals[2],
      orientation: vals[3],
      descriptor: Float64Array.from(vals.slice(4)),
    });
  }
  return { mode, fixedAngle, features };
}

export function readFeatures(path: string): FeatureSet {
  return parseFeatures(fs.readFileSync(path, "utf-8"));
}
