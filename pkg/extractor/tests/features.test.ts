import { describe, expect, it } from "vitest";

import { parseFeatures, serializeFeatures, FeatureSet } from "../src/features";

function unit(vals: number[]): Float64Array {
  const norm = Math.sqrt(vals.reduce((a, v) => a + v * v, 0));
  return Float64Array.from(vals.map((v) => v / norm));
}

function sampleSet(mode: "natural" | "fixed"): FeatureSet {
  const features = [
    { x: 10.25, y: 20.5, scale: 3.125, orientation: 0.7853981633974483, descriptor: unit([1, 2, 3, 4]) },
    { x: 0.1234567890123456, y: 480.0, scale: 5.0, orientation: -3.0, descriptor: unit([-1, 0.5, 2, -3]) },
  ];
  return mode === "fixed"
    ? { mode, fixedAngle: 1.3613568165555769, features }
    : { mode, features };
}

describe("feature file format", () => {
  it("round trips natural sets exactly", () => {
    const set = sampleSet("natural");
    const text = serializeFeatures(set);
    const back = parseFeatures(text);
    expect(back.mode).toBe("natural");
    expect(back.features.length).toBe(2);
    for (let i = 0; i < 2; i++) {
      expect(back.features[i].x).toBe(set.features[i].x);
      expect(back.features[i].orientation).toBe(set.features[i].orientation);
      expect(Array.from(back.features[i].descriptor)).toEqual(
        Array.from(set.features[i].descriptor),
      );
    }
    expect(serializeFeatures(back)).toBe(text);
  });

  it("round trips the fixed angle exactly", () => {
    const set = sampleSet("fixed");
    const back = parseFeatures(serializeFeatures(set));
    expect(back.fixedAngle).toBe(set.fixedAngle);
    const header = serializeFeatures(set).split("\n")[0];
    expect(header).toMatch(/^EPF1 2 4 fixed 1\.361356816555/);
    expect(Number(header.split(" ")[4])).toBe(set.fixedAngle);
  });

  it("serializes an empty set with a valid header", () => {
    const text = serializeFeatures({ mode: "natural", features: [] });
    expect(text).toBe("EPF1 0 0 natural\n");
    expect(parseFeatures(text).features).toEqual([]);
  });

  it("rejects malformed input", () => {
    expect(() => parseFeatures("")).toThrow();
    expect(() => parseFeatures("XXXX 1 4 natural\n1 2 3 4 5 6 7 8\n")).toThrow();
    expect(() => parseFeatures("EPF1 2 4 natural\n1 2 3 4 5 6 7 8\n")).toThrow(/records/);
    expect(() => parseFeatures("EPF1 1 4 sideways\n1 2 3 4 5 6 7 8\n")).toThrow(/mode/);
    expect(() => parseFeatures("EPF1 1 4 natural\n1 2 3 nan 5 6 7 8\n")).toThrow();
  });
});
