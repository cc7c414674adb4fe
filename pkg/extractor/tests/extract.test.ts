import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import { main } from "../src/cli";
import { detectKeypoints, extractFeatures } from "../src/detect";
import { parseFeatures, readFeatures } from "../src/features";
import { GrayImage } from "../src/image";
import { renderTestImage, rotateGray, rotatePoint, writePng } from "./helpers";

let tmp: string;

beforeAll(() => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "extractor-"));
});

function validateInvariants(file: string): number {
  const set = readFeatures(file);
  for (const f of set.features) {
    expect(f.scale).toBeGreaterThan(0);
    let norm = 0;
    for (const v of f.descriptor) norm += v * v;
    expect(Math.abs(Math.sqrt(norm) - 1)).toBeLessThan(1e-6);
  }
  return set.features.length;
}

describe("extraction", () => {
  it("natural extraction yields a valid, non-trivial feature file", async () => {
    const img = renderTestImage(640, 480, 11);
    await writePng(img, path.join(tmp, "a.png"));
    const out = path.join(tmp, "a.epf");
    expect(await main(["extract", "--image", path.join(tmp, "a.png"),
                       "--mode", "natural", "--out", out])).toBe(0);
    const n = validateInvariants(out);
    expect(n).toBeGreaterThan(100);
  }, 120_000);

  it("fixed extraction reuses the natural detections and forces the angle", async () => {
    const img = renderTestImage(640, 480, 12);
    const natural = await extractFeatures(img, "natural");
    const fixed = await extractFeatures(img, "fixed", 1.361);
    expect(fixed.features.length).toBe(natural.features.length);
    for (let i = 0; i < fixed.features.length; i++) {
      expect(fixed.features[i].x).toBe(natural.features[i].x);
      expect(fixed.features[i].scale).toBe(natural.features[i].scale);
      expect(fixed.features[i].orientation).toBe(1.361);
    }
  }, 120_000);

  it("a blank image produces a valid empty file", async () => {
    const blank: GrayImage = { width: 320, height: 240, data: new Float64Array(320 * 240).fill(90) };
    await writePng(blank, path.join(tmp, "blank.png"));
    const out = path.join(tmp, "blank.epf");
    expect(await main(["extract", "--image", path.join(tmp, "blank.png"),
                       "--mode", "natural", "--out", out])).toBe(0);
    const set = parseFeatures(fs.readFileSync(out, "utf-8"));
    expect(set.features.length).toBe(0);
  }, 120_000);

  it("an unreadable image exits nonzero", async () => {
    expect(await main(["extract", "--image", path.join(tmp, "missing.png"),
                       "--mode", "natural", "--out", path.join(tmp, "x.epf")])).toBe(1);
  });

  it("a malformed request exits nonzero", async () => {
    const req = path.join(tmp, "bad_request.json");
    fs.writeFileSync(req, JSON.stringify({ image: "a", mode: "natural" }));
    expect(await main(["fulfill", "--request", req,
                       "--image", path.join(tmp, "a.png"),
                       "--out", path.join(tmp, "x.epf")])).toBe(1);
  });

  it("fulfilling a request honors mode and angle in the header", async () => {
    const img = renderTestImage(320, 240, 5);
    await writePng(img, path.join(tmp, "f.png"));
    const req = path.join(tmp, "request.json");
    fs.writeFileSync(req, JSON.stringify({ image: "f", mode: "fixed", angle_rad: 1.3613568165555769 }));
    const out = path.join(tmp, "f_fixed.epf");
    expect(await main(["fulfill", "--request", req,
                       "--image", path.join(tmp, "f.png"), "--out", out])).toBe(0);
    const header = fs.readFileSync(out, "utf-8").split("\n")[0];
    expect(header).toMatch(/^EPF1 \d+ 64 fixed 1\.361356816555/);
  }, 120_000);

  it("is deterministic for identical input", async () => {
    const img = renderTestImage(320, 240, 6);
    await writePng(img, path.join(tmp, "d.png"));
    const o1 = path.join(tmp, "d1.epf");
    const o2 = path.join(tmp, "d2.epf");
    await main(["extract", "--image", path.join(tmp, "d.png"), "--mode", "natural", "--out", o1]);
    await main(["extract", "--image", path.join(tmp, "d.png"), "--mode", "natural", "--out", o2]);
    expect(fs.readFileSync(o1)).toEqual(fs.readFileSync(o2));
  }, 120_000);
});

describe("fixed-orientation rotation consistency", () => {
  // extracting the rotated copy with the orientation fixed at the rotation
  // angle must reproduce the original upright descriptors at corresponding
  // detections (same location under the known rotation, same detection scale)
  it("holds on 3 test images at 30 degrees", async () => {
    const theta = (30 * Math.PI) / 180;
    for (const seed of [21, 22, 23]) {
      const img = renderTestImage(640, 480, seed);
      const rotated = rotateGray(img, theta);
      const f0 = await extractFeatures(img, "fixed", 0);
      const fr = await extractFeatures(rotated, "fixed", theta);
      const rkps = await detectKeypoints(rotated);

      let matched = 0;
      let consistent = 0;
      for (let i = 0; i < f0.features.length; i++) {
        const a = f0.features[i];
        const mapped = rotatePoint(a.x, a.y, theta, 640, 480);
        if (mapped.x < 40 || mapped.y < 40 || mapped.x > 600 || mapped.y > 440) continue;
        let best = -1;
        let bestD = 1.44; // 1.2 px tolerance
        for (let j = 0; j < fr.features.length; j++) {
          const d = (fr.features[j].x - mapped.x) ** 2 + (fr.features[j].y - mapped.y) ** 2;
          if (d < bestD) {
            bestD = d;
            best = j;
          }
        }
        if (best < 0) continue;
        // same detection scale; an octave jump is a different measurement
        if (Math.abs(fr.features[best].scale - a.scale) > 0.1) continue;
        matched++;
        let ncc = 0;
        for (let k = 0; k < a.descriptor.length; k++) {
          ncc += a.descriptor[k] * fr.features[best].descriptor[k];
        }
        if (ncc > 0.9) consistent++;
      }
      expect(matched).toBeGreaterThan(50);
      expect(consistent / matched).toBeGreaterThanOrEqual(0.8);
      expect(rkps.length).toBeGreaterThan(0);
    }
  }, 300_000);
});
