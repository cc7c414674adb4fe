/**
 * Detection and description.
 *
 * Keypoints (location, scale, orientation) come from OpenCV's ORB detector.
 * Descriptors are oriented intensity patches sampled by this adapter: an
 * 8x8 grid over the detection's support region, rotated to the requested
 * orientation, mean-subtracted and normalized to unit length, so the
 * pipeline's normalized cross-correlation is a true patch correlation.
 * Computing the patch at an explicit angle (rather than re-packing the
 * detector's binary descriptor) is what makes fixed-orientation
 * re-description exact.
 *
 * In fixed mode the natural detection's locations and scales are reused and
 * only the descriptor (and the stored orientation) change, so feature
 * indices line up across modes for the same image.
 */

import { Feature, FeatureSet, Mode } from "./features";
import { GrayImage, gaussianBlur, sampleBilinear } from "./image";

export const DESCRIPTOR_GRID = 8;           // 8x8 -> 64-dim descriptors
export const PATCH_BLUR_SIGMA = 2.5;        // anti-aliasing before sampling
export const SCALE_PER_SIZE = 1 / 6;        // file scale = ORB size (diameter) / 6
export const MAX_FEATURES = 1500;

// the WASM module initializes asynchronously; share one instance
let cvPromise: Promise<any> | null = null;

export function getCv(): Promise<any> {
  if (!cvPromise) {
    // eslint-disable-next-line @typescript-eslint/no-var-requires
    cvPromise = Promise.resolve(require("@techstark/opencv-js"));
  }
  return cvPromise;
}

export interface Keypoint {
  x: number;
  y: number;
  size: number;       // ORB patch diameter, pixels
  angle: number;      // radians in (-pi, pi]
}

function wrapAngle(a: number): number {
  let w = a % (2 * Math.PI);
  if (w > Math.PI) w -= 2 * Math.PI;
  if (w <= -Math.PI) w += 2 * Math.PI;
  return w;
}

export async function detectKeypoints(img: GrayImage): Promise<Keypoint[]> {
  const cv = await getCv();
  const mat = new cv.Mat(img.height, img.width, cv.CV_8UC1);
  for (let i = 0; i < img.data.length; i++) {
    mat.data[i] = Math.max(0, Math.min(255, Math.round(img.data[i])));
  }
  const orb = new cv.ORB(MAX_FEATURES);
  const kps = new cv.KeyPointVector();
  try {
    orb.detect(mat, kps);
    const out: Keypoint[] = [];
    for (let i = 0; i < kps.size(); i++) {
      const k = kps.get(i);
      const angleDeg = k.angle >= 0 ? k.angle : 0;
      out.push({
        x: k.pt.x,
        y: k.pt.y,
        size: k.size,
        angle: wrapAngle((angleDeg * Math.PI) / 180),
      });
    }
    // detector order is arbitrary; sort for a stable, comparable index space
    out.sort((a, b) => a.y - b.y || a.x - b.x || a.size - b.size);
    return out;
  } finally {
    mat.delete();
    orb.delete();
    kps.delete();
  }
}

/**
 * Oriented patch descriptor at (x, y) with the grid rotated by `theta`
 * (radians, image coordinates with y down). Returns a unit vector; a flat
 * patch falls back to a fixed degenerate unit vector so feature indices
 * stay aligned between natural and fixed extractions.
 */
export function patchDescriptor(
  blurred: GrayImage,
  x: number,
  y: number,
  size: number,
  theta: number,
  grid: number = DESCRIPTOR_GRID,
): Float64Array {
  const half = size / 2;
  const step = (2 * half) / (grid - 1);
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  const vals = new Float64Array(grid * grid);
  let idx = 0;
  for (let gy = 0; gy < grid; gy++) {
    for (let gx = 0; gx < grid; gx++) {
      const ux = -half + gx * step;
      const uy = -half + gy * step;
      vals[idx++] = sampleBilinear(blurred, x + c * ux - s * uy, y + s * ux + c * uy);
    }
  }
  let mean = 0;
  for (const v of vals) mean += v;
  mean /= vals.length;
  let norm = 0;
  for (let i = 0; i < vals.length; i++) {
    vals[i] -= mean;
    norm += vals[i] * vals[i];
  }
  norm = Math.sqrt(norm);
  if (norm < 1e-9) {
    vals.fill(0);
    vals[0] = 1;
    return vals;
  }
  for (let i = 0; i < vals.length; i++) vals[i] /= norm;
  return vals;
}

export interface ExtractionJob {
  imagePath: string;
  mode: Mode;
  angle?: number; // radians, required for fixed mode
}

export async function extractFeatures(img: GrayImage, mode: Mode, angle = 0): Promise<FeatureSet> {
  if (mode === "fixed" && !Number.isFinite(angle)) {
    throw new Error("fixed mode requires a finite angle");
  }
  const keypoints = await detectKeypoints(img);
  const blurred = gaussianBlur(img, PATCH_BLUR_SIGMA);
  const features: Feature[] = keypoints.map((k) => {
    const theta = mode === "fixed" ? angle : k.angle;
    return {
      x: k.x,
      y: k.y,
      scale: k.size * SCALE_PER_SIZE,
      orientation: theta,
      descriptor: patchDescriptor(blurred, k.x, k.y, k.size, theta),
    };
  });
  return mode === "fixed"
    ? { mode, fixedAngle: angle, features }
    : { mode, features };
}
