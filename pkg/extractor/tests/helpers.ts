/** Deterministic synthetic test images rendered to PNG. */

import { Jimp } from "jimp";

import { GrayImage, sampleBilinear } from "../src/image";

export function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 4294967296;
  };
}

/** Cluttered shapes with varied intensity plus pixel noise: corner-rich and
 * locally distinctive. */
export function renderTestImage(width: number, height: number, seed: number): GrayImage {
  const rand = lcg(seed);
  const data = new Float64Array(width * height).fill(28);
  const put = (x: number, y: number, v: number) => {
    if (x >= 0 && y >= 0 && x < width && y < height) data[y * width + x] = v;
  };
  for (let i = 0; i < 110; i++) {
    const cx = rand() * width;
    const cy = rand() * height;
    const w = 6 + rand() * 30;
    const h = 6 + rand() * 30;
    const col = 40 + rand() * 215;
    if (rand() < 0.5) {
      for (let y = Math.floor(cy); y < cy + h; y++) {
        for (let x = Math.floor(cx); x < cx + w; x++) put(x, y, col);
      }
    } else {
      const r = Math.max(3, w / 2);
      for (let y = Math.floor(cy - r); y <= cy + r; y++) {
        for (let x = Math.floor(cx - r); x <= cx + r; x++) {
          if ((x - cx) ** 2 + (y - cy) ** 2 <= r * r) put(x, y, col);
        }
      }
    }
  }
  for (let i = 0; i < data.length; i++) {
    data[i] = Math.max(0, Math.min(255, data[i] + (rand() - 0.5) * 10));
  }
  return { width, height, data };
}

/** Rotate content by `theta` radians about the image center (y-down frame,
 * R = [[c,-s],[s,c]]), bilinear resampling, background fill. */
export function rotateGray(img: GrayImage, theta: number, fill = 28): GrayImage {
  const { width, height } = img;
  const out = new Float64Array(width * height);
  const cx = width / 2;
  const cy = height / 2;
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      // inverse map: source = center + R(-theta) (dest - center)
      const dx = x - cx;
      const dy = y - cy;
      const sx = cx + c * dx + s * dy;
      const sy = cy - s * dx + c * dy;
      out[y * width + x] =
        sx < 0 || sy < 0 || sx > width - 1 || sy > height - 1
          ? fill
          : sampleBilinear(img, sx, sy);
    }
  }
  return { width, height, data: out };
}

/** Forward map of image points under rotateGray's transform. */
export function rotatePoint(
  x: number, y: number, theta: number, width: number, height: number,
): { x: number; y: number } {
  const cx = width / 2;
  const cy = height / 2;
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  const dx = x - cx;
  const dy = y - cy;
  return { x: cx + c * dx - s * dy, y: cy + s * dx + c * dy };
}

export async function writePng(img: GrayImage, path: string): Promise<void> {
  const out = new Jimp({ width: img.width, height: img.height, color: 0x000000ff });
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const v = Math.max(0, Math.min(255, Math.round(img.data[y * img.width + x])));
      const rgba = ((v << 24) | (v << 16) | (v << 8) | 0xff) >>> 0;
      out.setPixelColor(rgba, x, y);
    }
  }
  await out.write(path as `${string}.${string}`);
}
