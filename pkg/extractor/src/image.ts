/** Image loading: decode to a grayscale float buffer. */

import { Jimp } from "jimp";

export interface GrayImage {
  width: number;
  height: number;
  data: Float64Array; // row-major luma in [0, 255]
}

export async function loadGray(path: string): Promise<GrayImage> {
  const img = await Jimp.read(path);
  const { width, height, data } = img.bitmap;
  const gray = new Float64Array(width * height);
  for (let i = 0; i < width * height; i++) {
    const o = i * 4;
    gray[i] = 0.299 * data[o] + 0.587 * data[o + 1] + 0.114 * data[o + 2];
  }
  return { width, height, data: gray };
}

/** Separable Gaussian blur; keeps sampling alias-free for patch descriptors. */
export function gaussianBlur(img: GrayImage, sigma: number): GrayImage {
  if (sigma <= 0) return { ...img, data: img.data.slice() };
  const radius = Math.max(1, Math.ceil(3 * sigma));
  const kernel = new Float64Array(2 * radius + 1);
  let sum = 0;
  for (let i = -radius; i <= radius; i++) {
    kernel[i + radius] = Math.exp(-(i * i) / (2 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (let i = 0; i < kernel.length; i++) kernel[i] /= sum;

  const { width, height } = img;
  const tmp = new Float64Array(width * height);
  const out = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        const xx = Math.min(width - 1, Math.max(0, x + k));
        acc += kernel[k + radius] * img.data[y * width + xx];
      }
      tmp[y * width + x] = acc;
    }
  }
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        const yy = Math.min(height - 1, Math.max(0, y + k));
        acc += kernel[k + radius] * tmp[yy * width + x];
      }
      out[y * width + x] = acc;
    }
  }
  return { width, height, data: out };
}

/** Bilinear sample with border clamp. */
export function sampleBilinear(img: GrayImage, x: number, y: number): number {
  const x0 = Math.max(0, Math.min(img.width - 2, Math.floor(x)));
  const y0 = Math.max(0, Math.min(img.height - 2, Math.floor(y)));
  const fx = Math.max(0, Math.min(1, x - x0));
  const fy = Math.max(0, Math.min(1, y - y0));
  const w = img.width;
  const v00 = img.data[y0 * w + x0];
  const v01 = img.data[y0 * w + x0 + 1];
  const v10 = img.data[(y0 + 1) * w + x0];
  const v11 = img.data[(y0 + 1) * w + x0 + 1];
  return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}
