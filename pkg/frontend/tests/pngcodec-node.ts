/** Node-side mask PNG codec for tests (the browser path uses canvas). */

import { PNG } from "pngjs";

import { Bitmap, emptyBitmap } from "../src/raster.js";

export function encodeMaskToPngBase64Node(mask: Bitmap): string {
  const png = new PNG({ width: mask.width, height: mask.height });
  for (let i = 0; i < mask.bits.length; i++) {
    const v = mask.bits[i] ? 255 : 0;
    png.data[i * 4] = v;
    png.data[i * 4 + 1] = v;
    png.data[i * 4 + 2] = v;
    png.data[i * 4 + 3] = 255;
  }
  return PNG.sync.write(png).toString("base64");
}

export function decodePngBase64ToMaskNode(base64: string): Bitmap {
  const png = PNG.sync.read(Buffer.from(base64, "base64"));
  const mask = emptyBitmap(png.width, png.height);
  for (let i = 0; i < png.width * png.height; i++) {
    mask.bits[i] = png.data[i * 4] >= 128 ? 1 : 0;
  }
  return mask;
}
