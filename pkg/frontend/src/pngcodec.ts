/** Mask <-> base64 PNG via canvas (browser path).
 *
 * Masks travel as single-channel-equivalent PNGs with 0/255 values; the
 * server thresholds at >= 128, so canvas RGBA round-trips are bit-exact.
 */

import { Bitmap, emptyBitmap } from "./raster.js";

export function encodeMaskToPngBase64(mask: Bitmap): string {
  const canvas = document.createElement("canvas");
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const image = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.bits.length; i++) {
    const v = mask.bits[i] ? 255 : 0;
    image.data[i * 4] = v;
    image.data[i * 4 + 1] = v;
    image.data[i * 4 + 2] = v;
    image.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
  const dataUrl = canvas.toDataURL("image/png");
  return dataUrl.slice(dataUrl.indexOf(",") + 1);
}

export async function decodePngBase64ToMask(
  base64: string,
  width: number,
  height: number,
): Promise<Bitmap> {
  const img = new Image();
  img.src = `data:image/png;base64,${base64}`;
  await img.decode();
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, width, height).data;
  const mask = emptyBitmap(width, height);
  for (let i = 0; i < width * height; i++) {
    mask.bits[i] = data[i * 4] >= 128 ? 1 : 0;
  }
  return mask;
}
