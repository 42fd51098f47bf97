/** Pure mask math: stroke rasterization and bitmap algebra.
 *
 * Masks are Uint8Array bitmaps of 0/1 at native image resolution, row-major.
 * A stroke rasterizes to the union of radius-r disks centered on the line
 * segments joining consecutive points: pixel (x, y) is covered when its
 * distance to any segment is <= radius. Everything here is deterministic:
 * same stroke list, same bitmap.
 */

import { BrushStroke } from "./types.js";

export interface Bitmap {
  width: number;
  height: number;
  bits: Uint8Array; // 0|1 per pixel, row-major
}

export function emptyBitmap(width: number, height: number): Bitmap {
  return { width, height, bits: new Uint8Array(width * height) };
}

export function cloneBitmap(mask: Bitmap): Bitmap {
  return { width: mask.width, height: mask.height, bits: mask.bits.slice() };
}

export function bitmapsEqual(a: Bitmap, b: Bitmap): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.bits.length; i++) {
    if (a.bits[i] !== b.bits[i]) return false;
  }
  return true;
}

export function countOnes(mask: Bitmap): number {
  let n = 0;
  for (let i = 0; i < mask.bits.length; i++) n += mask.bits[i];
  return n;
}

function distSqToSegment(
  px: number, py: number,
  ax: number, ay: number,
  bx: number, by: number,
): number {
  const dx = bx - ax;
  const dy = by - ay;
  const lenSq = dx * dx + dy * dy;
  let t = 0;
  if (lenSq > 0) {
    t = ((px - ax) * dx + (py - ay) * dy) / lenSq;
    t = Math.max(0, Math.min(1, t));
  }
  const cx = ax + t * dx;
  const cy = ay + t * dy;
  return (px - cx) * (px - cx) + (py - cy) * (py - cy);
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}

/** Pixels covered by the stroke, as a bitmap of the given dimensions. */
export function rasterizeStroke(stroke: BrushStroke, width: number, height: number): Bitmap {
  const out = emptyBitmap(width, height);
  if (stroke.points.length === 0 || stroke.radius < 1) return out;
  const r = stroke.radius;
  const rSq = r * r;
  const pts = stroke.points.map((p) => ({
    x: clamp(p.x, 0, width - 1),
    y: clamp(p.y, 0, height - 1),
  }));
  const segments = pts.length === 1 ? [[pts[0], pts[0]]] : [];
  for (let i = 0; i + 1 < pts.length; i++) segments.push([pts[i], pts[i + 1]]);
  for (const [a, b] of segments) {
    const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - r));
    const x1 = Math.min(width - 1, Math.ceil(Math.max(a.x, b.x) + r));
    const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - r));
    const y1 = Math.min(height - 1, Math.ceil(Math.max(a.y, b.y) + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if (distSqToSegment(x, y, a.x, a.y, b.x, b.y) <= rSq) {
          out.bits[y * width + x] = 1;
        }
      }
    }
  }
  return out;
}

/** Apply one stroke: pencil sets covered pixels to 1, eraser to 0. */
export function applyStroke(mask: Bitmap, stroke: BrushStroke): Bitmap {
  const covered = rasterizeStroke(stroke, mask.width, mask.height);
  const out = cloneBitmap(mask);
  const value = stroke.tool === "pencil" ? 1 : 0;
  for (let i = 0; i < out.bits.length; i++) {
    if (covered.bits[i]) out.bits[i] = value;
  }
  return out;
}

export type MergeMode = "or" | "subtract" | "replace";

/** Merge a proposal preview into the working mask. */
export function mergeMasks(base: Bitmap, preview: Bitmap, mode: MergeMode): Bitmap {
  if (base.width !== preview.width || base.height !== preview.height) {
    throw new Error("merge dimensions differ");
  }
  if (mode === "replace") return cloneBitmap(preview);
  const out = cloneBitmap(base);
  for (let i = 0; i < out.bits.length; i++) {
    if (mode === "or") out.bits[i] = out.bits[i] | preview.bits[i];
    else out.bits[i] = preview.bits[i] ? 0 : out.bits[i];
  }
  return out;
}
