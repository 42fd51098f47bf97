import { describe, expect, it } from "vitest";

import { MaskDocument, UNDO_DEPTH } from "../src/maskdoc.js";
import { bitmapsEqual, countOnes, emptyBitmap } from "../src/raster.js";

function dot(x: number, y: number) {
  return { tool: "pencil" as const, radius: 1, points: [{ x, y }] };
}

describe("MaskDocument", () => {
  it("starts clean and becomes dirty on edits", () => {
    const doc = new MaskDocument("train/a/0.png", 8, 8);
    expect(doc.dirty).toBe(false);
    doc.stroke(dot(4, 4));
    expect(doc.dirty).toBe(true);
    doc.markSaved();
    expect(doc.dirty).toBe(false);
  });

  it("undo restores the exact previous bitmap", () => {
    const doc = new MaskDocument("t", 10, 10);
    doc.stroke(dot(2, 2));
    const before = doc.bitmap;
    doc.stroke(dot(7, 7));
    expect(doc.undo()).toBe(true);
    expect(bitmapsEqual(doc.bitmap, before)).toBe(true);
  });

  it("supports at least 20 undo levels", () => {
    const doc = new MaskDocument("t", 32, 32);
    for (let i = 0; i < 25; i++) doc.stroke(dot(i, i));
    expect(doc.undoDepth).toBeGreaterThanOrEqual(20);
    expect(UNDO_DEPTH).toBeGreaterThanOrEqual(20);
    let undone = 0;
    while (doc.undo()) undone += 1;
    expect(undone).toBeGreaterThanOrEqual(20);
  });

  it("undo on a fresh document is a no-op", () => {
    const doc = new MaskDocument("t", 4, 4);
    expect(doc.undo()).toBe(false);
  });

  it("merge and clear are undoable", () => {
    const doc = new MaskDocument("t", 4, 4);
    const preview = emptyBitmap(4, 4);
    preview.bits.fill(1);
    doc.merge(preview, "or");
    expect(countOnes(doc.bitmap)).toBe(16);
    doc.clear();
    expect(countOnes(doc.bitmap)).toBe(0);
    doc.undo();
    expect(countOnes(doc.bitmap)).toBe(16);
    doc.undo();
    expect(countOnes(doc.bitmap)).toBe(0);
  });

  it("loads an initial bitmap as the saved baseline", () => {
    const initial = emptyBitmap(4, 4);
    initial.bits[5] = 1;
    const doc = new MaskDocument("t", 4, 4, initial);
    expect(doc.dirty).toBe(false);
    expect(countOnes(doc.bitmap)).toBe(1);
  });
});
