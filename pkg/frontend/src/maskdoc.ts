/** Editing session for one image's mask: bitmap, undo stack, dirty flag.
 *
 * The bitmap always lives at native image resolution; zoom is display-only.
 * Every mutation pushes the previous bitmap onto the undo stack (bounded,
 * but always at least 20 levels deep).
 */

import { applyStroke, Bitmap, bitmapsEqual, cloneBitmap, emptyBitmap, mergeMasks, MergeMode } from "./raster.js";
import { BrushStroke } from "./types.js";

export const UNDO_DEPTH = 50;

export class MaskDocument {
  private current: Bitmap;
  private saved: Bitmap;
  private undoStack: Bitmap[] = [];

  constructor(
    public readonly imageId: string,
    width: number,
    height: number,
    initial: Bitmap | null = null,
  ) {
    this.current = initial ? cloneBitmap(initial) : emptyBitmap(width, height);
    this.saved = cloneBitmap(this.current);
  }

  get bitmap(): Bitmap {
    return this.current;
  }

  get dirty(): boolean {
    return !bitmapsEqual(this.current, this.saved);
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  private push(next: Bitmap): void {
    this.undoStack.push(this.current);
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.current = next;
  }

  stroke(stroke: BrushStroke): void {
    this.push(applyStroke(this.current, stroke));
  }

  merge(preview: Bitmap, mode: MergeMode): void {
    this.push(mergeMasks(this.current, preview, mode));
  }

  clear(): void {
    this.push(emptyBitmap(this.current.width, this.current.height));
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.current = prev;
    return true;
  }

  /** Mark the current bitmap as persisted (after a successful PUT). */
  markSaved(): void {
    this.saved = cloneBitmap(this.current);
  }
}
