import { cloneMask, type MaskRaster } from "./mask.js";

export const MAX_UNDO_DEPTH = 50;

/** Bounded stack of raster snapshots, one frame per stroke. */
export class UndoStack {
  private frames: MaskRaster[] = [];

  push(mask: MaskRaster): void {
    this.frames.push(cloneMask(mask));
    if (this.frames.length > MAX_UNDO_DEPTH) {
      this.frames = this.frames.slice(this.frames.length - MAX_UNDO_DEPTH);
    }
  }

  pop(): MaskRaster | undefined {
    return this.frames.pop();
  }

  clear(): void {
    this.frames = [];
  }

  get depth(): number {
    return this.frames.length;
  }
}
