/**
 * Binary mask raster and the editing tools that act on it.
 *
 * The brush paints the exact capsule of the stroke: a pixel is touched
 * iff its center lies within `radius` of the polyline segment. Fill is
 * a 4-connected flood from the seed that turns the seed's background
 * region into foreground.
 */

import { encodeGrayPng, decodeGrayPng, type ZlibCodecs, type GrayImage } from "./png.js";

export interface MaskRaster {
  width: number;
  height: number;
  /** row-major, values 0 | 1 */
  data: Uint8Array;
}

export type Tool = "brush" | "eraser" | "fill";

export function emptyMask(width: number, height: number): MaskRaster {
  return { width, height, data: new Uint8Array(width * height) };
}

export function cloneMask(mask: MaskRaster): MaskRaster {
  return { width: mask.width, height: mask.height, data: new Uint8Array(mask.data) };
}

export function masksEqual(a: MaskRaster, b: MaskRaster): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}

function distSqToSegment(
  py: number, px: number,
  y0: number, x0: number,
  y1: number, x1: number,
): number {
  const dy = y1 - y0;
  const dx = x1 - x0;
  const lenSq = dy * dy + dx * dx;
  let t = lenSq === 0 ? 0 : ((py - y0) * dy + (px - x0) * dx) / lenSq;
  t = Math.max(0, Math.min(1, t));
  const cy = y0 + t * dy;
  const cx = x0 + t * dx;
  return (py - cy) * (py - cy) + (px - cx) * (px - cx);
}

/** Paint (value=1) or erase (value=0) the capsule around one segment. */
export function applySegment(
  mask: MaskRaster,
  y0: number, x0: number,
  y1: number, x1: number,
  radius: number,
  value: 0 | 1,
): void {
  const rLo = Math.max(0, Math.floor(Math.min(y0, y1) - radius));
  const rHi = Math.min(mask.height - 1, Math.ceil(Math.max(y0, y1) + radius));
  const cLo = Math.max(0, Math.floor(Math.min(x0, x1) - radius));
  const cHi = Math.min(mask.width - 1, Math.ceil(Math.max(x0, x1) + radius));
  const radiusSq = radius * radius;
  for (let y = rLo; y <= rHi; y++) {
    for (let x = cLo; x <= cHi; x++) {
      if (distSqToSegment(y, x, y0, x0, y1, x1) <= radiusSq) {
        mask.data[y * mask.width + x] = value;
      }
    }
  }
}

/** A stroke is a polyline of (row, col) points; single points dot. */
export function applyStroke(
  mask: MaskRaster,
  path: Array<[number, number]>,
  radius: number,
  value: 0 | 1,
): void {
  if (path.length === 0) return;
  if (path.length === 1) {
    const [y, x] = path[0];
    applySegment(mask, y, x, y, x, radius, value);
    return;
  }
  for (let i = 0; i + 1 < path.length; i++) {
    applySegment(mask, path[i][0], path[i][1], path[i + 1][0], path[i + 1][1], radius, value);
  }
}

/** 4-connected flood fill: the seed's background region becomes foreground. */
export function floodFill(mask: MaskRaster, seedRow: number, seedCol: number): void {
  const { width, height, data } = mask;
  if (seedRow < 0 || seedRow >= height || seedCol < 0 || seedCol >= width) return;
  if (data[seedRow * width + seedCol] === 1) return;
  const queue: number[] = [seedRow * width + seedCol];
  data[seedRow * width + seedCol] = 1;
  while (queue.length > 0) {
    const at = queue.pop()!;
    const y = Math.floor(at / width);
    const x = at % width;
    if (y > 0 && data[at - width] === 0) { data[at - width] = 1; queue.push(at - width); }
    if (y + 1 < height && data[at + width] === 0) { data[at + width] = 1; queue.push(at + width); }
    if (x > 0 && data[at - 1] === 0) { data[at - 1] = 1; queue.push(at - 1); }
    if (x + 1 < width && data[at + 1] === 0) { data[at + 1] = 1; queue.push(at + 1); }
  }
}

/** 0/1 raster -> 0/255 grayscale PNG, the submission wire format. */
export async function encodeMaskPng(mask: MaskRaster, zlib: ZlibCodecs): Promise<Uint8Array> {
  const gray = new Uint8Array(mask.data.length);
  for (let i = 0; i < mask.data.length; i++) {
    gray[i] = mask.data[i] ? 255 : 0;
  }
  return encodeGrayPng(mask.width, mask.height, gray, zlib);
}

/** Grayscale PNG -> 0/1 raster, thresholded at 128 like the server. */
export async function decodeMaskPng(bytes: Uint8Array, zlib: ZlibCodecs): Promise<MaskRaster> {
  const img: GrayImage = await decodeGrayPng(bytes, zlib);
  const data = new Uint8Array(img.width * img.height);
  for (let i = 0; i < data.length; i++) {
    data[i] = img.data[i] >= 128 ? 1 : 0;
  }
  return { width: img.width, height: img.height, data };
}
