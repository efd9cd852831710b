import type { Annotation, SeriesMeta, WindowLevel } from "./types.js";

/** Map one 16-bit intensity onto the 0-255 gray ramp via window/level. */
export function windowLevelLut(value: number, wl: WindowLevel): number {
  const lo = wl.level - wl.window / 2;
  const t = (value - lo) / wl.window;
  return Math.round(255 * Math.min(1, Math.max(0, t)));
}

/**
 * Grayscale RGBA for one slice. The target has the shape of canvas
 * ImageData but stays DOM-free so it is unit-testable.
 */
export function renderSlice(
  pixels: Uint16Array,
  meta: SeriesMeta,
  wl: WindowLevel,
): { width: number; height: number; data: Uint8ClampedArray<ArrayBuffer> } {
  const data = new Uint8ClampedArray(new ArrayBuffer(meta.rows * meta.cols * 4));
  for (let i = 0; i < pixels.length; i++) {
    const g = windowLevelLut(pixels[i], wl);
    data[4 * i] = g;
    data[4 * i + 1] = g;
    data[4 * i + 2] = g;
    data[4 * i + 3] = 255;
  }
  return { width: meta.cols, height: meta.rows, data };
}

/**
 * The slice an annotation is drawn on. Voxel index i spans the continuous
 * interval [i, i+1) with its center at i + 0.5, so a continuous slice
 * coordinate rounds to the nearest voxel index.
 */
export function nearestSliceIndex(slice: number, depth: number): number {
  return Math.min(depth - 1, Math.max(0, Math.round(slice)));
}

export interface Overlay {
  id: string;
  /** Circle center in canvas coordinates (pixel centers at +0.5). */
  x: number;
  y: number;
  radius: number;
  status: Annotation["status"] | "staged";
}

/** Circles to draw on the given slice. */
export function overlaysForSlice(
  annotations: Annotation[],
  sliceIndex: number,
  depth: number,
): Overlay[] {
  const out: Overlay[] = [];
  for (const a of annotations) {
    if (nearestSliceIndex(a.center.slice, depth) !== sliceIndex) continue;
    out.push({
      id: a.id,
      x: a.center.col + 0.5,
      y: a.center.row + 0.5,
      radius: Math.max(a.radiusVox, 2.0),
      status: a.id.startsWith("staged-") ? "staged" : a.status,
    });
  }
  return out;
}

/** The overlay under a click, if any (topmost wins). */
export function hitTest(overlays: Overlay[], x: number, y: number): Overlay | null {
  for (let i = overlays.length - 1; i >= 0; i--) {
    const o = overlays[i];
    if (Math.hypot(x - o.x, y - o.y) <= o.radius) return o;
  }
  return null;
}
