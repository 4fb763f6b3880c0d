/** Single-owner viewer state plus the pure update rules the tests pin down.
 * All coordinates are LR pixel units; the canvas layer converts on its own. */

import type { ReconstructResponse } from "./api";

export interface Roi {
  x0: number;
  y0: number;
  w: number;
  h: number;
}

export interface ViewerState {
  volumeId: string | null;
  sliceId: string | null;
  lrDims: [number, number] | null; // [h, w] of the LR grid at the current scale
  roi: Roi | null;                 // null means full slice
  scale: number;
  scaleBounds: [number, number];   // advertised by /api/health
  refMode: "HR" | "LR";
  compare: boolean;
  showError: boolean;              // error-map toggle, client-side only
  lastResponse: ReconstructResponse | null;
  banner: string | null;           // non-blocking network failure notice
}

export function initialState(): ViewerState {
  return {
    volumeId: null,
    sliceId: null,
    lrDims: null,
    roi: null,
    scale: 2.0,
    scaleBounds: [1.0, 8.0],
    refMode: "HR",
    compare: false,
    showError: false,
    lastResponse: null,
    banner: null,
  };
}

/** Slider values clamp to the service-advertised range. */
export function clampScale(s: number, bounds: [number, number]): number {
  if (!Number.isFinite(s)) return bounds[0];
  return Math.min(bounds[1], Math.max(bounds[0], s));
}

/** Intersect a selection with the slice; null for degenerate results. */
export function clampRoi(roi: Roi, lrDims: [number, number]): Roi | null {
  const [lh, lw] = lrDims;
  const x0 = Math.max(0, Math.min(roi.x0, lw));
  const y0 = Math.max(0, Math.min(roi.y0, lh));
  const x1 = Math.max(x0, Math.min(roi.x0 + roi.w, lw));
  const y1 = Math.max(y0, Math.min(roi.y0 + roi.h, lh));
  const w = x1 - x0;
  const h = y1 - y0;
  if (w <= 0 || h <= 0) return null;
  return { x0, y0, w, h };
}

/** Canvas-pixel drag rectangle -> integer LR-pixel rect (any drag direction). */
export function dragToRoi(
  ax: number, ay: number, bx: number, by: number, displayZoom: number,
): Roi {
  const x0 = Math.floor(Math.min(ax, bx) / displayZoom);
  const y0 = Math.floor(Math.min(ay, by) / displayZoom);
  const x1 = Math.ceil(Math.max(ax, bx) / displayZoom);
  const y1 = Math.ceil(Math.max(ay, by) / displayZoom);
  return { x0, y0, w: x1 - x0, h: y1 - y0 };
}

/** The ROI actually sent: explicit selection, else the whole slice. */
export function effectiveRoi(state: ViewerState): [number, number, number, number] | null {
  if (!state.lrDims) return null;
  const [lh, lw] = state.lrDims;
  const roi = state.roi ?? { x0: 0, y0: 0, w: lw, h: lh };
  return [roi.x0, roi.y0, roi.w, roi.h];
}

/** LR grid dims for a slice at a scale, mirroring the service's rounding. */
export function lrDimsFor(h: number, w: number, scale: number): [number, number] {
  const round_half_up = (x: number) => Math.floor(x + 0.5);
  return [Math.max(1, round_half_up(h / scale)), Math.max(1, round_half_up(w / scale))];
}
