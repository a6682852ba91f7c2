/** Viewport math: zoom-to-level mapping and the padded, quantized fetch
 * boxes that make the response cache effective while panning. */

import type { Meta } from "./api";

/** [west, south, east, north] in degrees */
export type Box = [number, number, number, number];
export type Window = [number, number];

export type ViewState = {
  center: [number, number];
  zoom: number;
  window: Window;
  levelOverride?: number;
};

// zoom 0 shows the whole region, which is level-1 detail; each doubling of
// magnification steps one level down because cell edges shrink by the same
// factor.
export const Z0 = -1;

export const PAD_FRACTION = 0.2;

export function levelForZoom(
  zoom: number,
  levels: number,
  override?: number,
): number {
  if (override !== undefined) {
    return Math.min(levels, Math.max(1, Math.round(override)));
  }
  return Math.min(levels, Math.max(1, Math.round(zoom - Z0)));
}

export function cellLenDeg(grid: Meta["grid"], level: number): number {
  return (grid.base_cell_arcsec * Math.pow(grid.growth, grid.levels - level)) / 3600;
}

/** The box a view shows: the region scaled by 2^-zoom around the center. */
export function viewportBox(view: ViewState, region: Box): Box {
  const k = Math.pow(2, view.zoom);
  const hw = (region[2] - region[0]) / k / 2;
  const hh = (region[3] - region[1]) / k / 2;
  const [cx, cy] = view.center;
  return [cx - hw, cy - hh, cx + hw, cy + hh];
}

export function padBox(box: Box, frac = PAD_FRACTION): Box {
  const dx = (box[2] - box[0]) * frac;
  const dy = (box[3] - box[1]) * frac;
  return [box[0] - dx, box[1] - dy, box[2] + dx, box[3] + dy];
}

export function clampBox(box: Box, region: Box): Box {
  return [
    Math.max(box[0], region[0]),
    Math.max(box[1], region[1]),
    Math.min(box[2], region[2]),
    Math.min(box[3], region[3]),
  ];
}

/** Snap outward to multiples of `quantum` so nearby pans share a key. */
export function quantizeBox(box: Box, quantum: number): Box {
  const q = quantum > 0 ? quantum : 1e-9;
  return [
    Math.floor(box[0] / q) * q,
    Math.floor(box[1] / q) * q,
    Math.ceil(box[2] / q) * q,
    Math.ceil(box[3] / q) * q,
  ];
}

export function boxContains(outer: Box, inner: Box): boolean {
  return (
    outer[0] <= inner[0] &&
    outer[1] <= inner[1] &&
    outer[2] >= inner[2] &&
    outer[3] >= inner[3]
  );
}

/** Level plus the box actually requested for a view: viewport padded 20%,
 * clamped to the region, snapped to whole cells at that level. */
export function fetchBox(
  view: ViewState,
  meta: Meta,
): { level: number; viewport: Box; box: Box } {
  const region = meta.grid.region;
  const level = levelForZoom(view.zoom, meta.levels, view.levelOverride);
  const viewport = clampBox(viewportBox(view, region), region);
  const padded = clampBox(padBox(viewportBox(view, region)), region);
  const box = quantizeBox(padded, cellLenDeg(meta.grid, level));
  return { level, viewport, box };
}

export function cacheKey(level: number, box: Box, window: Window): string {
  const b = box.map((v) => v.toFixed(6)).join(",");
  return `${level}|${b}|${window[0]}-${window[1]}`;
}
