/** Canvas painter. Arcs go down first so circles stay clickable; opacity
 * stacking does the work edge bundling would otherwise do. */

import type { Scene } from "./scene";
import type { Box } from "./view";

export type Projector = {
  toScreen: (lon: number, lat: number) => [number, number];
  toWorld: (x: number, y: number) => [number, number];
};

/** Fit a view box into the canvas, letterboxed, y flipped (north up). */
export function makeProjector(
  viewBox: Box,
  width: number,
  height: number,
): Projector {
  const bw = Math.max(viewBox[2] - viewBox[0], 1e-12);
  const bh = Math.max(viewBox[3] - viewBox[1], 1e-12);
  const scale = Math.min(width / bw, height / bh);
  const ox = (width - bw * scale) / 2;
  const oy = (height - bh * scale) / 2;
  return {
    toScreen: (lon, lat) => [
      ox + (lon - viewBox[0]) * scale,
      height - oy - (lat - viewBox[1]) * scale,
    ],
    toWorld: (x, y) => [
      viewBox[0] + (x - ox) / scale,
      viewBox[1] + (height - oy - y) / scale,
    ],
  };
}

function arc(ctx: CanvasRenderingContext2D, x1: number, y1: number, x2: number, y2: number) {
  const mx = (x1 + x2) / 2;
  const my = (y1 + y2) / 2;
  const dx = x2 - x1;
  const dy = y2 - y1;
  // bow perpendicular to the chord, 15% of its length
  const cx = mx - dy * 0.15;
  const cy = my + dx * 0.15;
  ctx.moveTo(x1, y1);
  ctx.quadraticCurveTo(cx, cy, x2, y2);
}

export function graticule(
  ctx: CanvasRenderingContext2D,
  proj: Projector,
  region: Box,
): void {
  ctx.save();
  ctx.strokeStyle = "#2a3240";
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let lon = Math.ceil(region[0]); lon <= region[2]; lon++) {
    const [x1, y1] = proj.toScreen(lon, region[1]);
    const [x2, y2] = proj.toScreen(lon, region[3]);
    ctx.moveTo(x1, y1);
    ctx.lineTo(x2, y2);
  }
  for (let lat = Math.ceil(region[1]); lat <= region[3]; lat++) {
    const [x1, y1] = proj.toScreen(region[0], lat);
    const [x2, y2] = proj.toScreen(region[2], lat);
    ctx.moveTo(x1, y1);
    ctx.lineTo(x2, y2);
  }
  ctx.stroke();
  ctx.restore();
}

export function paint(
  ctx: CanvasRenderingContext2D,
  scene: Scene,
  colors: { node: string; ctx: string; edge: string },
  width: number,
  height: number,
): void {
  if (scene.nodes.length === 0 && scene.edges.length === 0) {
    ctx.save();
    ctx.fillStyle = "#8a93a3";
    ctx.font = "14px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("no data in this view", width / 2, height / 2);
    ctx.restore();
    return;
  }

  ctx.save();
  ctx.globalAlpha = 0.35;
  ctx.strokeStyle = colors.edge;
  ctx.lineCap = "round";
  // group strokes by rounded width: one path per width is far cheaper than
  // one stroke per edge when thousands are on screen
  const byWidth = new Map<number, typeof scene.edges>();
  for (const e of scene.edges) {
    const w = Math.max(0.5, Math.round(e.w * 2) / 2);
    const bucket = byWidth.get(w);
    if (bucket) bucket.push(e);
    else byWidth.set(w, [e]);
  }
  for (const [w, edges] of byWidth) {
    ctx.lineWidth = w;
    ctx.beginPath();
    for (const e of edges) arc(ctx, e.x1, e.y1, e.x2, e.y2);
    ctx.stroke();
  }
  ctx.restore();

  ctx.save();
  for (const n of scene.nodes) {
    ctx.beginPath();
    ctx.arc(n.x, n.y, n.r, 0, Math.PI * 2);
    if (n.ctx) {
      ctx.strokeStyle = colors.ctx;
      ctx.lineWidth = 1;
      ctx.stroke();
    } else {
      ctx.fillStyle = colors.node;
      ctx.globalAlpha = 0.85;
      ctx.fill();
      ctx.globalAlpha = 1;
    }
  }
  ctx.restore();
}
