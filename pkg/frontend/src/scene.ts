/** Pure scene construction from a graph response. Painting is in render.ts;
 * everything here is testable without a canvas. Elements keep their data
 * ids so hit-testing maps a pixel back to a node or flow. */

import type { GraphResponse } from "./api";

export type Style = {
  nodeScale: number;
  widthScale: number;
  nodeColor: string;
  ctxColor: string;
  edgeColor: string;
};

export const DEFAULT_STYLE: Style = {
  nodeScale: 1,
  widthScale: 1,
  nodeColor: "#ffb454",
  ctxColor: "#6b7a8f",
  edgeColor: "#4aa3ff",
};

export type SceneNode = {
  kind: "node";
  id: number;
  x: number;
  y: number;
  r: number;
  count: number;
  ctx: boolean;
};

export type SceneEdge = {
  kind: "edge";
  s: number;
  d: number;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  w: number;
  count: number;
};

export type Scene = { nodes: SceneNode[]; edges: SceneEdge[] };

export type Project = (lon: number, lat: number) => [number, number];

// area tracks count -> radius grows with sqrt
export function nodeRadius(count: number, scale: number): number {
  return (2 + 0.9 * Math.sqrt(count)) * scale;
}

// heavy tails: log keeps the fat flows readable without drowning the thin
export function edgeWidth(count: number, scale: number): number {
  return (0.5 + 0.7 * Math.log1p(count)) * scale;
}

export function buildScene(
  resp: GraphResponse,
  project: Project,
  style: Style,
): Scene {
  const pos = new Map<number, [number, number]>();
  const nodes: SceneNode[] = resp.nodes.map((n) => {
    const [x, y] = project(n.lon, n.lat);
    pos.set(n.id, [x, y]);
    return {
      kind: "node",
      id: n.id,
      x,
      y,
      r: nodeRadius(n.count, style.nodeScale),
      count: n.count,
      ctx: n.ctx === true,
    };
  });
  const edges: SceneEdge[] = [];
  for (const e of resp.edges) {
    const a = pos.get(e.s);
    const b = pos.get(e.d);
    if (!a || !b) continue; // service contract ships both endpoints
    edges.push({
      kind: "edge",
      s: e.s,
      d: e.d,
      x1: a[0],
      y1: a[1],
      x2: b[0],
      y2: b[1],
      w: edgeWidth(e.count, style.widthScale),
      count: e.count,
    });
  }
  return { nodes, edges };
}

export function elementCount(scene: Scene): number {
  return scene.nodes.length + scene.edges.length;
}

function segDist(px: number, py: number, e: SceneEdge): number {
  const dx = e.x2 - e.x1;
  const dy = e.y2 - e.y1;
  const len2 = dx * dx + dy * dy;
  const t = len2 === 0 ? 0 : Math.max(0, Math.min(1, ((px - e.x1) * dx + (py - e.y1) * dy) / len2));
  const qx = e.x1 + t * dx;
  const qy = e.y1 + t * dy;
  return Math.hypot(px - qx, py - qy);
}

/** Topmost element under a point: nodes win over edges, later-drawn over
 * earlier. Tolerance pads small targets for clickability. */
export function hitTest(
  scene: Scene,
  x: number,
  y: number,
  slack = 2,
): SceneNode | SceneEdge | null {
  for (let i = scene.nodes.length - 1; i >= 0; i--) {
    const n = scene.nodes[i];
    if (Math.hypot(x - n.x, y - n.y) <= n.r + slack) return n;
  }
  for (let i = scene.edges.length - 1; i >= 0; i--) {
    const e = scene.edges[i];
    if (segDist(x, y, e) <= e.w / 2 + slack) return e;
  }
  return null;
}
