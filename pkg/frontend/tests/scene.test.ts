import { describe, expect, test } from "vitest";

import type { GraphResponse } from "../src/api";
import {
  buildScene,
  DEFAULT_STYLE,
  edgeWidth,
  elementCount,
  hitTest,
  nodeRadius,
} from "../src/scene";

const identity = (lon: number, lat: number): [number, number] => [lon, lat];

function resp(): GraphResponse {
  return {
    v: 1,
    level: 2,
    bbox: [0, 0, 10, 10],
    window: [0, 3],
    truncated: false,
    nodes: [
      { id: 1, lon: 1, lat: 1, count: 9, users: 4, avg_tt: 60, rank: 0.5 },
      { id: 2, lon: 5, lat: 1, count: 100, users: null, avg_tt: 30, rank: 0.9 },
      { id: 3, lon: 5, lat: 5, count: 0, users: 1, avg_tt: 0, rank: 0.1, ctx: true },
    ],
    edges: [
      { s: 1, d: 2, count: 50, avg_tt: 45 },
      { s: 2, d: 3, count: 3, avg_tt: 20 },
    ],
  };
}

describe("scene construction", () => {
  test("element count is nodes plus edges", () => {
    const scene = buildScene(resp(), identity, DEFAULT_STYLE);
    expect(scene.nodes.length).toBe(3);
    expect(scene.edges.length).toBe(2);
    expect(elementCount(scene)).toBe(5);
  });

  test("marks follow the size formulas and keep their ids", () => {
    const scene = buildScene(resp(), identity, DEFAULT_STYLE);
    const n1 = scene.nodes[0];
    expect(n1.id).toBe(1);
    expect(n1.r).toBeCloseTo(nodeRadius(9, 1), 12);
    expect(nodeRadius(9, 1)).toBeCloseTo(2 + 0.9 * 3, 12);
    const e1 = scene.edges[0];
    expect([e1.s, e1.d]).toEqual([1, 2]);
    expect(e1.w).toBeCloseTo(edgeWidth(50, 1), 12);
    expect(edgeWidth(50, 1)).toBeCloseTo(0.5 + 0.7 * Math.log1p(50), 12);
  });

  test("style scales sizes linearly", () => {
    const big = buildScene(resp(), identity, { ...DEFAULT_STYLE, nodeScale: 2, widthScale: 3 });
    const base = buildScene(resp(), identity, DEFAULT_STYLE);
    expect(big.nodes[0].r).toBeCloseTo(base.nodes[0].r * 2, 12);
    expect(big.edges[0].w).toBeCloseTo(base.edges[0].w * 3, 12);
  });

  test("context nodes carry the flag", () => {
    const scene = buildScene(resp(), identity, DEFAULT_STYLE);
    expect(scene.nodes.map((n) => n.ctx)).toEqual([false, false, true]);
  });

  test("projection places elements", () => {
    const shift = (lon: number, lat: number): [number, number] => [lon * 10, 100 - lat];
    const scene = buildScene(resp(), shift, DEFAULT_STYLE);
    expect([scene.nodes[0].x, scene.nodes[0].y]).toEqual([10, 99]);
    expect([scene.edges[0].x2, scene.edges[0].y2]).toEqual([50, 99]);
  });

  test("an edge without both endpoints is dropped", () => {
    const r = resp();
    r.edges.push({ s: 1, d: 999, count: 1, avg_tt: 1 });
    const scene = buildScene(r, identity, DEFAULT_STYLE);
    expect(scene.edges.length).toBe(2);
  });
});

describe("hit testing", () => {
  // a screen-scale projection: radii are in pixels, so targets must be too
  const toPx = (lon: number, lat: number): [number, number] => [lon * 100, lat * 100];
  const scene = buildScene(resp(), toPx, DEFAULT_STYLE);

  test("a click inside a node returns it", () => {
    const hit = hitTest(scene, 100, 100);
    expect(hit?.kind).toBe("node");
    expect(hit && "id" in hit ? hit.id : -1).toBe(1);
  });

  test("the topmost of overlapping nodes wins", () => {
    const r = resp();
    r.nodes.push({ id: 4, lon: 1, lat: 1, count: 9, users: 0, avg_tt: 0, rank: 0 });
    const hit = hitTest(buildScene(r, toPx, DEFAULT_STYLE), 100, 100);
    expect(hit && "id" in hit ? hit.id : -1).toBe(4);
  });

  test("a click on the chord of an edge returns it", () => {
    const hit = hitTest(scene, 300, 100); // midway between nodes 1 and 2
    expect(hit?.kind).toBe("edge");
    expect(hit && "s" in hit ? [hit.s, hit.d] : []).toEqual([1, 2]);
  });

  test("empty space returns nothing", () => {
    expect(hitTest(scene, 950, 950)).toBeNull();
  });
});
