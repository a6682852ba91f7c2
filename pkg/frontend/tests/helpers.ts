/** A scripted stand-in for the query service: records every request URL,
 * answers deterministically from the URL alone, and can hold responses back
 * so tests control resolution order. */

import type {
  FetchLike,
  GraphEdge,
  GraphNode,
  GraphResponse,
  Meta,
  NodeDetail,
} from "../src/api";

export const META: Meta = {
  v: 1,
  grid: { region: [0, 0, 8, 8], levels: 3, base_cell_arcsec: 900, growth: 2 },
  levels: 3,
  bucketing: { t0: 0, width: 3600 },
  max_bucket: 5,
  provenance: {},
  counts: { nodes: 10, edges: 4 },
};

type Pending = {
  url: string;
  settle: () => void;
};

export class MockService {
  urls: string[] = [];
  /** when true, responses wait until flush() releases them */
  manual = false;
  failNext = false;
  pending: Pending[] = [];

  graphUrls(): string[] {
    return this.urls.filter((u) => u.includes("/api/graph"));
  }

  fetch: FetchLike = (url) => {
    this.urls.push(url);
    if (this.failNext) {
      this.failNext = false;
      return Promise.resolve({
        ok: false,
        status: 500,
        json: async () => ({ error: "boom" }),
      });
    }
    if (!this.manual) {
      const body = this.route(url);
      return Promise.resolve({ ok: true, status: 200, json: async () => body });
    }
    return new Promise((resolve) => {
      this.pending.push({
        url,
        settle: () => {
          const body = this.route(url);
          resolve({ ok: true, status: 200, json: async () => body });
        },
      });
    });
  };

  /** Release the i-th held request (issue order). */
  flush(i: number): void {
    const p = this.pending[i];
    if (!p) throw new Error(`no pending request #${i}`);
    p.settle();
  }

  route(url: string): unknown {
    const u = new URL(url, "http://mock");
    if (u.pathname === "/api/meta") return META;
    if (u.pathname === "/api/graph") {
      const level = Number(u.searchParams.get("level"));
      const bbox = (u.searchParams.get("bbox") ?? "").split(",").map(Number);
      const window: [number, number] = [
        Number(u.searchParams.get("from")),
        Number(u.searchParams.get("to")),
      ];
      return this.makeGraph(level, bbox, window);
    }
    const m = u.pathname.match(/^\/api\/node\/(\d+)\/(\d+)$/);
    if (m) return this.makeNode(Number(m[1]), Number(m[2]));
    throw new Error(`mock has no route for ${url}`);
  }

  /** level+2 nodes and `level` chained edges, spread across the asked box */
  makeGraph(
    level: number,
    bbox: number[],
    window: [number, number],
  ): GraphResponse {
    const n = level + 2;
    const [w, s, e, nn] = bbox;
    const nodes: GraphNode[] = Array.from({ length: n }, (_, i) => ({
      id: level * 1000 + i,
      lon: w + ((i + 1) * (e - w)) / (n + 1),
      lat: s + ((i + 1) * (nn - s)) / (n + 1),
      count: 10 * (i + 1),
      users: i % 2 === 0 ? 5 + i : null,
      avg_tt: 60 + i,
      rank: i / n,
    }));
    const edges: GraphEdge[] = Array.from({ length: level }, (_, i) => ({
      s: level * 1000 + i,
      d: level * 1000 + i + 1,
      count: 7 * (i + 1),
      avg_tt: 90 + i,
    }));
    return { v: 1, level, bbox, window, truncated: false, nodes, edges };
  }

  makeNode(level: number, cell: number): NodeDetail {
    return {
      t: "n",
      l: level,
      id: cell,
      lon: 1.2345678,
      lat: 2.3456789,
      c: 42,
      u: cell % 2 === 0 ? null : 17,
      tt: 4200,
      tb: [
        [0, 10],
        [2, 20],
        [3, 12],
      ],
      rank: 0.87,
    };
  }
}
