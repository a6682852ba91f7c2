/** Typed access to the snapshot query service. Field names mirror the wire
 * format exactly, so responses pass through untouched. */

export type Meta = {
  v: number;
  grid: {
    region: [number, number, number, number];
    levels: number;
    base_cell_arcsec: number;
    growth: number;
  };
  levels: number;
  bucketing: { t0: number; width: number };
  max_bucket: number;
  provenance: Record<string, unknown>;
  counts: { nodes?: number; edges?: number };
};

export type GraphNode = {
  id: number;
  lon: number;
  lat: number;
  count: number;
  users: number | null;
  avg_tt: number;
  rank: number;
  /** destination shipped only so an arc has both endpoints */
  ctx?: boolean;
};

export type GraphEdge = { s: number; d: number; count: number; avg_tt: number };

export type GraphResponse = {
  v: number;
  level: number;
  bbox: number[];
  window: [number, number];
  truncated: boolean;
  nodes: GraphNode[];
  edges: GraphEdge[];
};

export type NodeDetail = {
  t: "n";
  l: number;
  id: number;
  lon: number;
  lat: number;
  c: number;
  u: number | null;
  tt: number;
  tb: [number, number][];
  rank: number;
};

/** Narrow view of fetch so tests can hand in a recording fake. */
export type FetchLike = (
  url: string,
  init?: { signal?: AbortSignal },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export function graphUrl(
  base: string,
  level: number,
  bbox: number[],
  window: [number, number],
): string {
  const p = new URLSearchParams();
  p.set("level", String(level));
  p.set("bbox", bbox.join(","));
  p.set("from", String(window[0]));
  p.set("to", String(window[1]));
  return `${base}/api/graph?${p.toString()}`;
}

export class ApiClient {
  constructor(
    private base = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async get<T>(url: string, signal?: AbortSignal): Promise<T> {
    const r = await this.fetchFn(url, { signal });
    if (!r.ok) throw new Error(`HTTP ${r.status} for ${url}`);
    return (await r.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.get<Meta>(`${this.base}/api/meta`);
  }

  graph(
    level: number,
    bbox: number[],
    window: [number, number],
    signal?: AbortSignal,
  ): Promise<GraphResponse> {
    return this.get<GraphResponse>(graphUrl(this.base, level, bbox, window), signal);
  }

  node(level: number, cell: number): Promise<NodeDetail> {
    return this.get<NodeDetail>(`${this.base}/api/node/${level}/${cell}`);
  }
}
