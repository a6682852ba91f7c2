/** Gesture-to-fetch orchestration.
 *
 * Rules the rest of the app leans on:
 *  - a view change fetches only when no cached response already covers the
 *    viewport at the wanted level and window;
 *  - overlapping fetches resolve latest-wins, older ones are abandoned;
 *  - restyling reuses the last response and never touches the network;
 *  - a failed fetch keeps the previous scene and surfaces a banner message.
 */

import type { ApiClient, GraphResponse, Meta, NodeDetail } from "./api";
import {
  boxContains,
  cacheKey,
  fetchBox,
  levelForZoom,
  type Box,
  type ViewState,
  type Window,
} from "./view";
import {
  buildScene,
  DEFAULT_STYLE,
  type Project,
  type Scene,
  type Style,
} from "./scene";

type CacheEntry = {
  level: number;
  box: Box;
  window: Window;
  resp: GraphResponse;
};

const CACHE_CAP = 64;

export type ControllerEvents = {
  onScene?: (scene: Scene, resp: GraphResponse) => void;
  onError?: (message: string) => void;
};

const identity: Project = (lon, lat) => [lon, lat];

export class GraphController {
  view: ViewState;
  style: Style = { ...DEFAULT_STYLE };
  scene: Scene = { nodes: [], edges: [] };
  lastResponse: GraphResponse | null = null;
  lastError = "";
  /** total /api/graph requests issued (cache misses) */
  requests = 0;

  private cache = new Map<string, CacheEntry>();
  private gen = 0;
  private inflight: AbortController | null = null;
  /** current screen projection; swapped on resize/pan before rebuilds */
  project: Project;

  constructor(
    private api: ApiClient,
    private meta: Meta,
    private events: ControllerEvents = {},
    project?: Project,
  ) {
    const r = meta.grid.region;
    this.project = project ?? identity;
    this.view = {
      center: [(r[0] + r[2]) / 2, (r[1] + r[3]) / 2],
      zoom: 0,
      window: [0, Math.max(meta.max_bucket, 0)],
    };
  }

  async setView(patch: Partial<ViewState>): Promise<void> {
    this.view = { ...this.view, ...patch };
    await this.refresh();
  }

  async setWindow(window: Window): Promise<void> {
    await this.setView({ window });
  }

  /** Client-side only: rebuild the scene from the response already held. */
  restyle(patch: Partial<Style>): void {
    this.style = { ...this.style, ...patch };
    if (this.lastResponse) this.apply(this.lastResponse);
  }

  async refresh(): Promise<void> {
    const { level, viewport, box } = fetchBox(this.view, this.meta);
    const window = this.view.window;

    const cached = this.lookup(level, viewport, box, window);
    if (cached) {
      this.gen++; // a cache hit also supersedes anything in flight
      this.inflight?.abort();
      this.inflight = null;
      this.apply(cached.resp);
      return;
    }

    this.inflight?.abort();
    const ac = new AbortController();
    this.inflight = ac;
    const gen = ++this.gen;
    this.requests++;
    try {
      const resp = await this.api.graph(level, box, window, ac.signal);
      if (gen !== this.gen) return; // a newer gesture took over
      this.remember({ level, box, window, resp });
      this.apply(resp);
    } catch (err) {
      if (gen !== this.gen || ac.signal.aborted) return;
      this.lastError = err instanceof Error ? err.message : String(err);
      this.events.onError?.(this.lastError);
      // stale scene stays up — better an old picture than a blank one
    }
  }

  async inspect(cell: number): Promise<NodeDetail> {
    const level = levelForZoom(
      this.view.zoom,
      this.meta.levels,
      this.view.levelOverride,
    );
    return this.api.node(level, cell);
  }

  private lookup(
    level: number,
    viewport: Box,
    box: Box,
    window: Window,
  ): CacheEntry | undefined {
    const exact = this.cache.get(cacheKey(level, box, window));
    if (exact) return exact;
    for (const entry of this.cache.values()) {
      if (
        entry.level === level &&
        entry.window[0] === window[0] &&
        entry.window[1] === window[1] &&
        boxContains(entry.box, viewport)
      ) {
        return entry;
      }
    }
    return undefined;
  }

  private remember(entry: CacheEntry): void {
    const key = cacheKey(entry.level, entry.box, entry.window);
    this.cache.delete(key);
    this.cache.set(key, entry);
    while (this.cache.size > CACHE_CAP) {
      const oldest = this.cache.keys().next().value;
      if (oldest === undefined) break;
      this.cache.delete(oldest);
    }
  }

  private apply(resp: GraphResponse): void {
    this.lastResponse = resp;
    this.lastError = "";
    this.scene = buildScene(resp, this.project, this.style);
    this.events.onScene?.(this.scene, resp);
  }
}
