/** Detail-panel contents for a clicked element. */

import type { GraphEdge, NodeDetail } from "./api";
import type { Window } from "./view";

export type PanelData = {
  title: string;
  fields: [string, string][];
  /** one bar per bucket of the current window, zeros where absent */
  bars: number[];
};

export function sparklineBars(tb: [number, number][], window: Window): number[] {
  const [bf, bt] = window;
  const byBucket = new Map<number, number>();
  for (const [b, c] of tb) byBucket.set(b, (byBucket.get(b) ?? 0) + c);
  const bars: number[] = [];
  for (let b = bf; b <= bt; b++) bars.push(byBucket.get(b) ?? 0);
  return bars;
}

function fmtSeconds(s: number): string {
  if (!isFinite(s) || s <= 0) return "0s";
  if (s < 90) return `${s.toFixed(0)}s`;
  if (s < 5400) return `${(s / 60).toFixed(1)}min`;
  return `${(s / 3600).toFixed(1)}h`;
}

export function nodePanel(detail: NodeDetail, window: Window): PanelData {
  const mass = detail.tb.reduce((acc, [, c]) => acc + c, 0);
  const avg = mass > 0 ? detail.tt / mass : 0;
  return {
    title: `node ${detail.id} @ L${detail.l}`,
    fields: [
      ["visits", String(detail.c)],
      ["distinct users", detail.u === null ? "n/a" : String(detail.u)],
      ["avg travel", fmtSeconds(avg)],
      ["rank", detail.rank.toFixed(2)],
      ["centroid", `${detail.lon.toFixed(5)}, ${detail.lat.toFixed(5)}`],
    ],
    bars: sparklineBars(detail.tb, window),
  };
}

/** Edges carry everything the panel needs in the graph response itself. */
export function edgePanel(edge: GraphEdge): PanelData {
  return {
    title: `flow ${edge.s} → ${edge.d}`,
    fields: [
      ["trips in window", String(edge.count)],
      ["avg travel", fmtSeconds(edge.avg_tt)],
    ],
    bars: [],
  };
}
