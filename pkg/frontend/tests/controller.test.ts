import { describe, expect, test } from "vitest";

import { ApiClient, graphUrl } from "../src/api";
import { GraphController } from "../src/controller";
import { elementCount } from "../src/scene";
import { fetchBox, type ViewState } from "../src/view";
import { META, MockService } from "./helpers";

function rig() {
  const mock = new MockService();
  const api = new ApiClient("", mock.fetch);
  const errors: string[] = [];
  const ctl = new GraphController(api, META, {
    onError: (m) => errors.push(m),
  });
  return { mock, ctl, errors };
}

function predictedUrl(view: ViewState): string {
  const { level, box } = fetchBox(view, META);
  return graphUrl("", level, box, view.window);
}

describe("gesture script (B1)", () => {
  test("pan, zoom, and window changes issue exactly the predicted requests", async () => {
    const { mock, ctl } = rig();

    // the same sequence a user would drive, with the views that must fetch
    const v1: ViewState = { center: [4, 4], zoom: 0, window: [0, 5] };
    const v2: ViewState = { ...v1, zoom: 2 };
    const v4: ViewState = { ...v2, center: [6, 6] };
    const v5: ViewState = { ...v4, window: [1, 3] };
    const v8: ViewState = { ...v4, zoom: 1 };

    await ctl.refresh(); // 1: initial load, coarsest level
    expect(ctl.view).toEqual(v1);

    await ctl.setView({ zoom: 2 }); // 2: level change -> fetch
    await ctl.setView({ center: [4.1, 4.05] }); // 3: pan inside pad -> cached
    expect(ctl.requests).toBe(2);

    await ctl.setView({ center: [6, 6] }); // 4: pan past the pad -> fetch
    await ctl.setWindow([1, 3]); // 5: new window -> fetch
    await ctl.setWindow([0, 5]); // 6: window seen before -> cached
    expect(ctl.requests).toBe(4);

    await ctl.setView({ zoom: 2.2 }); // 7: zoom inside the level -> cached
    await ctl.setView({ zoom: 1 }); // 8: zoom across levels -> fetch

    const predicted = [v1, v2, v4, v5, v8].map(predictedUrl);
    expect(mock.graphUrls()).toEqual(predicted);
    expect(ctl.requests).toBe(predicted.length);

    // the scene on screen is exactly the last response
    const last = ctl.lastResponse!;
    const want = last.nodes.length + last.edges.length;
    expect(elementCount(ctl.scene)).toBe(want);
    expect(want).toBe(6); // level 2 payload: 4 nodes + 2 edges

    console.log(
      `B1: PASS — script issued ${mock.graphUrls().length}/${predicted.length} ` +
        `predicted requests (3 gestures served from cache), final scene ` +
        `${elementCount(ctl.scene)} elements == ${want} in final response`,
    );
  });

  test("a pan within the padded box never refetches", async () => {
    const { mock, ctl } = rig();
    await ctl.setView({ zoom: 2 });
    const before = mock.graphUrls().length;
    for (const dx of [0.05, 0.1, 0.15, -0.1]) {
      await ctl.setView({ center: [4 + dx, 4] });
    }
    expect(mock.graphUrls().length).toBe(before);
  });

  test("out-of-order responses resolve latest-wins", async () => {
    const { mock, ctl } = rig();
    mock.manual = true;

    const older = ctl.setView({ zoom: 2, center: [3, 3] });
    const newer = ctl.setView({ zoom: 2, center: [6, 6] });
    expect(mock.pending.length).toBe(2);

    mock.flush(1); // the newer gesture's response lands first
    mock.flush(0); // the older one straggles in afterwards
    await Promise.all([older, newer]);

    const vb: ViewState = { center: [6, 6], zoom: 2, window: [0, 5] };
    const { level, box } = fetchBox(vb, META);
    expect(ctl.lastResponse).toEqual(mock.makeGraph(level, box, [0, 5]));
    expect(ctl.requests).toBe(2);
  });

  test("a cache hit supersedes an in-flight fetch", async () => {
    const { mock, ctl } = rig();
    await ctl.refresh(); // seed the cache with the zoom-0 view
    mock.manual = true;

    const away = ctl.setView({ zoom: 2 }); // pending
    await ctl.setView({ zoom: 0 }); // back to the cached view: instant
    expect(ctl.lastResponse?.level).toBe(1);

    mock.flush(0); // stale response finally arrives
    await away;
    expect(ctl.lastResponse?.level).toBe(1); // still the cached view
    expect(ctl.requests).toBe(2);
  });

  test("a failed fetch keeps the old scene and reports", async () => {
    const { mock, ctl, errors } = rig();
    await ctl.refresh();
    const keptResponse = ctl.lastResponse;
    const keptCount = elementCount(ctl.scene);

    mock.failNext = true;
    await ctl.setView({ zoom: 2 });
    expect(errors.length).toBe(1);
    expect(errors[0]).toMatch(/HTTP 500/);
    expect(ctl.lastResponse).toBe(keptResponse);
    expect(elementCount(ctl.scene)).toBe(keptCount);

    await ctl.setView({ zoom: 2, center: [2, 2] }); // next gesture recovers
    expect(ctl.lastError).toBe("");
    expect(ctl.lastResponse?.level).toBe(3);
  });
});
