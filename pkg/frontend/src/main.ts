/** Browser entry point: wires canvas, pointer gestures, and the control
 * strip to the graph controller. Everything data-shaped lives in the other
 * modules; this file is DOM plumbing. */

import { ApiClient } from "./api";
import { GraphController } from "./controller";
import { hitTest, type SceneEdge, type SceneNode } from "./scene";
import { edgePanel, nodePanel, type PanelData } from "./panel";
import { graticule, makeProjector, paint, type Projector } from "./render";
import { clampBox, viewportBox, levelForZoom, type Box } from "./view";

const canvas = document.getElementById("map") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const panel = document.getElementById("panel")!;
const levelBadge = document.getElementById("level-badge")!;
const fromInput = document.getElementById("bucket-from") as HTMLInputElement;
const toInput = document.getElementById("bucket-to") as HTMLInputElement;
const applyBtn = document.getElementById("apply-window") as HTMLButtonElement;
const overrideSel = document.getElementById("level-override") as HTMLSelectElement;
const nodeScale = document.getElementById("node-scale") as HTMLInputElement;
const widthScale = document.getElementById("width-scale") as HTMLInputElement;

const api = new ApiClient("");

function showBanner(message: string): void {
  banner.textContent = message;
  banner.classList.add("visible");
  setTimeout(() => banner.classList.remove("visible"), 4000);
}

function fitCanvas(): void {
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  ctx.setTransform(devicePixelRatio, 0, 0, devicePixelRatio, 0, 0);
}

async function boot(): Promise<void> {
  const meta = await api.meta();
  const region = meta.grid.region as Box;

  let proj: Projector;
  const controller = new GraphController(api, meta, {
    onScene: () => repaint(),
    onError: showBanner,
  });

  function currentBox(): Box {
    return clampBox(viewportBox(controller.view, region), region);
  }

  function reproject(): void {
    proj = makeProjector(currentBox(), canvas.clientWidth, canvas.clientHeight);
    controller.project = proj.toScreen;
  }

  function repaint(): void {
    ctx.clearRect(0, 0, canvas.clientWidth, canvas.clientHeight);
    graticule(ctx, proj, region);
    paint(
      ctx,
      controller.scene,
      {
        node: controller.style.nodeColor,
        ctx: controller.style.ctxColor,
        edge: controller.style.edgeColor,
      },
      canvas.clientWidth,
      canvas.clientHeight,
    );
    const lvl = levelForZoom(
      controller.view.zoom,
      meta.levels,
      controller.view.levelOverride,
    );
    levelBadge.textContent =
      `L${lvl}/${meta.levels} · z${controller.view.zoom.toFixed(1)}` +
      (controller.lastResponse?.truncated ? " · truncated" : "");
  }

  // ---- controls -------------------------------------------------------

  fromInput.value = "0";
  fromInput.min = toInput.min = "0";
  fromInput.max = toInput.max = String(Math.max(meta.max_bucket, 0));
  toInput.value = String(Math.max(meta.max_bucket, 0));
  applyBtn.addEventListener("click", () => {
    void controller.setWindow([
      Number(fromInput.value) || 0,
      Number(toInput.value) || 0,
    ]);
  });

  overrideSel.add(new Option("auto", ""));
  for (let l = 1; l <= meta.levels; l++) overrideSel.add(new Option(`L${l}`, String(l)));
  overrideSel.addEventListener("change", () => {
    const v = overrideSel.value;
    void gesture({ levelOverride: v === "" ? undefined : Number(v) });
  });

  nodeScale.addEventListener("input", () => {
    controller.restyle({ nodeScale: Number(nodeScale.value) });
  });
  widthScale.addEventListener("input", () => {
    controller.restyle({ widthScale: Number(widthScale.value) });
  });

  // ---- gestures -------------------------------------------------------

  async function gesture(patch: Parameters<GraphController["setView"]>[0]) {
    controller.view = { ...controller.view, ...patch };
    reproject();
    await controller.refresh();
    repaint();
  }

  let dragging = false;
  let lastXY: [number, number] | null = null;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastXY = [ev.offsetX, ev.offsetY];
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !lastXY) return;
    const a = proj.toWorld(lastXY[0], lastXY[1]);
    const b = proj.toWorld(ev.offsetX, ev.offsetY);
    lastXY = [ev.offsetX, ev.offsetY];
    const [cx, cy] = controller.view.center;
    void gesture({ center: [cx + (a[0] - b[0]), cy + (a[1] - b[1])] });
  });
  canvas.addEventListener("pointerup", (ev) => {
    if (!dragging) return;
    dragging = false;
    const moved = lastXY && Math.hypot(ev.offsetX - lastXY[0], ev.offsetY - lastXY[1]) > 3;
    lastXY = null;
    if (!moved) handleClick(ev.offsetX, ev.offsetY);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const dz = -ev.deltaY * 0.0018;
    const zoom = Math.min(meta.levels + 1, Math.max(0, controller.view.zoom + dz));
    // keep the point under the cursor fixed while zooming
    const before = proj.toWorld(ev.offsetX, ev.offsetY);
    const scale = Math.pow(2, controller.view.zoom - zoom);
    const [cx, cy] = controller.view.center;
    const center: [number, number] = [
      before[0] + (cx - before[0]) * scale,
      before[1] + (cy - before[1]) * scale,
    ];
    void gesture({ zoom, center });
  }, { passive: false });

  // ---- inspection -----------------------------------------------------

  function renderPanel(data: PanelData): void {
    const rows = data.fields
      .map(([k, v]) => `<div class="row"><span>${k}</span><b>${v}</b></div>`)
      .join("");
    const peak = Math.max(1, ...data.bars);
    const bars = data.bars
      .map((v) => `<i style="height:${Math.round((v / peak) * 36) + 2}px" title="${v}"></i>`)
      .join("");
    panel.innerHTML =
      `<h3>${data.title}</h3>${rows}` +
      (data.bars.length ? `<div class="spark">${bars}</div>` : "");
    panel.classList.add("visible");
  }

  function handleClick(x: number, y: number): void {
    const hit = hitTest(controller.scene, x, y, 3);
    if (!hit) {
      panel.classList.remove("visible");
      return;
    }
    if (hit.kind === "edge") {
      const e = hit as SceneEdge;
      const raw = controller.lastResponse?.edges.find(
        (k) => k.s === e.s && k.d === e.d,
      );
      if (raw) renderPanel(edgePanel(raw));
      return;
    }
    const n = hit as SceneNode;
    controller
      .inspect(n.id)
      .then((detail) => renderPanel(nodePanel(detail, controller.view.window)))
      .catch((err) => showBanner(String(err)));
  }

  window.addEventListener("resize", () => {
    fitCanvas();
    reproject();
    controller.restyle({}); // rebuild with the new projection, no fetch
    repaint();
  });

  fitCanvas();
  reproject();
  await controller.refresh();
  repaint();
}

void boot().catch((err) => showBanner(`failed to start: ${err}`));
