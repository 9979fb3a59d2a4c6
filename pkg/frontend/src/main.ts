import { Explorer } from "./app.js";
import { httpTransport } from "./client.js";
import { FrameSink } from "./scheduler.js";
import { ViewState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get("service") ?? "http://127.0.0.1:8080";
  const image = el<HTMLImageElement>("frame");
  const status = el<HTMLDivElement>("status");
  const sliderBox = el<HTMLDivElement>("sliders");
  let lastUrl: string | null = null;

  const sink: FrameSink = {
    onFrame(blob: Blob, state: ViewState, preview: boolean): void {
      const url = URL.createObjectURL(blob);
      image.onload = () => {
        if (lastUrl) URL.revokeObjectURL(lastUrl);
        lastUrl = url;
      };
      image.src = url; // swap is atomic: src only changes on a complete blob
      status.textContent =
        `az ${state.azimuth.toFixed(1)}  el ${state.elevation.toFixed(1)}  ` +
        `r ${state.radius.toFixed(2)}  [${state.params.map((v) => v.toFixed(3)).join(", ")}]` +
        (preview ? "  (preview)" : "");
      status.classList.remove("error");
    },
    onError(message: string): void {
      status.textContent = `render error: ${message}`;
      status.classList.add("error"); // non-modal; last good frame stays
    },
  };

  status.textContent = `connecting to ${serviceUrl} ...`;
  const explorer = await Explorer.create(httpTransport(serviceUrl), sink);

  for (const [i, spec] of explorer.sliders().entries()) {
    const row = document.createElement("label");
    row.className = "slider-row";
    const title = document.createElement("span");
    title.textContent = `${spec.name} [${spec.lo} .. ${spec.hi}]`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(spec.lo);
    slider.max = String(spec.hi);
    slider.step = String((spec.hi - spec.lo) / 200 || 1);
    slider.value = String(spec.value);
    const value = document.createElement("code");
    value.textContent = Number(spec.value).toFixed(3);
    slider.addEventListener("input", () => {
      value.textContent = Number(slider.value).toFixed(3);
      explorer.setParam(i, Number(slider.value), false);
    });
    slider.addEventListener("change", () => explorer.setParam(i, Number(slider.value), true));
    row.append(title, slider, value);
    sliderBox.append(row);
  }

  const resolution = el<HTMLSelectElement>("resolution");
  resolution.addEventListener("change", () => explorer.setResolution(Number(resolution.value)));

  let last: { x: number; y: number } | null = null;
  image.addEventListener("pointerdown", (ev) => {
    image.setPointerCapture(ev.pointerId);
    explorer.beginDrag();
    last = { x: ev.clientX, y: ev.clientY };
  });
  image.addEventListener("pointermove", (ev) => {
    if (!last) return;
    explorer.drag(ev.clientX - last.x, ev.clientY - last.y);
    last = { x: ev.clientX, y: ev.clientY };
  });
  const stop = (ev: PointerEvent) => {
    if (!last) return;
    last = null;
    image.releasePointerCapture(ev.pointerId);
    explorer.endDrag();
  };
  image.addEventListener("pointerup", stop);
  image.addEventListener("pointercancel", stop);
  image.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    explorer.wheel(ev.deltaY);
  }, { passive: false });
}

boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) {
    status.textContent = `failed to start: ${err instanceof Error ? err.message : err}`;
    status.classList.add("error");
  }
});
