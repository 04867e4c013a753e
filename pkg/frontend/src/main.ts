/** Console wiring: upload an image, move per-style sliders, preview the
 * service's result live, keep a history, compare two variants, export. */

import { ApiClient, ServiceError, StyleInfo } from "./client.js";
import { DEFAULT_DEBOUNCE_MS, Debouncer } from "./debounce.js";
import { SyncView, downloadBlob } from "./compare.js";
import { HistoryEntry, SessionState } from "./session.js";

const state = new SessionState();
const client = new ApiClient("");
const debouncer = new Debouncer(DEFAULT_DEBOUNCE_MS);
const view = new SyncView();

let styles: StyleInfo[] = [];
let currentImage: Blob | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

function setControlsEnabled(enabled: boolean): void {
  el<HTMLDivElement>("sliders")
    .querySelectorAll("input")
    .forEach((i) => (i.disabled = !enabled));
  el<HTMLInputElement>("upload").disabled = !enabled;
}

async function loadStyles(): Promise<void> {
  try {
    styles = await client.getStyles();
  } catch (err) {
    setBanner(
      err instanceof ServiceError && err.status === 503
        ? "service has no checkpoint loaded"
        : "service unreachable",
    );
    setControlsEnabled(false);
    el<HTMLButtonElement>("retry").style.display = "inline-block";
    return;
  }
  setBanner(null);
  el<HTMLButtonElement>("retry").style.display = "none";
  state.initStyles(styles.length);
  renderSliders();
  setControlsEnabled(true);
}

function renderSliders(): void {
  const container = el<HTMLDivElement>("sliders");
  container.innerHTML = "";
  styles.forEach((style, i) => {
    const row = document.createElement("label");
    row.className = "slider-row";
    const name = document.createElement("span");
    name.textContent = style.name;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "1";
    input.step = "0.01";
    input.value = String(state.sliders[i]);
    input.addEventListener("input", () => {
      state.setSlider(i, Number(input.value));
      readout.textContent = state.sliders[i].toFixed(2);
      schedulePreview();
    });
    const readout = document.createElement("span");
    readout.className = "readout";
    readout.textContent = state.sliders[i].toFixed(2);
    row.append(name, input, readout);
    container.append(row);
  });
}

function schedulePreview(): void {
  if (!currentImage) return;
  debouncer.schedule(() => void sendPreview());
}

async function sendPreview(): Promise<void> {
  if (!currentImage) return;
  const z = state.currentZ();
  const seq = state.sequencer.issue();
  try {
    const result = await client.enhance(currentImage, z);
    if (!state.recordResult(seq, z, result.blob)) return; // stale
    showPreview(state.latest()!);
    renderHistory();
    if (result.meta) {
      el<HTMLSpanElement>("meta").textContent =
        `${result.meta.inference_ms.toFixed(1)} ms on ${result.meta.model_id}`;
    }
    el<HTMLDivElement>("preview-error").style.display = "none";
  } catch {
    // keep the previous preview; badge the failure
    el<HTMLDivElement>("preview-error").style.display = "block";
  }
}

function showPreview(entry: HistoryEntry): void {
  const img = el<HTMLImageElement>("preview");
  img.src = URL.createObjectURL(entry.blob);
  el<HTMLSpanElement>("preview-z").textContent =
    `z = [${entry.z.map((v) => v.toFixed(2)).join(", ")}]`;
}

function renderHistory(): void {
  const list = el<HTMLDivElement>("history");
  list.innerHTML = "";
  state.history.forEach((entry) => {
    const thumb = document.createElement("img");
    thumb.className = "thumb";
    thumb.src = URL.createObjectURL(entry.blob);
    thumb.title = `z = [${entry.z.map((v) => v.toFixed(2)).join(", ")}]`;
    thumb.addEventListener("click", (ev) => {
      if (ev.shiftKey) {
        state.compareB = entry;
      } else {
        state.compareA = entry;
      }
      renderCompare();
    });
    list.append(thumb);
  });
}

function renderCompare(): void {
  const { compareA: a, compareB: b } = state;
  const wrap = el<HTMLDivElement>("compare");
  wrap.style.display = a && b ? "flex" : "none";
  if (!a || !b) return;
  const left = el<HTMLImageElement>("compare-a");
  const right = el<HTMLImageElement>("compare-b");
  left.src = URL.createObjectURL(a.blob);
  right.src = URL.createObjectURL(b.blob);
  el<HTMLSpanElement>("compare-a-z").textContent =
    `[${a.z.map((v) => v.toFixed(2)).join(", ")}]`;
  el<HTMLSpanElement>("compare-b-z").textContent =
    `[${b.z.map((v) => v.toFixed(2)).join(", ")}]`;
  view.reset();
}

function wireCompareControls(): void {
  view.attach(el<HTMLImageElement>("compare-a"));
  view.attach(el<HTMLImageElement>("compare-b"));
  for (const pane of ["compare-a-pane", "compare-b-pane"]) {
    const node = el<HTMLDivElement>(pane);
    node.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      view.zoom(ev.deltaY < 0 ? 1.15 : 1 / 1.15, ev.offsetX, ev.offsetY);
    });
    let dragging = false;
    node.addEventListener("pointerdown", () => (dragging = true));
    node.addEventListener("pointerup", () => (dragging = false));
    node.addEventListener("pointerleave", () => (dragging = false));
    node.addEventListener("pointermove", (ev) => {
      if (dragging) view.pan(ev.movementX, ev.movementY);
    });
  }
  el<HTMLButtonElement>("export-a").addEventListener("click", () => {
    if (state.compareA) downloadBlob(state.compareA.blob, "variant-a.png");
  });
  el<HTMLButtonElement>("export-b").addEventListener("click", () => {
    if (state.compareB) downloadBlob(state.compareB.blob, "variant-b.png");
  });
}

export function boot(): void {
  el<HTMLInputElement>("upload").addEventListener("change", (ev) => {
    const files = (ev.target as HTMLInputElement).files;
    if (files && files.length) {
      currentImage = files[0];
      el<HTMLImageElement>("original").src =
        URL.createObjectURL(currentImage);
      schedulePreview();
    }
  });
  el<HTMLInputElement>("normalize").addEventListener("change", (ev) => {
    state.normalize = (ev.target as HTMLInputElement).checked;
    schedulePreview();
  });
  el<HTMLButtonElement>("retry").addEventListener("click",
                                                  () => void loadStyles());
  wireCompareControls();
  void loadStyles();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
