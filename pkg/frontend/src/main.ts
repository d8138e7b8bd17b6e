import { ApiClient, ApiError } from "./api.js";
import {
  SessionView,
  fromResponse,
  toggleLock,
  unlockedIndices,
  usagePercent,
} from "./state.js";
import { compositeOverlay } from "./composite.js";

const api = new ApiClient("");

let view: SessionView | null = null;
let rendering = false;
let lastAction: (() => Promise<void>) | null = null;

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

function showError(message: string) {
  const banner = $("error-banner");
  banner.style.display = "flex";
  $("error-text").textContent = message;
}

function clearError() {
  $("error-banner").style.display = "none";
}

async function guard(action: () => Promise<void>) {
  lastAction = action;
  clearError();
  try {
    await action();
  } catch (err) {
    if (err instanceof ApiError) {
      showError(`${err.code}: ${err.message}`);
    } else {
      showError(String(err));
    }
  }
}

function setView(next: SessionView) {
  view = next;
  window.location.hash = next.id;
  renderGallery();
  renderMeta();
  renderResults();
}

function renderGallery() {
  const gallery = $("gallery");
  gallery.textContent = "";
  if (!view) return;
  for (const t of view.templates) {
    const card = document.createElement("div");
    card.className = "template-card" + (t.locked ? " locked" : "");
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${t.thumbnail}`;
    img.title = t.provenance;
    img.alt = t.provenance;
    card.appendChild(img);

    const bar = document.createElement("div");
    bar.className = "usage-bar";
    const fill = document.createElement("div");
    fill.className = "usage-fill";
    fill.style.width = `${usagePercent(view, t.index)}%`;
    bar.appendChild(fill);
    card.appendChild(bar);

    const lockBtn = document.createElement("button");
    lockBtn.textContent = t.locked ? "Unlock" : "Lock";
    lockBtn.onclick = () => {
      if (view) {
        view = toggleLock(view, t.index);
        renderGallery();
      }
    };
    card.appendChild(lockBtn);

    const label = document.createElement("span");
    label.className = "provenance";
    label.textContent = t.provenance;
    card.appendChild(label);
    gallery.appendChild(card);
  }
}

function renderMeta() {
  if (!view) return;
  $("session-id").textContent = view.id;
  $("seed-lineage").textContent = JSON.stringify(view.seedLineage);
  $("content-info").textContent = view.contentSize
    ? `content ${view.contentSize.width}x${view.contentSize.height}`
    : "no content uploaded";
}

function renderResults() {
  if (!view || view.artifacts.length === 0) return;
  const refined = $("pane-refined") as HTMLImageElement;
  const collage = $("pane-collage") as HTMLImageElement;
  const bust = `?t=${Date.now()}`;
  refined.src = api.artifactUrl(view.id, "refined") + bust;
  collage.src = api.artifactUrl(view.id, "collage") + bust;
  refined.onload = () => void drawOverlay();
}

async function loadImageData(url: string): Promise<ImageData> {
  const img = new Image();
  img.src = url;
  await img.decode();
  const canvas = document.createElement("canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

async function drawOverlay() {
  if (!view || view.artifacts.length === 0) return;
  const opacity = Number(($("opacity") as HTMLInputElement).value) / 100;
  $("opacity-label").textContent = opacity.toFixed(2);
  try {
    const [base, weights] = await Promise.all([
      loadImageData(api.artifactUrl(view.id, "refined")),
      loadImageData(api.artifactUrl(view.id, "weights")),
    ]);
    const canvas = $("pane-overlay") as HTMLCanvasElement;
    canvas.width = base.width;
    canvas.height = base.height;
    const blended = compositeOverlay(
      new Uint8ClampedArray(base.data),
      new Uint8ClampedArray(weights.data),
      opacity,
    );
    const ctx = canvas.getContext("2d")!;
    const out = ctx.createImageData(base.width, base.height);
    out.data.set(blended);
    ctx.putImageData(out, 0, 0);
  } catch (err) {
    showError(`overlay: ${String(err)}`);
  }
}

async function refreshAssets() {
  const assets = await api.listAssets();
  const ckpt = $("checkpoint") as HTMLSelectElement;
  const corpus = $("corpus") as HTMLSelectElement;
  ckpt.textContent = "";
  corpus.textContent = "";
  for (const c of assets.checkpoints) {
    const opt = document.createElement("option");
    opt.value = c.name;
    opt.textContent = `${c.name} (${c.patch_w}px${c.guided ? ", guided" : ""})`;
    ckpt.appendChild(opt);
  }
  for (const c of assets.corpora) {
    const opt = document.createElement("option");
    opt.value = c.name;
    opt.textContent = `${c.name} (${c.images} images)`;
    corpus.appendChild(opt);
  }
}

function nextSeed(): number {
  const input = $("seed") as HTMLInputElement;
  const seed = Number(input.value) || 0;
  input.value = String(seed + 1);
  return seed;
}

function wire() {
  $("create").onclick = () =>
    guard(async () => {
      const resp = await api.createSession({
        checkpoint: ($("checkpoint") as HTMLSelectElement).value,
        corpus: ($("corpus") as HTMLSelectElement).value,
        k: Number(($("k") as HTMLInputElement).value) || 1,
        seed: nextSeed(),
      });
      setView(fromResponse(resp));
    });

  $("resample").onclick = () =>
    guard(async () => {
      if (!view) return;
      const resp = await api.resample(view.id, unlockedIndices(view), nextSeed());
      setView(fromResponse(resp, view));
    });

  $("render").onclick = () =>
    guard(async () => {
      if (!view || rendering) return;
      rendering = true;
      const btn = $("render") as HTMLButtonElement;
      btn.disabled = true;
      try {
        const resp = await api.infer(view.id);
        setView(fromResponse(resp, view));
      } finally {
        rendering = false;
        btn.disabled = false;
      }
    });

  ($("content-file") as HTMLInputElement).onchange = (ev) =>
    guard(async () => {
      const input = ev.target as HTMLInputElement;
      if (!view || !input.files?.length) return;
      const file = input.files[0];
      ($("content-preview") as HTMLImageElement).src = URL.createObjectURL(file);
      const resp = await api.uploadContent(view.id, file);
      setView(fromResponse(resp, view));
    });

  ($("opacity") as HTMLInputElement).oninput = () => void drawOverlay();
  $("retry").onclick = () => {
    if (lastAction) void guard(lastAction);
  };
}

async function boot() {
  wire();
  await guard(refreshAssets);
  const sid = window.location.hash.slice(1);
  if (sid) {
    await guard(async () => {
      const resp = await api.getSession(sid);
      setView(fromResponse(resp));
    });
  }
}

void boot();
