// Browser console for interactive editing: start a session from a seed or an
// uploaded PNG, submit grammar instructions, and inspect the returned edit,
// mask overlay, attention weights and routing path.

import { ApiClient, ApiError } from "./api.js";
import { SessionView } from "./state.js";
import { blendMask } from "./overlay.js";
import { suggest } from "./grammar.js";

const DISPLAY_SCALE = 6;
const SESSION_KEY = "timgan-session-id";

const api = new ApiClient();
const view = new SessionView();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const startScreen = el<HTMLDivElement>("start-screen");
const editorScreen = el<HTMLDivElement>("editor-screen");
const seedInput = el<HTMLInputElement>("seed-input");
const seedButton = el<HTMLButtonElement>("seed-button");
const uploadInput = el<HTMLInputElement>("upload-input");
const startError = el<HTMLDivElement>("start-error");
const canvas = el<HTMLCanvasElement>("scene-canvas");
const instructionInput = el<HTMLInputElement>("instruction-input");
const suggestions = el<HTMLDataListElement>("instruction-suggestions");
const submitButton = el<HTMLButtonElement>("submit-button");
const sampleCheckbox = el<HTMLInputElement>("sample-checkbox");
const undoButton = el<HTMLButtonElement>("undo-button");
const editError = el<HTMLDivElement>("edit-error");
const stepCounter = el<HTMLSpanElement>("step-counter");
const overlayCheckbox = el<HTMLInputElement>("overlay-checkbox");
const opacitySlider = el<HTMLInputElement>("opacity-slider");
const chipsWhere = el<HTMLDivElement>("chips-where");
const chipsHow = el<HTMLDivElement>("chips-how");
const alphaGrid = el<HTMLDivElement>("alpha-grid");
const historyStrip = el<HTMLDivElement>("history-strip");

function loadImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("undecodable image payload"));
    img.src = `data:image/png;base64,${b64}`;
  });
}

function imageToData(img: HTMLImageElement): ImageData {
  const off = document.createElement("canvas");
  off.width = img.naturalWidth;
  off.height = img.naturalHeight;
  const ctx = off.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, off.width, off.height);
}

async function renderCanvas(): Promise<void> {
  const imageB64 = view.currentImage();
  if (imageB64 === null) return;
  const img = await loadImage(imageB64);
  let data = imageToData(img);
  const maskB64 = view.currentMask();
  if (view.overlay.on && maskB64 !== null) {
    const maskImg = await loadImage(maskB64);
    const maskData = imageToData(maskImg);
    data = new ImageData(
      blendMask(data.data, maskData.data, view.overlay.opacity),
      data.width,
      data.height,
    );
  }
  canvas.width = data.width * DISPLAY_SCALE;
  canvas.height = data.height * DISPLAY_SCALE;
  const off = document.createElement("canvas");
  off.width = data.width;
  off.height = data.height;
  off.getContext("2d")!.putImageData(data, 0, 0);
  const ctx = canvas.getContext("2d")!;
  // Nearest-neighbor upscale keeps individual pixels and mask cells legible.
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function renderChips(): void {
  chipsWhere.replaceChildren();
  chipsHow.replaceChildren();
  for (const chip of view.tokenChips()) {
    for (const [target, weight] of [
      [chipsWhere, chip.where],
      [chipsHow, chip.how],
    ] as const) {
      const span = document.createElement("span");
      span.className = "chip";
      span.textContent = chip.token;
      span.title = weight.toFixed(4);
      span.style.backgroundColor = `rgba(38, 108, 217, ${weight})`;
      span.style.fontSize = `${0.8 + 0.8 * weight}em`;
      target.appendChild(span);
    }
  }
}

function renderAlpha(): void {
  alphaGrid.replaceChildren();
  for (const cell of view.alphaCells()) {
    const div = document.createElement("div");
    div.className = "alpha-cell";
    div.title = `layer ${cell.layer}, block ${cell.block}: ${cell.value.toFixed(4)}`;
    div.textContent = cell.value.toFixed(2);
    div.style.backgroundColor = `rgba(217, 108, 26, ${cell.intensity})`;
    alphaGrid.appendChild(div);
  }
}

function renderHistory(): void {
  historyStrip.replaceChildren();
  for (const step of view.steps) {
    const item = document.createElement("figure");
    item.className = "history-item";
    const thumb = document.createElement("img");
    thumb.className = "history-thumb";
    thumb.src = `data:image/png;base64,${step.image_b64}`;
    const caption = document.createElement("figcaption");
    caption.textContent =
      step.step === 0 ? "start" : `${step.step}: ${step.instruction ?? ""}`;
    item.append(thumb, caption);
    historyStrip.appendChild(item);
  }
}

function renderControls(): void {
  undoButton.disabled = !view.undoEnabled;
  submitButton.disabled = !view.canSubmit;
  stepCounter.textContent = String(view.step);
}

async function renderAll(): Promise<void> {
  renderControls();
  renderChips();
  renderAlpha();
  renderHistory();
  await renderCanvas();
}

function showError(target: HTMLDivElement, err: unknown): void {
  target.textContent =
    err instanceof ApiError ? `error ${err.code}: ${err.message}` : String(err);
}

async function enterEditor(): Promise<void> {
  startScreen.hidden = true;
  editorScreen.hidden = false;
  if (view.sessionId !== null) {
    localStorage.setItem(SESSION_KEY, view.sessionId);
  }
  await renderAll();
}

seedButton.addEventListener("click", async () => {
  startError.textContent = "";
  const seed = Number.parseInt(seedInput.value, 10);
  if (!Number.isFinite(seed)) {
    startError.textContent = "seed must be an integer";
    return;
  }
  try {
    const created = await api.createSessionFromSeed(seed);
    view.startSession(created.id, created.image_b64);
    await enterEditor();
  } catch (err) {
    showError(startError, err);
  }
});

uploadInput.addEventListener("change", async () => {
  startError.textContent = "";
  const file = uploadInput.files?.[0];
  if (!file) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  try {
    const created = await api.createSessionFromPng(btoa(binary));
    view.startSession(created.id, created.image_b64);
    await enterEditor();
  } catch (err) {
    showError(startError, err);
  }
});

instructionInput.addEventListener("input", () => {
  suggestions.replaceChildren();
  for (const text of suggest(instructionInput.value)) {
    const option = document.createElement("option");
    option.value = text;
    suggestions.appendChild(option);
  }
});

submitButton.addEventListener("click", async () => {
  editError.textContent = "";
  const text = instructionInput.value.trim();
  if (text === "" || view.sessionId === null || !view.canSubmit) return;
  view.beginEdit();
  renderControls();
  try {
    const resp = await api.edit(view.sessionId, text, sampleCheckbox.checked);
    view.applyEdit(text, resp);
    instructionInput.value = "";
  } catch (err) {
    showError(editError, err);
  } finally {
    view.endEdit();
  }
  await renderAll();
});

undoButton.addEventListener("click", async () => {
  editError.textContent = "";
  if (view.sessionId === null || !view.undoEnabled) return;
  try {
    const resp = await api.undo(view.sessionId);
    view.applyUndo(resp);
  } catch (err) {
    showError(editError, err);
  }
  await renderAll();
});

overlayCheckbox.addEventListener("change", async () => {
  view.overlay.on = overlayCheckbox.checked;
  await renderCanvas();
});

opacitySlider.addEventListener("input", async () => {
  view.overlay.opacity = Number(opacitySlider.value) / 100;
  await renderCanvas();
});

async function restoreFromStorage(): Promise<void> {
  const sid = localStorage.getItem(SESSION_KEY);
  if (sid === null) return;
  try {
    const history = await api.history(sid);
    view.restore(history);
    await enterEditor();
  } catch {
    localStorage.removeItem(SESSION_KEY);
  }
}

void restoreFromStorage();
