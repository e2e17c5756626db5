// Viewer page logic: one frame on screen, six-axis pose steering, and an
// explicit save.  Buttons and keyboard both funnel into the same adjust
// call, and the page holds no document state of its own — everything shown
// is (re)loaded from the service, so a browser reload always lands on the
// server's current truth.

import { makeClient } from "./api.js";
import { Axis } from "./pose.js";
import {
  AdjustKind,
  Direction,
  SessionState,
  adjustPose,
  openSession,
  renderOverlay,
  saveGroundTruth,
} from "./session.js";

const client = makeClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const frameSelect = el<HTMLSelectElement>("frame-select");
const overlayImg = el<HTMLImageElement>("overlay");
const opacityInput = el<HTMLInputElement>("opacity");
const opacityReadout = el<HTMLSpanElement>("opacity-readout");
const rotStepInput = el<HTMLInputElement>("rot-step");
const transStepInput = el<HTMLInputElement>("trans-step");
const revisionReadout = el<HTMLSpanElement>("revision");
const statusLine = el<HTMLSpanElement>("status");
const saveButton = el<HTMLButtonElement>("save");
const poseDump = el<HTMLPreElement>("pose-dump");

let session: SessionState | null = null;
let renderBusy = false;
let renderQueued = false;
let overlayUrl: string | null = null;

function setStatus(text: string, isError = false) {
  statusLine.textContent = text;
  statusLine.className = isError ? "status error" : "status";
}

function showState() {
  if (!session) {
    return;
  }
  revisionReadout.textContent = String(session.revision);
  const t = session.pose.translation_mm;
  const rows = session.pose.rotation
    .map((r) => r.map((v) => v.toFixed(6).padStart(10)).join(" "))
    .join("\n");
  poseDump.textContent =
    `t (mm): [${t.map((v) => v.toFixed(3)).join(", ")}]\nR:\n${rows}`;
}

/** Re-render the overlay for the current pose; coalesces bursts of edits. */
async function refreshOverlay() {
  if (!session) {
    return;
  }
  if (renderBusy) {
    renderQueued = true;
    return;
  }
  renderBusy = true;
  try {
    const png = await renderOverlay(client, session);
    const url = URL.createObjectURL(new Blob([png], { type: "image/png" }));
    if (overlayUrl) {
      URL.revokeObjectURL(overlayUrl);
    }
    overlayUrl = url;
    overlayImg.src = url;
  } catch (err) {
    setStatus(`render failed: ${err instanceof Error ? err.message : err}`, true);
  } finally {
    renderBusy = false;
    if (renderQueued) {
      renderQueued = false;
      void refreshOverlay();
    }
  }
}

function adopt(next: SessionState) {
  session = next;
  showState();
  void refreshOverlay();
}

async function loadFrame(id: string) {
  session = null;
  setStatus(`loading pose for ${id}…`);
  try {
    adopt(await openSession(client, id, currentSettings()));
    setStatus("ready");
  } catch (err) {
    setStatus(`failed to load pose: ${err instanceof Error ? err.message : err}`, true);
  }
}

/** The page controls own opacity and step sizes; fold them into the session
 * right before each use so edits always honour the latest inputs. */
function currentSettings() {
  return {
    opacity: Number(opacityInput.value),
    rotStepDeg: Number(rotStepInput.value) || 0,
    transStepMm: Number(transStepInput.value) || 0,
  };
}

async function steer(kind: AdjustKind, axis: Axis, direction: Direction) {
  if (!session) {
    return;
  }
  try {
    const result = await adjustPose(
      client,
      { ...session, ...currentSettings() },
      kind,
      axis,
      direction,
    );
    adopt(result.state);
    setStatus(
      result.applied
        ? "ready"
        : "pose changed elsewhere; showing the server's current pose",
      !result.applied,
    );
  } catch (err) {
    setStatus(`edit rejected: ${err instanceof Error ? err.message : err}`, true);
  }
}

function wireSteeringButtons() {
  for (const axis of ["x", "y", "z"] as Axis[]) {
    for (const [suffix, dir] of [["plus", 1], ["minus", -1]] as const) {
      el<HTMLButtonElement>(`rot-${axis}-${suffix}`).addEventListener("click", () =>
        void steer("rotate", axis, dir),
      );
      el<HTMLButtonElement>(`trans-${axis}-${suffix}`).addEventListener("click", () =>
        void steer("translate", axis, dir),
      );
    }
  }
}

function wireKeyboard() {
  // Arrows steer x/y, PageUp/PageDown steer z; hold Shift to rotate
  // instead of translate.
  const mapping: Record<string, [Axis, Direction]> = {
    ArrowLeft: ["x", -1],
    ArrowRight: ["x", 1],
    ArrowUp: ["y", -1],
    ArrowDown: ["y", 1],
    PageUp: ["z", 1],
    PageDown: ["z", -1],
  };
  document.addEventListener("keydown", (ev) => {
    const hit = mapping[ev.key];
    if (!hit || ev.target instanceof HTMLInputElement) {
      return;
    }
    ev.preventDefault();
    const [axis, direction] = hit;
    void steer(ev.shiftKey ? "rotate" : "translate", axis, direction);
  });
}

async function saveCurrent() {
  if (!session) {
    return;
  }
  try {
    const res = await saveGroundTruth(client, session);
    setStatus(`saved revision ${res.revision} to ${res.path}`);
  } catch (err) {
    setStatus(`save failed: ${err instanceof Error ? err.message : err}`, true);
  }
}

async function main() {
  wireSteeringButtons();
  wireKeyboard();
  saveButton.addEventListener("click", () => void saveCurrent());
  opacityInput.addEventListener("input", () => {
    opacityReadout.textContent = Number(opacityInput.value).toFixed(2);
    if (session) {
      session = { ...session, opacity: Number(opacityInput.value) };
    }
    void refreshOverlay();
  });
  frameSelect.addEventListener("change", () => void loadFrame(frameSelect.value));

  setStatus("listing frames…");
  try {
    const frames = await client.listFrames();
    if (frames.length === 0) {
      setStatus("no frames on the server", true);
      return;
    }
    for (const f of frames) {
      const opt = document.createElement("option");
      opt.value = f.id;
      opt.textContent = f.id;
      frameSelect.appendChild(opt);
    }
    await loadFrame(frames[0].id);
  } catch (err) {
    setStatus(`failed to list frames: ${err instanceof Error ? err.message : err}`, true);
  }
}

void main();
