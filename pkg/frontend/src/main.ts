/** Browser entry point: load a bundle (manifest + splat), steer the
 * camera, and draw frames with stats overlay.
 *
 * Controls: drag = orbit, shift-drag = pan, wheel = dolly, WASD/QE =
 * free-fly, R = reset to the source pose, H = toggle the headbox clamp,
 * E = export the current pose as a camera file. */

import { ViewerState, createRenderPath } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function loadFromFiles(manifestFile: File, splatFile: File): Promise<ViewerState> {
  const manifestText = await manifestFile.text();
  const buffer = await splatFile.arrayBuffer();
  return new ViewerState(manifestText, buffer);
}

function download(name: string, text: string): void {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(new Blob([text], { type: "application/json" }));
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

function start(state: ViewerState): void {
  const canvas = el<HTMLCanvasElement>("view");
  const overlay = el<HTMLDivElement>("overlay");
  const banner = el<HTMLDivElement>("banner");

  const path = createRenderPath(state, canvas);
  if (path.banner) {
    banner.textContent = path.banner;
    banner.style.display = "block";
  }

  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    panning = e.shiftKey;
    lastX = e.clientX;
    lastY = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointerup", () => (dragging = false));
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
    if (panning) {
      state.camera.pan(-dx * 0.002, -dy * 0.002);
    } else {
      state.camera.rotate(dx * 0.005, dy * 0.005);
    }
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    state.camera.dolly(e.deltaY * 0.0005);
  });
  window.addEventListener("keydown", (e) => {
    const step = 0.02;
    switch (e.key.toLowerCase()) {
      case "w": state.camera.fly(step, 0, 0); break;
      case "s": state.camera.fly(-step, 0, 0); break;
      case "a": state.camera.fly(0, -step, 0); break;
      case "d": state.camera.fly(0, step, 0); break;
      case "q": state.camera.fly(0, 0, -step); break;
      case "z": state.camera.fly(0, 0, step); break;
      case "r": state.camera.reset(); break;
      case "h":
        state.camera.headbox.enabled = !state.camera.headbox.enabled;
        break;
      case "e": download("camera.json", state.camera.exportJson() + "\n"); break;
    }
  });

  const frame = () => {
    path.draw();
    const pose = state.camera.pose();
    overlay.textContent =
      `${state.stats.backend} | ${state.stats.fps.toFixed(1)} fps | ` +
      `${state.stats.drawnSplats}/${state.count} splats | ` +
      `headbox ${state.camera.headbox.enabled ? "on" : "off"} | ` +
      `pos (${pose.position.map((v) => v.toFixed(3)).join(", ")})`;
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

el<HTMLButtonElement>("load").addEventListener("click", async () => {
  const manifestInput = el<HTMLInputElement>("manifest");
  const splatInput = el<HTMLInputElement>("splat");
  const banner = el<HTMLDivElement>("banner");
  if (!manifestInput.files?.[0] || !splatInput.files?.[0]) {
    banner.textContent = "pick both a manifest.json and a scene.splat";
    banner.style.display = "block";
    return;
  }
  try {
    const state = await loadFromFiles(manifestInput.files[0], splatInput.files[0]);
    banner.style.display = "none";
    start(state);
  } catch (err) {
    banner.textContent = String(err);
    banner.style.display = "block";
  }
});
