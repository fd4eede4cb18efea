import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { sortBackToFront } from "../src/gl_renderer.js";
import { parseSplat } from "../src/parser.js";
import { ViewerState } from "../src/viewer.js";

const FIXTURES = join(__dirname, "fixtures");

function loadBuffers() {
  const manifest = readFileSync(join(FIXTURES, "bundle/manifest.json"), "utf-8");
  const buf = readFileSync(join(FIXTURES, "bundle/scene.splat"));
  return {
    manifest,
    splat: buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength),
  };
}

describe("viewer state", () => {
  it("loads the exported bundle and reports the splat count", () => {
    const { manifest, splat } = loadBuffers();
    const state = new ViewerState(manifest, splat);
    expect(state.count).toBe(2048);
    expect(state.camera.headbox.radius).toBe(0.5);
    // Camera starts at the bundled source pose (identity extrinsics here).
    const pose = state.camera.pose();
    expect(Math.hypot(...pose.position)).toBeLessThanOrEqual(1e-12);
  });

  it("refuses to render from a truncated bundle", () => {
    const { manifest, splat } = loadBuffers();
    const cut = splat.slice(0, splat.byteLength - 100);
    expect(() => new ViewerState(manifest, cut)).toThrowError(/file length/);
  });

  it("tracks drawn splat count and fps in the stats", () => {
    const { manifest, splat } = loadBuffers();
    const state = new ViewerState(manifest, splat);
    const frame = state.renderFrame(32, 32);
    expect(frame.drawnSplats).toBe(2048);
    expect(state.stats.drawnSplats).toBe(2048);
    state.renderFrame(32, 32);
    expect(state.stats.fps).toBeGreaterThan(0);
  });

  it("worker-style back-to-front sort is strictly non-increasing in depth", () => {
    const { splat, manifest } = loadBuffers();
    const data = parseSplat(splat);
    const state = new ViewerState(manifest, splat);
    const order = sortBackToFront(data, state.camera.cameraFile());
    expect(order.length).toBe(2048);
    // Identity pose: view depth equals stored z.
    let prev = Infinity;
    for (const id of order) {
      const z = data.positions[id * 3 + 2];
      expect(z).toBeLessThanOrEqual(prev);
      prev = z;
    }
  });
});
