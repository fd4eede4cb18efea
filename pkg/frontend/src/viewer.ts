/** Viewer state: a loaded bundle, the steerable camera, and render-path
 * dispatch (WebGL2 when available, software compositing otherwise). */

import { SteerableCamera, poseFromCameraFile } from "./camera.js";
import { GlRenderer } from "./gl_renderer.js";
import { ParseError, SplatData, ViewerManifest, parseManifest, parseSplat } from "./parser.js";
import { Frame, frameToRgba, renderSoftware } from "./software_renderer.js";

export interface RenderStats {
  fps: number;
  drawnSplats: number;
  backend: "webgl2" | "software";
}

export class ViewerState {
  readonly data: SplatData;
  readonly manifest: ViewerManifest;
  readonly camera: SteerableCamera;
  stats: RenderStats = { fps: 0, drawnSplats: 0, backend: "software" };
  private frameTimes: number[] = [];

  constructor(manifestText: string, splatBuffer: ArrayBuffer) {
    this.manifest = parseManifest(manifestText);
    this.data = parseSplat(splatBuffer);
    if (this.data.count !== this.manifest.count) {
      throw new ParseError(
        `manifest count ${this.manifest.count} != splat count ${this.data.count}`,
        0,
      );
    }
    const intr = {
      fx: this.data.camera.fx,
      fy: this.data.camera.fy,
      cx: this.data.camera.cx,
      cy: this.data.camera.cy,
    };
    this.camera = new SteerableCamera(
      intr,
      poseFromCameraFile(this.data.camera),
      this.manifest.headboxRadiusMeters,
    );
  }

  get count(): number {
    return this.data.count;
  }

  /** Software-composite the current view (also the no-GPU fallback). */
  renderFrame(width: number, height: number): Frame {
    const frame = renderSoftware(this.data, this.camera.cameraFile(), width, height);
    this.stats.drawnSplats = frame.drawnSplats;
    this.recordFrameTime();
    return frame;
  }

  renderToCanvas(
    ctx: CanvasRenderingContext2D,
    width: number,
    height: number,
  ): void {
    const frame = this.renderFrame(width, height);
    ctx.putImageData(new ImageData(frameToRgba(frame), width, height), 0, 0);
  }

  private recordFrameTime(): void {
    const now = performance.now();
    this.frameTimes.push(now);
    while (this.frameTimes.length > 2 && now - this.frameTimes[0] > 1000) {
      this.frameTimes.shift();
    }
    if (this.frameTimes.length >= 2) {
      const span = now - this.frameTimes[0];
      this.stats.fps = span > 0 ? ((this.frameTimes.length - 1) * 1000) / span : 0;
    }
  }
}

/** Pick the render path for a canvas; falls back to software compositing
 * (with a banner message for the caller to show) when WebGL2 is missing. */
export function createRenderPath(
  state: ViewerState,
  canvas: HTMLCanvasElement,
): { backend: "webgl2" | "software"; draw: () => void; banner?: string } {
  const gl = canvas.getContext("webgl2");
  if (gl) {
    const renderer = new GlRenderer(gl, state.data);
    state.stats.backend = "webgl2";
    return {
      backend: "webgl2",
      draw: () => {
        renderer.draw(state.camera.cameraFile(), canvas.width, canvas.height);
        state.stats.drawnSplats = renderer.lastDrawnSplats;
      },
    };
  }
  state.stats.backend = "software";
  const ctx = canvas.getContext("2d");
  return {
    backend: "software",
    banner: "WebGL2 unavailable: falling back to CPU point compositing",
    draw: () => {
      if (ctx) state.renderToCanvas(ctx, canvas.width, canvas.height);
    },
  };
}
