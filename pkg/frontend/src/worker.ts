/** Background worker: splat parsing and per-frame depth sorting off the
 * UI thread. */

import { sortBackToFront } from "./gl_renderer.js";
import { SplatData, parseSplat } from "./parser.js";

interface ParseRequest {
  type: "parse";
  buffer: ArrayBuffer;
}

interface SortRequest {
  type: "sort";
  data: SplatData;
  target: import("./parser.js").CameraFile;
  requestId: number;
}

export type WorkerRequest = ParseRequest | SortRequest;

self.onmessage = (event: MessageEvent<WorkerRequest>) => {
  const msg = event.data;
  if (msg.type === "parse") {
    try {
      const data = parseSplat(msg.buffer);
      (self as unknown as Worker).postMessage(
        { type: "parsed", data },
        [
          data.positions.buffer,
          data.scales.buffer,
          data.rotations.buffer,
          data.colors.buffer,
          data.opacities.buffer,
        ],
      );
    } catch (err) {
      (self as unknown as Worker).postMessage({
        type: "error",
        message: String(err),
      });
    }
  } else if (msg.type === "sort") {
    const order = sortBackToFront(msg.data, msg.target);
    (self as unknown as Worker).postMessage(
      { type: "sorted", order, requestId: msg.requestId },
      [order.buffer],
    );
  }
};
