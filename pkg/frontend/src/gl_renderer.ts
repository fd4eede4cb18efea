/** WebGL2 splat renderer.
 *
 * Splat attributes live in float data textures; the only per-instance
 * attribute is the splat id, re-uploaded each frame in back-to-front
 * order (CPU or worker sort), and instanced screen-space quads composite
 * with painter's blending.  The GLSL projection mirrors the software
 * path: affine chain into metric camera space, relative-rotation on the
 * covariance, perspective Jacobian, +0.3 dilation, q <= 60 kernel cutoff
 * and the 0.999 opacity clamp. */

import { composeRigid, invertRigid, mat3Mul, Mat3, Vec3, splitRigid } from "./linalg.js";
import { CameraFile, SplatData } from "./parser.js";

const TEX_WIDTH = 1024;

const VERTEX_SHADER = `#version 300 es
precision highp float;
precision highp sampler2D;

layout(location = 0) in vec2 corner;     // quad corner in [-1, 1]
layout(location = 1) in float splatId;   // sorted, back to front

uniform sampler2D uPosition;    // xyz
uniform sampler2D uCovDiag;     // c00, c11, c22
uniform sampler2D uCovOff;      // c01, c02, c12
uniform sampler2D uColor;       // rgb, opacity
uniform mat3 uAffine;
uniform vec3 uAffineT;
uniform mat3 uRelRot;
uniform vec4 uIntrinsics;       // fx, fy, cx, cy
uniform vec2 uViewport;
uniform float uQCut;

out vec2 vDelta;
out vec4 vColor;
flat out vec3 vConic;

vec4 fetch(sampler2D tex, int id) {
  return texelFetch(tex, ivec2(id % ${TEX_WIDTH}, id / ${TEX_WIDTH}), 0);
}

void main() {
  int id = int(splatId);
  vec3 center = fetch(uPosition, id).xyz;
  vec3 t = uAffine * center + uAffineT;
  if (t.z <= 1e-4) { gl_Position = vec4(0.0, 0.0, 2.0, 1.0); return; }

  vec3 d = fetch(uCovDiag, id).xyz;
  vec3 o = fetch(uCovOff, id).xyz;
  mat3 sigma = mat3(d.x, o.x, o.y,
                    o.x, d.y, o.z,
                    o.y, o.z, d.z);
  mat3 sigmaCam = uRelRot * sigma * transpose(uRelRot);

  float fx = uIntrinsics.x, fy = uIntrinsics.y;
  // J rows as column-major GLSL: J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
  vec3 j0 = vec3(fx / t.z, 0.0, -fx * t.x / (t.z * t.z));
  vec3 j1 = vec3(0.0, fy / t.z, -fy * t.y / (t.z * t.z));
  float a = dot(j0, sigmaCam * j0) + 0.3;
  float b = dot(j0, sigmaCam * j1);
  float c = dot(j1, sigmaCam * j1) + 0.3;
  float det = a * c - b * b;
  vConic = vec3(c / det, -b / det, a / det);

  vec2 centerPx = vec2(fx * t.x / t.z + uIntrinsics.z,
                       fy * t.y / t.z + uIntrinsics.w);
  vec2 halfSize = sqrt(uQCut * vec2(a, c));
  vDelta = corner * halfSize;
  vColor = fetch(uColor, id);

  vec2 px = centerPx + vDelta;
  vec2 ndc = vec2(px.x / uViewport.x * 2.0 - 1.0,
                  1.0 - px.y / uViewport.y * 2.0);
  gl_Position = vec4(ndc, 0.0, 1.0);
}
`;

const FRAGMENT_SHADER = `#version 300 es
precision highp float;

in vec2 vDelta;
in vec4 vColor;
flat in vec3 vConic;
uniform float uQCut;
out vec4 fragColor;

void main() {
  float q = vConic.x * vDelta.x * vDelta.x
          + 2.0 * vConic.y * vDelta.x * vDelta.y
          + vConic.z * vDelta.y * vDelta.y;
  if (q > uQCut) discard;
  float alpha = min(vColor.a * exp(-0.5 * q), 0.999);
  fragColor = vec4(vColor.rgb * alpha, alpha);
}
`;

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type);
  if (!shader) throw new Error("cannot create shader");
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

/** View-dependent quantities shared by the sort and the uniforms. */
export function viewChain(data: SplatData, target: CameraFile): {
  affine: Mat3;
  affineT: Vec3;
  relRot: Mat3;
} {
  const srcNdc = {
    fx: (2 * data.camera.fx) / data.sourceWidth,
    fy: (2 * data.camera.fy) / data.sourceHeight,
    cx: (2 * data.camera.cx) / data.sourceWidth - 1,
    cy: (2 * data.camera.cy) / data.sourceHeight - 1,
  };
  const src = splitRigid(data.camera.extrinsics);
  const tgt = splitRigid(target.extrinsics);
  const rel = composeRigid(tgt, invertRigid(src.r, src.t));
  const kinv = new Float64Array([
    1 / srcNdc.fx, 0, -srcNdc.cx / srcNdc.fx,
    0, 1 / srcNdc.fy, -srcNdc.cy / srcNdc.fy,
    0, 0, 1,
  ]);
  return { affine: mat3Mul(rel.r, kinv), affineT: rel.t, relRot: rel.r };
}

/** Back-to-front order of visible splats, ties by index (mirrors the
 * primary renderer's canonical sort, reversed for painter blending). */
export function sortBackToFront(
  data: SplatData,
  target: CameraFile,
): Float32Array {
  const { affine, affineT } = viewChain(data, target);
  const n = data.count;
  const depths = new Float64Array(n);
  const idx: number[] = [];
  for (let i = 0; i < n; i++) {
    const x = data.positions[i * 3];
    const y = data.positions[i * 3 + 1];
    const z = data.positions[i * 3 + 2];
    const tz = affine[6] * x + affine[7] * y + affine[8] * z + affineT[2];
    depths[i] = tz;
    if (tz > 1e-4) idx.push(i);
  }
  idx.sort((p, q) => depths[q] - depths[p] || p - q);
  return new Float32Array(idx);
}

export class GlRenderer {
  private program: WebGLProgram;
  private vao: WebGLVertexArrayObject;
  private idBuffer: WebGLBuffer;
  lastDrawnSplats = 0;

  constructor(
    private gl: WebGL2RenderingContext,
    private data: SplatData,
  ) {
    if (!gl.getExtension("EXT_color_buffer_float")) {
      // Not strictly required (we only sample), but flags odd drivers.
    }
    const program = gl.createProgram();
    if (!program) throw new Error("cannot create program");
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERTEX_SHADER));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAGMENT_SHADER));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;

    const n = data.count;
    const rows = Math.ceil(n / TEX_WIDTH);
    const texData = (fill: (i: number, out: Float32Array, at: number) => void, comps: number) => {
      const arr = new Float32Array(TEX_WIDTH * rows * comps);
      for (let i = 0; i < n; i++) fill(i, arr, i * comps);
      return arr;
    };

    const makeTexture = (unit: number, comps: number, arr: Float32Array) => {
      const tex = gl.createTexture();
      gl.activeTexture(gl.TEXTURE0 + unit);
      gl.bindTexture(gl.TEXTURE_2D, tex);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
      const format = comps === 4 ? gl.RGBA : gl.RGB;
      const internal = comps === 4 ? gl.RGBA32F : gl.RGB32F;
      gl.texImage2D(
        gl.TEXTURE_2D, 0, internal, TEX_WIDTH, rows, 0, format, gl.FLOAT, arr,
      );
      return tex;
    };

    // Covariance in camera-aligned metric axes (precomputed once).
    const covDiag = new Float32Array(TEX_WIDTH * rows * 3);
    const covOff = new Float32Array(TEX_WIDTH * rows * 3);
    for (let i = 0; i < n; i++) {
      let w = data.rotations[i * 4];
      let x = data.rotations[i * 4 + 1];
      let y = data.rotations[i * 4 + 2];
      let z = data.rotations[i * 4 + 3];
      const qn = Math.hypot(w, x, y, z);
      w /= qn; x /= qn; y /= qn; z /= qn;
      const r = [
        1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
      ];
      const s = [
        data.scales[i * 3] ** 2,
        data.scales[i * 3 + 1] ** 2,
        data.scales[i * 3 + 2] ** 2,
      ];
      const entry = (a: number, b: number) =>
        r[a * 3] * s[0] * r[b * 3] +
        r[a * 3 + 1] * s[1] * r[b * 3 + 1] +
        r[a * 3 + 2] * s[2] * r[b * 3 + 2];
      covDiag[i * 3] = entry(0, 0);
      covDiag[i * 3 + 1] = entry(1, 1);
      covDiag[i * 3 + 2] = entry(2, 2);
      covOff[i * 3] = entry(0, 1);
      covOff[i * 3 + 1] = entry(0, 2);
      covOff[i * 3 + 2] = entry(1, 2);
    }

    makeTexture(0, 3, texData((i, out, at) => {
      out[at] = data.positions[i * 3];
      out[at + 1] = data.positions[i * 3 + 1];
      out[at + 2] = data.positions[i * 3 + 2];
    }, 3));
    makeTexture(1, 3, covDiag);
    makeTexture(2, 3, covOff);
    makeTexture(3, 4, texData((i, out, at) => {
      out[at] = data.colors[i * 3];
      out[at + 1] = data.colors[i * 3 + 1];
      out[at + 2] = data.colors[i * 3 + 2];
      out[at + 3] = data.opacities[i];
    }, 4));

    const vao = gl.createVertexArray();
    if (!vao) throw new Error("cannot create VAO");
    this.vao = vao;
    gl.bindVertexArray(vao);

    const quad = new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]);
    const quadBuf = gl.createBuffer();
    gl.bindBuffer(gl.ARRAY_BUFFER, quadBuf);
    gl.bufferData(gl.ARRAY_BUFFER, quad, gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);

    const idBuf = gl.createBuffer();
    if (!idBuf) throw new Error("cannot create id buffer");
    this.idBuffer = idBuf;
    gl.bindBuffer(gl.ARRAY_BUFFER, idBuf);
    gl.bufferData(gl.ARRAY_BUFFER, n * 4, gl.DYNAMIC_DRAW);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 1, gl.FLOAT, false, 0, 0);
    gl.vertexAttribDivisor(1, 1);
    gl.bindVertexArray(null);

    gl.useProgram(program);
    const loc = (name: string) => gl.getUniformLocation(program, name);
    gl.uniform1i(loc("uPosition"), 0);
    gl.uniform1i(loc("uCovDiag"), 1);
    gl.uniform1i(loc("uCovOff"), 2);
    gl.uniform1i(loc("uColor"), 3);
    gl.uniform1f(loc("uQCut"), 60.0);
  }

  draw(target: CameraFile, width: number, height: number): void {
    const gl = this.gl;
    const order = sortBackToFront(this.data, target);
    this.lastDrawnSplats = order.length;

    gl.viewport(0, 0, width, height);
    gl.clearColor(0, 0, 0, 0);
    gl.clear(gl.COLOR_BUFFER_BIT);
    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);
    // Premultiplied painter blending: out = src + (1 - alpha) * dst.
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);

    gl.useProgram(this.program);
    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.idBuffer);
    gl.bufferSubData(gl.ARRAY_BUFFER, 0, order);

    const { affine, affineT, relRot } = viewChain(this.data, target);
    const loc = (name: string) => gl.getUniformLocation(this.program, name);
    // GLSL mat3 uniforms are column-major.
    gl.uniformMatrix3fv(loc("uAffine"), false, [
      affine[0], affine[3], affine[6],
      affine[1], affine[4], affine[7],
      affine[2], affine[5], affine[8],
    ]);
    gl.uniform3f(loc("uAffineT"), affineT[0], affineT[1], affineT[2]);
    gl.uniformMatrix3fv(loc("uRelRot"), false, [
      relRot[0], relRot[3], relRot[6],
      relRot[1], relRot[4], relRot[7],
      relRot[2], relRot[5], relRot[8],
    ]);
    gl.uniform4f(loc("uIntrinsics"), target.fx, target.fy, target.cx, target.cy);
    gl.uniform2f(loc("uViewport"), width, height);

    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, order.length);
    gl.bindVertexArray(null);
  }
}
