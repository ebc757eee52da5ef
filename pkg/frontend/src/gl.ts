/**
 * WebGL2 splat renderer: alpha-blended instanced quads, covariance projected
 * to a screen-space conic in the vertex shader, Gaussian falloff in the
 * fragment shader. Buffers arrive pre-sorted back-to-front from the worker.
 */

import { CameraPose } from "./selection.js";

const VS = `#version 300 es
precision highp float;
layout(location = 0) in vec2 corner;      // quad corner in sigma units
layout(location = 1) in vec3 center;      // world position
layout(location = 2) in vec3 covA;        // sigma xx, xy, xz
layout(location = 3) in vec3 covB;        // sigma yy, yz, zz
layout(location = 4) in vec4 rgba;

uniform mat3 uRot;        // world -> camera
uniform vec3 uTrans;
uniform vec2 uFocal;      // fx, fy
uniform vec2 uCenter;     // cx, cy
uniform vec2 uViewport;   // width, height

out vec2 vSigmaPos;
out vec4 vColor;

void main() {
  vec3 pc = uRot * center + uTrans;
  if (pc.z < 0.01) { gl_Position = vec4(0.0, 0.0, 2.0, 1.0); return; }

  mat3 S = mat3(covA.x, covA.y, covA.z,
                covA.y, covB.x, covB.y,
                covA.z, covB.y, covB.z);
  float iz = 1.0 / pc.z;
  float iz2 = iz * iz;
  // Jacobian of (fx X/Z + cx, fy Y/Z + cy)
  mat3 J = mat3(uFocal.x * iz, 0.0, 0.0,
                0.0, uFocal.y * iz, 0.0,
                -uFocal.x * pc.x * iz2, -uFocal.y * pc.y * iz2, 0.0);
  mat3 W = uRot;
  mat3 C = J * W * S * transpose(W) * transpose(J);
  float a = C[0][0] + 0.3;
  float b = C[1][0];
  float c = C[1][1] + 0.3;

  // eigen-decomposition of the 2x2 screen covariance
  float mid = 0.5 * (a + c);
  float rad = sqrt(max(0.0, mid * mid - (a * c - b * b)));
  float l1 = mid + rad;
  float l2 = max(mid - rad, 0.01);
  vec2 e1 = normalize(vec2(b, l1 - a));
  if (abs(b) < 1e-9) e1 = vec2(1.0, 0.0);
  vec2 e2 = vec2(-e1.y, e1.x);
  float extent = 3.33;
  vec2 axis1 = e1 * sqrt(l1) * extent;
  vec2 axis2 = e2 * sqrt(l2) * extent;

  vec2 screen = vec2(uFocal.x * pc.x * iz + uCenter.x, uFocal.y * pc.y * iz + uCenter.y);
  vec2 cornerPix = screen + corner.x * axis1 + corner.y * axis2;
  vec2 clip = vec2(cornerPix.x / uViewport.x * 2.0 - 1.0, 1.0 - cornerPix.y / uViewport.y * 2.0);
  gl_Position = vec4(clip, 0.0, 1.0);
  vSigmaPos = corner * extent;
  vColor = rgba;
}
`;

const FS = `#version 300 es
precision highp float;
in vec2 vSigmaPos;
in vec4 vColor;
out vec4 outColor;

void main() {
  float q = dot(vSigmaPos, vSigmaPos);
  float alpha = vColor.a * exp(-0.5 * q);
  if (alpha < 1.0 / 255.0) discard;
  outColor = vec4(vColor.rgb * alpha, alpha);
}
`;

export class SplatRenderer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private vao: WebGLVertexArrayObject;
  private posBuf: WebGLBuffer;
  private covBuf: WebGLBuffer;
  private rgbaBuf: WebGLBuffer;
  private count = 0;
  private uniforms: Record<string, WebGLUniformLocation>;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2", { antialias: false, alpha: false });
    if (!gl) throw new Error("WebGL2 is required");
    this.gl = gl;
    this.program = this.link(VS, FS);
    this.uniforms = {};
    for (const name of ["uRot", "uTrans", "uFocal", "uCenter", "uViewport"]) {
      this.uniforms[name] = gl.getUniformLocation(this.program, name)!;
    }

    this.vao = gl.createVertexArray()!;
    gl.bindVertexArray(this.vao);
    const quad = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]), gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);

    this.posBuf = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.posBuf);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 3, gl.FLOAT, false, 0, 0);
    gl.vertexAttribDivisor(1, 1);

    this.covBuf = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.covBuf);
    gl.enableVertexAttribArray(2);
    gl.vertexAttribPointer(2, 3, gl.FLOAT, false, 24, 0);
    gl.vertexAttribDivisor(2, 1);
    gl.enableVertexAttribArray(3);
    gl.vertexAttribPointer(3, 3, gl.FLOAT, false, 24, 12);
    gl.vertexAttribDivisor(3, 1);

    this.rgbaBuf = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.rgbaBuf);
    gl.enableVertexAttribArray(4);
    gl.vertexAttribPointer(4, 4, gl.UNSIGNED_BYTE, true, 0, 0);
    gl.vertexAttribDivisor(4, 1);

    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);
    // premultiplied back-to-front "over"
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
  }

  private link(vs: string, fs: string): WebGLProgram {
    const gl = this.gl;
    const compile = (type: number, src: string) => {
      const shader = gl.createShader(type)!;
      gl.shaderSource(shader, src);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl.VERTEX_SHADER, vs));
    gl.attachShader(program, compile(gl.FRAGMENT_SHADER, fs));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
    }
    return program;
  }

  upload(positions: Float32Array, cov6: Float32Array, rgba: Uint8Array): void {
    const gl = this.gl;
    this.count = positions.length / 3;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.posBuf);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.DYNAMIC_DRAW);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.covBuf);
    gl.bufferData(gl.ARRAY_BUFFER, cov6, gl.DYNAMIC_DRAW);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.rgbaBuf);
    gl.bufferData(gl.ARRAY_BUFFER, rgba, gl.DYNAMIC_DRAW);
  }

  draw(cam: CameraPose): void {
    const gl = this.gl;
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.clearColor(0.03, 0.03, 0.05, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT);
    if (this.count === 0) return;
    gl.useProgram(this.program);
    gl.bindVertexArray(this.vao);
    const r = cam.rotation;
    // column-major mat3 of the row-major world->camera rotation
    gl.uniformMatrix3fv(this.uniforms.uRot, false, [r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]]);
    gl.uniform3fv(this.uniforms.uTrans, cam.translation);
    gl.uniform2f(this.uniforms.uFocal, cam.fx, cam.fy);
    gl.uniform2f(this.uniforms.uCenter, cam.cx, cam.cy);
    gl.uniform2f(this.uniforms.uViewport, cam.width, cam.height);
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, this.count);
  }
}
