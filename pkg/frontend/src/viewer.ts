/** Minimal point-sprite renderer: orbiting orthographic projection onto a
 * 2D canvas. Keeps the client free of a 3D engine; the projection math is
 * pure so it can be unit tested without a canvas.
 */

import type { RGB, ShapePayload } from './types.js';

export interface Camera {
  yaw: number;   // radians around the up (z) axis
  pitch: number; // radians around the screen x axis
  zoom: number;
}

export function defaultCamera(): Camera {
  return { yaw: 0.7, pitch: 0.4, zoom: 1.0 };
}

/** Rotate + project a point; returns [x, y, depth] in unit-ish coordinates. */
export function project(p: number[], cam: Camera): [number, number, number] {
  const [x, y, z] = p;
  const cy = Math.cos(cam.yaw), sy = Math.sin(cam.yaw);
  const x1 = x * cy - y * sy;
  const y1 = x * sy + y * cy;
  const cp = Math.cos(cam.pitch), sp = Math.sin(cam.pitch);
  const y2 = y1 * cp - z * sp;
  const z2 = y1 * sp + z * cp;
  return [x1 * cam.zoom, -z2 * cam.zoom, y2];
}

export function orbit(cam: Camera, dx: number, dy: number): Camera {
  const pitch = Math.max(-1.4, Math.min(1.4, cam.pitch + dy * 0.01));
  return { ...cam, yaw: cam.yaw + dx * 0.01, pitch };
}

const FALLBACK: RGB = [160, 160, 160];

export function partColor(shape: ShapePayload, partId: number,
                          labels: Map<number, string | null> | null,
                          palette: Record<string, RGB>): RGB {
  const label = labels?.get(partId)
    ?? shape.parts.find((p) => p.id === partId)?.label;
  if (label && palette[label]) return palette[label];
  if (label && shape.palette[label]) return shape.palette[label];
  return FALLBACK;
}

export interface DrawOptions {
  labels?: Map<number, string | null> | null;
  palette?: Record<string, RGB>;
  highlight?: number | null;
  pointSize?: number;
}

export function drawShape(canvas: HTMLCanvasElement, shape: ShapePayload,
                          cam: Camera, opts: DrawOptions = {}): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const scale = Math.min(width, height) * 0.9;
  const size = opts.pointSize ?? 2;
  const entries: Array<[number, number, number, string]> = [];
  for (const part of shape.parts) {
    const [r, g, b] = partColor(shape, part.id, opts.labels ?? null,
                                opts.palette ?? {});
    const dim = opts.highlight != null && opts.highlight !== part.id;
    const color = dim
      ? `rgba(${r},${g},${b},0.35)` : `rgb(${r},${g},${b})`;
    for (const p of part.points) {
      const [px, py, depth] = project(p, cam);
      entries.push([
        width / 2 + px * scale, height / 2 + py * scale, depth, color,
      ]);
    }
  }
  entries.sort((a, b) => a[2] - b[2]);
  for (const [x, y, , color] of entries) {
    ctx.fillStyle = color;
    ctx.fillRect(x - size / 2, y - size / 2, size, size);
  }
}
