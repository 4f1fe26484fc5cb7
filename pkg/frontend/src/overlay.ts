/** Constraint-overlay geometry: pure data in, drawable shapes out.
 *
 * Coordinates pass through untransformed (the canvas runs at the camera's
 * native resolution), so a rendered marker sits exactly at the pixel the
 * server reported.
 */

import type { Frame, Overlay, ProbMap } from "./types.js";

export interface Marker {
  shape: "marker";
  u: number;
  v: number;
  color: string;
}

export interface Segment {
  shape: "segment";
  from: [number, number];
  to: [number, number];
  color: string;
}

export type OverlayShape = Marker | Segment;

export const POINT_COLOR = "#ff5252";
export const LINE_COLOR = "#40c4ff";
export const LINK_COLOR = "#ffd740";

/** Clips the infinite line a*u + b*v + c = 0 to the [0,w-1]x[0,h-1] view.
 * Returns null when the line misses the viewport entirely. */
export function clipLineToViewport(
  a: number,
  b: number,
  c: number,
  width: number,
  height: number,
): [[number, number], [number, number]] | null {
  const maxU = width - 1;
  const maxV = height - 1;
  const eps = 1e-9;
  const hits: [number, number][] = [];

  const push = (u: number, v: number) => {
    if (u < -eps || u > maxU + eps || v < -eps || v > maxV + eps) return;
    const cu = Math.min(Math.max(u, 0), maxU);
    const cv = Math.min(Math.max(v, 0), maxV);
    if (!hits.some(([hu, hv]) => Math.abs(hu - cu) < eps && Math.abs(hv - cv) < eps)) {
      hits.push([cu, cv]);
    }
  };

  if (Math.abs(b) > eps) {
    push(0, -c / b); // left edge
    push(maxU, -(c + a * maxU) / b); // right edge
  }
  if (Math.abs(a) > eps) {
    push(-c / a, 0); // top edge
    push(-(c + b * maxV) / a, maxV); // bottom edge
  }
  if (hits.length < 2) return null;
  return [hits[0], hits[1]];
}

/** Turns the server overlay into drawable shapes. Point pairs (the p2p and
 * l2l forms send feature first, anchor second) get a connecting segment. */
export function buildOverlayShapes(
  overlay: Overlay,
  width: number,
  height: number,
): OverlayShape[] {
  const shapes: OverlayShape[] = [];
  for (const [a, b, c] of overlay.lines) {
    const seg = clipLineToViewport(a, b, c, width, height);
    if (seg !== null) {
      shapes.push({ shape: "segment", from: seg[0], to: seg[1], color: LINE_COLOR });
    }
  }
  for (let i = 0; i + 1 < overlay.points.length; i += 2) {
    const [u1, v1] = overlay.points[i];
    const [u2, v2] = overlay.points[i + 1];
    shapes.push({ shape: "segment", from: [u1, v1], to: [u2, v2], color: LINK_COLOR });
  }
  for (const [u, v] of overlay.points) {
    shapes.push({ shape: "marker", u, v, color: POINT_COLOR });
  }
  return shapes;
}

/** Alpha-blends a probability map over an RGBA frame, in place.
 * Returns false (frame untouched) when the dimensions disagree. */
export function blendMask(frame: Frame, mask: ProbMap, opacity: number): boolean {
  if (frame.width !== mask.width || frame.height !== mask.height) {
    return false;
  }
  const alpha = Math.min(Math.max(opacity, 0), 1);
  const rgba = frame.rgba;
  for (let p = 0; p < mask.values.length; p++) {
    const a = alpha * mask.values[p];
    // highlight color: saturated green
    rgba[p * 4] = rgba[p * 4] * (1 - a);
    rgba[p * 4 + 1] = rgba[p * 4 + 1] * (1 - a) + 255 * a;
    rgba[p * 4 + 2] = rgba[p * 4 + 2] * (1 - a);
  }
  return true;
}
