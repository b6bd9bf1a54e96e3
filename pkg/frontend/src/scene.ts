/** Side-view scene projection: world geometry onto the vertical plane that
 * contains the hole axis, drawn as plain primitives a canvas can replay. */

import { TelemetryFrame } from './protocol.js';

export interface SceneConfig {
  holeBottom: [number, number, number];
  axis: [number, number, number]; // unit, out of the hole
  holeRadius: number;
  holeDepth: number;
  pegRadius: number;
  pegLength: number;
}

const DEG = Math.PI / 180;

function rotX(d: number): number[][] {
  const c = Math.cos(d * DEG);
  const s = Math.sin(d * DEG);
  return [
    [1, 0, 0],
    [0, c, -s],
    [0, s, c],
  ];
}

function rotY(d: number): number[][] {
  const c = Math.cos(d * DEG);
  const s = Math.sin(d * DEG);
  return [
    [c, 0, s],
    [0, 1, 0],
    [-s, 0, c],
  ];
}

function matVec(m: number[][], v: number[]): [number, number, number] {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

const DEFAULT_BOTTOM: [number, number, number] = [0.5, 0.0, 0.11];
const DEFAULT_DEPTH = 0.04;

/** Mirror of the simulator's scene construction: the named case rotates the
 * default scene about the hole mouth. */
export function sceneForCase(name: string): SceneConfig {
  const mouth = [DEFAULT_BOTTOM[0], DEFAULT_BOTTOM[1], DEFAULT_BOTTOM[2] + DEFAULT_DEPTH];
  let rot: number[][] | null = null;
  if (name === 'case1') rot = rotX(30);
  else if (name === 'case2') rot = rotY(-30);
  else if (name === 'case3') rot = rotY(-90);
  let bottom = DEFAULT_BOTTOM;
  let axis: [number, number, number] = [0, 0, 1];
  if (rot) {
    const rel = [DEFAULT_BOTTOM[0] - mouth[0], DEFAULT_BOTTOM[1] - mouth[1], DEFAULT_BOTTOM[2] - mouth[2]];
    const rb = matVec(rot, rel);
    bottom = [mouth[0] + rb[0], mouth[1] + rb[1], mouth[2] + rb[2]];
    axis = matVec(rot, [0, 0, 1]);
  }
  return {
    holeBottom: bottom,
    axis,
    holeRadius: 0.01,
    holeDepth: DEFAULT_DEPTH,
    pegRadius: 0.0095,
    pegLength: 0.05,
  };
}

export type Primitive =
  | { kind: 'line'; x1: number; y1: number; x2: number; y2: number; width: number; color: string }
  | { kind: 'circle'; x: number; y: number; r: number; color: string }
  | { kind: 'label'; x: number; y: number; text: string; color: string };

export interface Viewport {
  width: number;
  height: number;
  metersPerPixel: number;
}

function quatRotate(q: [number, number, number, number], v: [number, number, number]): [number, number, number] {
  const [w, x, y, z] = q;
  // v' = v + 2 w (u x v) + 2 u x (u x v), u = (x, y, z)
  const ux = y * v[2] - z * v[1];
  const uy = z * v[0] - x * v[2];
  const uz = x * v[1] - y * v[0];
  return [
    v[0] + 2 * (w * ux + y * uz - z * uy),
    v[1] + 2 * (w * uy + z * ux - x * uz),
    v[2] + 2 * (w * uz + x * uy - y * ux),
  ];
}

/** Projection basis: horizontal direction aligned with the hole axis (falls
 * back to world x for a vertical hole), plus world z. */
export function projectionBasis(config: SceneConfig): [number, number, number] {
  const hx = config.axis[0];
  const hy = config.axis[1];
  const norm = Math.hypot(hx, hy);
  if (norm < 1e-9) return [1, 0, 0];
  return [hx / norm, hy / norm, 0];
}

export function projectPoint(
  p: [number, number, number],
  config: SceneConfig,
  view: Viewport,
): [number, number] {
  const u = projectionBasis(config);
  const mouth = mouthCenter(config);
  const du = (p[0] - mouth[0]) * u[0] + (p[1] - mouth[1]) * u[1];
  const dz = p[2] - mouth[2];
  return [view.width / 2 + du / view.metersPerPixel, view.height / 2 - dz / view.metersPerPixel];
}

export function mouthCenter(config: SceneConfig): [number, number, number] {
  return [
    config.holeBottom[0] + config.holeDepth * config.axis[0],
    config.holeBottom[1] + config.holeDepth * config.axis[1],
    config.holeBottom[2] + config.holeDepth * config.axis[2],
  ];
}

export const FORCE_PIXELS_PER_NEWTON = 1.2;

/** Everything the scene canvas draws for one frame. */
export function sceneGeometry(
  frame: TelemetryFrame | null,
  config: SceneConfig,
  view: Viewport,
): Primitive[] {
  const prim: Primitive[] = [];
  const project = (p: [number, number, number]) => projectPoint(p, config, view);
  const bottom = project(config.holeBottom);
  const mouth = project(mouthCenter(config));
  // insertion direction: red arrow pointing into the hole
  const dirIn = [-config.axis[0], -config.axis[1], -config.axis[2]] as [number, number, number];
  const m = mouthCenter(config);
  const arrowFrom = project([
    m[0] - 0.06 * dirIn[0],
    m[1] - 0.06 * dirIn[1],
    m[2] - 0.06 * dirIn[2],
  ]);
  prim.push({
    kind: 'line', x1: arrowFrom[0], y1: arrowFrom[1], x2: mouth[0], y2: mouth[1],
    width: 2, color: '#e05252',
  });
  // hole bore: two wall lines from mouth to bottom, offset perpendicular to
  // the projected axis
  const axisPlane = [
    (mouth[0] - bottom[0]),
    (mouth[1] - bottom[1]),
  ];
  const nrm = Math.hypot(axisPlane[0], axisPlane[1]) || 1;
  const wall = [-axisPlane[1] / nrm, axisPlane[0] / nrm];
  const rPix = config.holeRadius / view.metersPerPixel;
  for (const side of [-1, 1]) {
    prim.push({
      kind: 'line',
      x1: mouth[0] + side * wall[0] * rPix,
      y1: mouth[1] + side * wall[1] * rPix,
      x2: bottom[0] + side * wall[0] * rPix,
      y2: bottom[1] + side * wall[1] * rPix,
      width: 2,
      color: '#8a8a8a',
    });
  }
  prim.push({ kind: 'circle', x: bottom[0], y: bottom[1], r: 3, color: '#8a8a8a' });
  if (!frame) return prim;
  // peg: segment from the tip along the body z axis
  const tip = frame.pose.p as [number, number, number];
  const bodyZ = quatRotate(frame.pose.q, [0, 0, 1]);
  const tail: [number, number, number] = [
    tip[0] + config.pegLength * bodyZ[0],
    tip[1] + config.pegLength * bodyZ[1],
    tip[2] + config.pegLength * bodyZ[2],
  ];
  const tipPx = project(tip);
  const tailPx = project(tail);
  prim.push({
    kind: 'line', x1: tailPx[0], y1: tailPx[1], x2: tipPx[0], y2: tipPx[1],
    width: Math.max(2, (2 * config.pegRadius) / view.metersPerPixel),
    color: frame.success ? '#55c46a' : '#5a8fd6',
  });
  prim.push({ kind: 'circle', x: tipPx[0], y: tipPx[1], r: 2.5, color: '#dcdcdc' });
  // contact force arrow at the tip (world frame), length proportional to |f|
  const fBody: [number, number, number] = [frame.f_ext[0], frame.f_ext[1], frame.f_ext[2]];
  const fWorld = quatRotate(frame.pose.q, fBody);
  const mag = Math.hypot(fWorld[0], fWorld[1], fWorld[2]);
  if (mag > 1e-6) {
    const uB = projectionBasis(config);
    const fu = fWorld[0] * uB[0] + fWorld[1] * uB[1];
    const fz = fWorld[2];
    prim.push({
      kind: 'line',
      x1: tipPx[0],
      y1: tipPx[1],
      x2: tipPx[0] + fu * FORCE_PIXELS_PER_NEWTON,
      y2: tipPx[1] - fz * FORCE_PIXELS_PER_NEWTON,
      width: 2,
      color: '#e0a443',
    });
  }
  return prim;
}
