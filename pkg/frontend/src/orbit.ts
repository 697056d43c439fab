// Orbit camera: the eye rides a sphere around a target point. Left-drag
// rotates (azimuth/elevation), the wheel zooms the radius, middle-drag pans
// the target in the current view plane.

import type { CameraJson } from './types.js';

export interface OrbitState {
  target: [number, number, number];
  distance: number;
  azimuthDeg: number; // 0 looks down -z toward the target
  elevationDeg: number; // clamped inside (-90, 90)
}

export const DEFAULT_ORBIT: OrbitState = {
  target: [0, 0, 0],
  distance: 3,
  azimuthDeg: 0,
  elevationDeg: 15,
};

const ELEVATION_LIMIT = 89.5;
const MIN_DISTANCE = 0.05;
export const ZOOM_FACTOR_PER_TICK = 0.9;

const rad = (deg: number) => (deg * Math.PI) / 180;

export function rotate(s: OrbitState, dAzimuthDeg: number, dElevationDeg: number): OrbitState {
  const elevation = Math.max(
    -ELEVATION_LIMIT,
    Math.min(ELEVATION_LIMIT, s.elevationDeg + dElevationDeg),
  );
  let azimuth = (s.azimuthDeg + dAzimuthDeg) % 360;
  if (azimuth < 0) azimuth += 360;
  return { ...s, azimuthDeg: azimuth, elevationDeg: elevation };
}

export function zoom(s: OrbitState, ticks: number): OrbitState {
  const distance = Math.max(MIN_DISTANCE, s.distance * ZOOM_FACTOR_PER_TICK ** ticks);
  return { ...s, distance };
}

export function cameraEye(s: OrbitState): [number, number, number] {
  const el = rad(s.elevationDeg);
  const az = rad(s.azimuthDeg);
  return [
    s.target[0] + s.distance * Math.cos(el) * Math.sin(az),
    s.target[1] + s.distance * Math.sin(el),
    s.target[2] + s.distance * Math.cos(el) * Math.cos(az),
  ];
}

export function viewBasis(s: OrbitState): {
  right: [number, number, number];
  up: [number, number, number];
} {
  const eye = cameraEye(s);
  const fwd = [s.target[0] - eye[0], s.target[1] - eye[1], s.target[2] - eye[2]];
  const norm = Math.hypot(fwd[0], fwd[1], fwd[2]);
  const f = [fwd[0] / norm, fwd[1] / norm, fwd[2] / norm];
  const worldUp = [0, 1, 0];
  const right: [number, number, number] = [
    f[1] * worldUp[2] - f[2] * worldUp[1],
    f[2] * worldUp[0] - f[0] * worldUp[2],
    f[0] * worldUp[1] - f[1] * worldUp[0],
  ];
  const rn = Math.hypot(...right) || 1;
  right[0] /= rn;
  right[1] /= rn;
  right[2] /= rn;
  const up: [number, number, number] = [
    right[1] * f[2] - right[2] * f[1],
    right[2] * f[0] - right[0] * f[2],
    right[0] * f[1] - right[1] * f[0],
  ];
  return { right, up };
}

export function pan(s: OrbitState, dx: number, dy: number): OrbitState {
  // dx/dy in view-plane units scaled by distance so panning feels constant
  const { right, up } = viewBasis(s);
  const scale = s.distance * 0.002;
  return {
    ...s,
    target: [
      s.target[0] - right[0] * dx * scale + up[0] * dy * scale,
      s.target[1] - right[1] * dx * scale + up[1] * dy * scale,
      s.target[2] - right[2] * dx * scale + up[2] * dy * scale,
    ],
  };
}

export function toCameraJson(
  s: OrbitState,
  fov: number,
  width: number,
  height: number,
): CameraJson {
  return {
    eye: cameraEye(s),
    look_at: [...s.target] as [number, number, number],
    up: [0, 1, 0],
    fov,
    width,
    height,
  };
}
