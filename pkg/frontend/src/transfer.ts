// Transfer-function editor state: opacity control points over a colormap,
// plus the relative min/max window. All operations keep points sorted and
// inside [0, 1]; emptying the editor restores the default two-point ramp.

import type { ColorPoint, OpacityPoint, TfJson } from './types.js';

export const COLORMAPS: Record<string, ColorPoint[]> = {
  gray: [
    { position: 0, rgb: [0, 0, 0] },
    { position: 1, rgb: [1, 1, 1] },
  ],
  fire: [
    { position: 0, rgb: [0, 0, 0] },
    { position: 0.35, rgb: [0.8, 0.1, 0] },
    { position: 0.7, rgb: [1, 0.6, 0] },
    { position: 1, rgb: [1, 1, 0.9] },
  ],
  coolwarm: [
    { position: 0, rgb: [0.23, 0.3, 0.75] },
    { position: 0.5, rgb: [0.86, 0.86, 0.86] },
    { position: 1, rgb: [0.7, 0.02, 0.15] },
  ],
  viridis: [
    { position: 0, rgb: [0.27, 0, 0.33] },
    { position: 0.33, rgb: [0.21, 0.36, 0.55] },
    { position: 0.66, rgb: [0.13, 0.66, 0.52] },
    { position: 1, rgb: [0.99, 0.9, 0.14] },
  ],
};

export const DEFAULT_OPACITY: OpacityPoint[] = [
  { position: 0, alpha: 0 },
  { position: 1, alpha: 1 },
];

export interface TfState {
  colormap: string;
  opacityPoints: OpacityPoint[];
  window: [number, number];
}

export function defaultTfState(): TfState {
  return {
    colormap: 'gray',
    opacityPoints: DEFAULT_OPACITY.map((p) => ({ ...p })),
    window: [0, 1],
  };
}

const clamp01 = (v: number) => Math.max(0, Math.min(1, v));

function sorted(points: OpacityPoint[]): OpacityPoint[] {
  return [...points].sort((a, b) => a.position - b.position);
}

export function addPoint(s: TfState, position: number, alpha: number): TfState {
  const point = { position: clamp01(position), alpha: clamp01(alpha) };
  return { ...s, opacityPoints: sorted([...s.opacityPoints, point]) };
}

export function movePoint(s: TfState, index: number, position: number, alpha: number): TfState {
  if (index < 0 || index >= s.opacityPoints.length) throw new Error(`no point ${index}`);
  const points = s.opacityPoints.map((p, i) =>
    i === index ? { position: clamp01(position), alpha: clamp01(alpha) } : { ...p },
  );
  return { ...s, opacityPoints: sorted(points) };
}

export function deletePoint(s: TfState, index: number): TfState {
  const points = s.opacityPoints.filter((_, i) => i !== index);
  return {
    ...s,
    opacityPoints: points.length ? points : DEFAULT_OPACITY.map((p) => ({ ...p })),
  };
}

export function setWindow(s: TfState, lo: number, hi: number): TfState {
  if (!(lo >= 0 && hi <= 1 && lo < hi)) {
    throw new Error(`window [${lo}, ${hi}] must satisfy 0 <= lo < hi <= 1`);
  }
  return { ...s, window: [lo, hi] };
}

export function setColormap(s: TfState, name: string): TfState {
  if (!(name in COLORMAPS)) throw new Error(`unknown colormap ${name}`);
  return { ...s, colormap: name };
}

export function toTfJson(s: TfState): TfJson {
  return {
    colormap: COLORMAPS[s.colormap].map((p) => ({ ...p, rgb: [...p.rgb] as [number, number, number] })),
    opacity: s.opacityPoints.map((p) => ({ ...p })),
    window: [...s.window] as [number, number],
  };
}

// Piecewise-linear preview curve used by the editor canvas.
export function opacityCurve(s: TfState, samples: number): number[] {
  const pts = s.opacityPoints;
  const out: number[] = [];
  for (let i = 0; i < samples; i++) {
    const t = samples === 1 ? 0 : i / (samples - 1);
    let alpha: number;
    if (t <= pts[0].position) alpha = pts[0].alpha;
    else if (t >= pts[pts.length - 1].position) alpha = pts[pts.length - 1].alpha;
    else {
      let k = 0;
      while (pts[k + 1].position < t) k++;
      const span = pts[k + 1].position - pts[k].position;
      const f = span > 0 ? (t - pts[k].position) / span : 0;
      alpha = pts[k].alpha + f * (pts[k + 1].alpha - pts[k].alpha);
    }
    out.push(alpha);
  }
  return out;
}
