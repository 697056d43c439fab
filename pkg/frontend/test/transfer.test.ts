import { describe, expect, it } from 'vitest';

import {
  DEFAULT_OPACITY,
  addPoint,
  defaultTfState,
  deletePoint,
  movePoint,
  opacityCurve,
  setColormap,
  setWindow,
  toTfJson,
} from '../src/transfer.js';

describe('transfer function editor', () => {
  it('deleting every opacity point restores the default two-point ramp', () => {
    let s = defaultTfState();
    s = deletePoint(s, 1);
    s = deletePoint(s, 0);
    expect(s.opacityPoints).toEqual(DEFAULT_OPACITY);
  });

  it('window edits round-trip verbatim into the request body', () => {
    const s = setWindow(defaultTfState(), 0.5, 1.0);
    expect(toTfJson(s).window).toEqual([0.5, 1.0]);
  });

  it('rejects an inverted or out-of-range window', () => {
    expect(() => setWindow(defaultTfState(), 0.9, 0.1)).toThrow(/window/);
    expect(() => setWindow(defaultTfState(), -0.2, 0.5)).toThrow(/window/);
  });

  it('points stay sorted after adds and moves', () => {
    let s = defaultTfState();
    s = addPoint(s, 0.8, 0.2);
    s = addPoint(s, 0.3, 0.9);
    const positions = s.opacityPoints.map((p) => p.position);
    expect(positions).toEqual([...positions].sort((a, b) => a - b));
    s = movePoint(s, 1, 0.95, 0.5); // drag the 0.3 point past the others
    const after = s.opacityPoints.map((p) => p.position);
    expect(after).toEqual([...after].sort((a, b) => a - b));
  });

  it('clamps added points into [0, 1]', () => {
    const s = addPoint(defaultTfState(), 1.7, -0.4);
    for (const p of s.opacityPoints) {
      expect(p.position).toBeGreaterThanOrEqual(0);
      expect(p.position).toBeLessThanOrEqual(1);
      expect(p.alpha).toBeGreaterThanOrEqual(0);
      expect(p.alpha).toBeLessThanOrEqual(1);
    }
  });

  it('unknown colormap is rejected, known one is carried into the request', () => {
    expect(() => setColormap(defaultTfState(), 'nope')).toThrow(/colormap/);
    const tf = toTfJson(setColormap(defaultTfState(), 'fire'));
    expect(tf.colormap.length).toBeGreaterThan(2);
    expect(tf.colormap[0].position).toBe(0);
  });

  it('opacity curve interpolates the default ramp linearly', () => {
    const curve = opacityCurve(defaultTfState(), 5);
    expect(curve).toEqual([0, 0.25, 0.5, 0.75, 1]);
  });
});
