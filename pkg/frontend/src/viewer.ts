// Viewer wiring: canvas interaction loop, transfer-function editor, stats
// panel. Every interaction updates the state, issues one progressive render
// request (superseding the in-flight one), and draws passes coarse-to-fine
// as they arrive.

import { ApiClient, ProgressiveStream, base64ToBytes } from './api.js';
import { DEFAULT_ORBIT, OrbitState, pan, rotate, toCameraJson, zoom } from './orbit.js';
import {
  COLORMAPS,
  TfState,
  addPoint,
  defaultTfState,
  deletePoint,
  movePoint,
  opacityCurve,
  setColormap,
  setWindow,
  toTfJson,
} from './transfer.js';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

interface ViewerConfig {
  samplesPerRay: number;
  batchSize: number;
  fov: number;
}

export class Viewer {
  private orbit: OrbitState = { ...DEFAULT_ORBIT };
  private tf: TfState = defaultTfState();
  private cfg: ViewerConfig = { samplesPerRay: 128, batchSize: 65536, fov: 45 };
  private loaded = false;
  private dragging: 'rotate' | 'pan' | null = null;
  private dragLast: [number, number] = [0, 0];
  private tfDragIndex = -1;

  private readonly api = new ApiClient();
  private readonly stream: ProgressiveStream;
  private readonly canvas = $('view') as unknown as HTMLCanvasElement;
  private readonly tfCanvas = $('tf-editor') as unknown as HTMLCanvasElement;

  constructor() {
    this.stream = new ProgressiveStream(this.api.progressiveUrl(), `viewer-${Date.now()}`);
    this.stream.onPass = (pass) => this.drawPass(pass.pngBase64);
    this.stream.onError = (msg) => this.setStatus(msg, true);
    this.bindCanvas();
    this.bindControls();
    this.drawTfEditor();
    void this.refreshArtifacts();
    window.setInterval(() => void this.refreshStats(), 1000);
  }

  private setStatus(text: string, isError = false): void {
    const el = $('status');
    el.textContent = text;
    el.classList.toggle('error', isError);
  }

  private requestRender(): void {
    if (!this.loaded) return;
    this.stream.request({
      camera: toCameraJson(this.orbit, this.cfg.fov, this.canvas.width, this.canvas.height),
      tf: toTfJson(this.tf),
      samples_per_ray: this.cfg.samplesPerRay,
      batch_size: this.cfg.batchSize,
    });
  }

  private drawPass(pngBase64: string): void {
    const img = new Image();
    img.onload = () => {
      const ctx = this.canvas.getContext('2d')!;
      ctx.imageSmoothingEnabled = false; // nearest-upscale; server preview is already bilinear
      ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
    };
    img.src = `data:image/png;base64,${pngBase64}`;
  }

  // ---- scene interaction ----

  private bindCanvas(): void {
    this.canvas.addEventListener('pointerdown', (ev) => {
      this.dragging = ev.button === 1 ? 'pan' : 'rotate';
      this.dragLast = [ev.clientX, ev.clientY];
      this.canvas.setPointerCapture(ev.pointerId);
      ev.preventDefault();
    });
    this.canvas.addEventListener('pointermove', (ev) => {
      if (!this.dragging) return;
      const dx = ev.clientX - this.dragLast[0];
      const dy = ev.clientY - this.dragLast[1];
      this.dragLast = [ev.clientX, ev.clientY];
      this.orbit =
        this.dragging === 'pan'
          ? pan(this.orbit, dx, dy)
          : rotate(this.orbit, -dx * 0.5, dy * 0.5);
      this.requestRender();
    });
    this.canvas.addEventListener('pointerup', () => (this.dragging = null));
    this.canvas.addEventListener('wheel', (ev) => {
      ev.preventDefault();
      this.orbit = zoom(this.orbit, ev.deltaY > 0 ? -1 : 1);
      this.requestRender();
    });
    this.canvas.addEventListener('contextmenu', (ev) => ev.preventDefault());
  }

  // ---- controls ----

  private bindControls(): void {
    $('load-btn').addEventListener('click', () => void this.loadSelected());
    $('reset-btn').addEventListener('click', () => {
      this.orbit = { ...DEFAULT_ORBIT };
      this.requestRender();
    });
    const colormap = $('colormap') as unknown as HTMLSelectElement;
    for (const name of Object.keys(COLORMAPS)) {
      const opt = document.createElement('option');
      opt.value = name;
      opt.textContent = name;
      colormap.appendChild(opt);
    }
    colormap.addEventListener('change', () => {
      this.tf = setColormap(this.tf, colormap.value);
      this.drawTfEditor();
      this.requestRender();
    });
    const bind = (id: string, apply: (v: number) => void) => {
      const input = $(id) as unknown as HTMLInputElement;
      input.addEventListener('change', () => {
        apply(Number(input.value));
        this.requestRender();
      });
    };
    bind('samples', (v) => (this.cfg.samplesPerRay = Math.max(1, Math.round(v))));
    bind('batch-size', (v) => (this.cfg.batchSize = Math.max(1, Math.round(v))));
    bind('window-lo', (v) => this.updateWindow(v, this.tf.window[1]));
    bind('window-hi', (v) => this.updateWindow(this.tf.window[0], v));
    $('save-btn').addEventListener('click', () => this.saveFrame());
    this.bindTfEditor();
  }

  private updateWindow(lo: number, hi: number): void {
    try {
      this.tf = setWindow(this.tf, lo, hi);
      this.setStatus('');
    } catch (err) {
      this.setStatus(String(err), true);
    }
  }

  private async loadSelected(): Promise<void> {
    const select = $('artifact') as unknown as HTMLSelectElement;
    if (!select.value) return;
    try {
      const meta = await this.api.load(select.value);
      this.loaded = true;
      this.setStatus(
        `loaded ${meta.path} (${meta.kind}, range [${meta.vmin.toFixed(3)}, ${meta.vmax.toFixed(3)}])`,
      );
      this.requestRender();
    } catch (err) {
      this.setStatus(String(err), true);
    }
  }

  private async refreshArtifacts(): Promise<void> {
    try {
      const entries = await this.api.listModels();
      const select = $('artifact') as unknown as HTMLSelectElement;
      select.innerHTML = '';
      for (const entry of entries) {
        const opt = document.createElement('option');
        opt.value = entry.path;
        opt.textContent = `${entry.path} (${entry.kind})`;
        select.appendChild(opt);
      }
    } catch (err) {
      this.setStatus(String(err), true);
    }
  }

  private async refreshStats(): Promise<void> {
    try {
      const stats = await this.api.stats();
      $('stats').textContent =
        stats.last_frame_ms === null
          ? 'no frames yet'
          : `${stats.last_frame_ms.toFixed(0)} ms/frame · ` +
            `${((stats.points_per_sec ?? 0) / 1e6).toFixed(2)} M samples/s`;
    } catch {
      /* stats are best-effort */
    }
  }

  private saveFrame(): void {
    const b64 = this.stream.lastFinalPngBase64;
    if (!b64) {
      this.setStatus('no completed frame to save yet', true);
      return;
    }
    const blob = new Blob([base64ToBytes(b64).buffer as ArrayBuffer], { type: 'image/png' });
    const a = document.createElement('a');
    a.href = URL.createObjectURL(blob);
    a.download = 'frame.png';
    a.click();
    URL.revokeObjectURL(a.href);
  }

  // ---- opacity editor ----

  private pointAt(ev: MouseEvent): { position: number; alpha: number } {
    const rect = this.tfCanvas.getBoundingClientRect();
    return {
      position: (ev.clientX - rect.left) / rect.width,
      alpha: 1 - (ev.clientY - rect.top) / rect.height,
    };
  }

  private nearestPoint(position: number, alpha: number): number {
    let best = -1;
    let bestDist = 0.05; // pick radius in editor units
    this.tf.opacityPoints.forEach((p, i) => {
      const d = Math.hypot(p.position - position, (p.alpha - alpha) * 0.5);
      if (d < bestDist) {
        best = i;
        bestDist = d;
      }
    });
    return best;
  }

  private bindTfEditor(): void {
    this.tfCanvas.addEventListener('pointerdown', (ev) => {
      const { position, alpha } = this.pointAt(ev);
      const hit = this.nearestPoint(position, alpha);
      if (ev.button === 2) {
        if (hit >= 0) {
          this.tf = deletePoint(this.tf, hit);
          this.drawTfEditor();
          this.requestRender();
        }
        ev.preventDefault();
        return;
      }
      if (hit >= 0) {
        this.tfDragIndex = hit;
      } else {
        this.tf = addPoint(this.tf, position, alpha);
        this.tfDragIndex = this.tf.opacityPoints.findIndex(
          (p) => p.position === Math.max(0, Math.min(1, position)),
        );
        this.drawTfEditor();
      }
      this.tfCanvas.setPointerCapture(ev.pointerId);
    });
    this.tfCanvas.addEventListener('pointermove', (ev) => {
      if (this.tfDragIndex < 0) return;
      const { position, alpha } = this.pointAt(ev);
      this.tf = movePoint(this.tf, this.tfDragIndex, position, alpha);
      this.tfDragIndex = this.tf.opacityPoints.findIndex(
        (p) => p.position === Math.max(0, Math.min(1, position)),
      );
      this.drawTfEditor();
    });
    const finish = () => {
      if (this.tfDragIndex >= 0) {
        this.tfDragIndex = -1;
        this.requestRender();
      }
    };
    this.tfCanvas.addEventListener('pointerup', finish);
    this.tfCanvas.addEventListener('contextmenu', (ev) => ev.preventDefault());
  }

  private drawTfEditor(): void {
    const ctx = this.tfCanvas.getContext('2d')!;
    const { width, height } = this.tfCanvas;
    ctx.clearRect(0, 0, width, height);
    // colormap strip under the curve
    const stops = COLORMAPS[this.tf.colormap];
    const gradient = ctx.createLinearGradient(0, 0, width, 0);
    for (const stop of stops) {
      const [r, g, b] = stop.rgb.map((c) => Math.round(c * 255));
      gradient.addColorStop(stop.position, `rgb(${r},${g},${b})`);
    }
    ctx.fillStyle = gradient;
    ctx.globalAlpha = 0.35;
    ctx.fillRect(0, 0, width, height);
    ctx.globalAlpha = 1;
    // opacity curve
    const curve = opacityCurve(this.tf, width);
    ctx.strokeStyle = '#e8e8e8';
    ctx.beginPath();
    curve.forEach((alpha, x) => {
      const y = (1 - alpha) * height;
      if (x === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    // control points
    ctx.fillStyle = '#ffb300';
    for (const p of this.tf.opacityPoints) {
      ctx.beginPath();
      ctx.arc(p.position * width, (1 - p.alpha) * height, 4, 0, Math.PI * 2);
      ctx.fill();
    }
  }
}

if (typeof document !== 'undefined' && document.getElementById('view')) {
  new Viewer();
}
