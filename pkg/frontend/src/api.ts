// Service client: REST calls plus the progressive WebSocket stream manager.
// The manager enforces one in-flight stream per viewer: issuing a request
// while another is streaming lets the server cancel the old one at its next
// pass boundary, and any pass that arrives with a stale request id is
// dropped on the client side too.

import type { ArtifactEntry, MetaResponse, PassMessage, RenderRequest, StatsResponse } from './types.js';

export interface PassEvent {
  requestId: string;
  passIndex: number;
  level: number;
  final: boolean;
  pngBase64: string;
}

type WebSocketLike = Pick<WebSocket, 'send' | 'close'> & {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  readyState: number;
};

export type SocketFactory = (url: string) => WebSocketLike;

export class ProgressiveStream {
  private socket: WebSocketLike | null = null;
  private currentRequestId: string | null = null;
  private counter = 0;
  private ready = false;
  private pending: string[] = [];

  lastFinalPngBase64: string | null = null;

  onPass: ((pass: PassEvent) => void) | null = null;
  onCancelled: ((requestId: string) => void) | null = null;
  onError: ((message: string) => void) | null = null;

  constructor(
    private readonly url: string,
    private readonly sessionId: string,
    private readonly factory: SocketFactory = (u) => new WebSocket(u) as WebSocketLike,
  ) {}

  get inFlightRequestId(): string | null {
    return this.currentRequestId;
  }

  private ensureSocket(): void {
    if (this.socket && this.socket.readyState <= 1) return;
    this.ready = false;
    this.socket = this.factory(this.url);
    this.socket.onopen = () => {
      this.ready = true;
      for (const msg of this.pending.splice(0)) this.socket!.send(msg);
    };
    this.socket.onerror = () => this.onError?.('websocket error');
    this.socket.onmessage = (ev) => this.handleMessage(String(ev.data));
  }

  request(req: Omit<RenderRequest, 'request_id' | 'session_id' | 'progressive'>): string {
    this.ensureSocket();
    this.counter += 1;
    const requestId = `req-${this.counter}`;
    this.currentRequestId = requestId; // supersedes any in-flight stream
    const body = JSON.stringify({
      ...req,
      progressive: true,
      request_id: requestId,
      session_id: this.sessionId,
    });
    if (this.ready) this.socket!.send(body);
    else this.pending.push(body);
    return requestId;
  }

  private handleMessage(raw: string): void {
    let msg: PassMessage;
    try {
      msg = JSON.parse(raw) as PassMessage;
    } catch {
      this.onError?.(`bad message: ${raw}`);
      return;
    }
    if (msg.error) {
      this.onError?.(msg.error);
      return;
    }
    if (msg.cancelled) {
      this.onCancelled?.(msg.request_id);
      return;
    }
    if (msg.request_id !== this.currentRequestId) return; // stale stream
    if (msg.png === undefined || msg.pass_index === undefined) return;
    if (msg.final) this.lastFinalPngBase64 = msg.png;
    this.onPass?.({
      requestId: msg.request_id,
      passIndex: msg.pass_index,
      level: msg.level ?? msg.pass_index,
      final: Boolean(msg.final),
      pngBase64: msg.png,
    });
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }
}

export class ApiClient {
  constructor(private readonly base: string = '') {}

  async listModels(): Promise<ArtifactEntry[]> {
    const resp = await fetch(`${this.base}/api/models`);
    if (!resp.ok) throw new Error(`list failed: ${resp.status}`);
    return ((await resp.json()) as { models: ArtifactEntry[] }).models;
  }

  async load(path: string): Promise<MetaResponse> {
    const resp = await fetch(`${this.base}/api/load`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ path }),
    });
    if (!resp.ok) throw new Error(`load failed: ${resp.status}`);
    return (await resp.json()) as MetaResponse;
  }

  async stats(): Promise<StatsResponse> {
    const resp = await fetch(`${this.base}/api/stats`);
    return (await resp.json()) as StatsResponse;
  }

  progressiveUrl(): string {
    const base = this.base || (typeof location !== 'undefined' ? location.origin : '');
    return `${base.replace(/^http/, 'ws')}/api/progressive`;
  }
}

export function base64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}
