export interface CameraJson {
  eye: [number, number, number];
  look_at: [number, number, number];
  up: [number, number, number];
  fov: number;
  width: number;
  height: number;
}

export interface ColorPoint {
  position: number;
  rgb: [number, number, number];
}

export interface OpacityPoint {
  position: number;
  alpha: number;
}

export interface TfJson {
  colormap: ColorPoint[];
  opacity: OpacityPoint[];
  window: [number, number];
}

export interface RenderRequest {
  camera: CameraJson;
  tf: TfJson;
  samples_per_ray: number;
  batch_size: number;
  progressive: boolean;
  request_id: string;
  session_id: string;
}

export interface PassMessage {
  request_id: string;
  pass_index?: number;
  level?: number;
  final?: boolean;
  png?: string; // base64
  cancelled?: boolean;
  error?: string;
}

export interface ArtifactEntry {
  path: string;
  kind: string;
}

export interface MetaResponse {
  kind: string;
  path: string;
  dims: number[] | null;
  vmin: number;
  vmax: number;
  bricks: number[] | null;
}

export interface StatsResponse {
  last_frame_ms: number | null;
  points_per_sec: number | null;
}
