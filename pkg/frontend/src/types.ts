/** Wire types for the futurescene HTTP service. */

export type Point = [number, number];

export type RenderMode = "normals" | "appearance";

export interface VehicleInfo {
  id: number;
  cad: number;
  bbox: [number, number, number, number] | null;
  frames: number;
}

export interface SessionDescriptor {
  session_id: string;
  bundle_hash: string;
  frame_count: number;
  image_size: [number, number];
  fps: number;
  vehicles: VehicleInfo[];
  cads: number[];
  approximate_intrinsics: boolean;
}

export interface FutureRequest {
  vehicle_id: number;
  polyline: Point[];
  horizon: number;
  timestep: number;
  mode: RenderMode;
}

export interface PlanEntry {
  vehicle_id: number;
  residual_px: number;
  iterations: number;
  yaw_delta_deg: number;
  poses: number;
}

export interface ClipManifest {
  clip_id: string;
  frames: string[];
  offsets: number[];
  timestep: number;
  horizon: number;
  mode: string;
  plan: PlanEntry[];
  solve_cache_hits: number;
  options_hash: string;
}
