/** Trajectory sketch state: the points a user has drawn over the frame,
 * which vehicle they apply to, and the generation options. Pure logic,
 * no DOM, so the whole flow is testable headlessly. */

import { Point, RenderMode, VehicleInfo } from "./types.js";

export interface FrameBounds {
  width: number;
  height: number;
}

export interface AddPointResult {
  point: Point;
  clamped: boolean;
}

export class SketchState {
  points: Point[] = [];
  activeVehicle: number | null = null;
  horizon = 1.0;
  timestep = 0.2;
  mode: RenderMode = "appearance";
  closed = false;
  /** set while the active vehicle has a generation in flight */
  private inFlight = new Set<number>();
  /** true when the last added point had to be clamped (visual cue) */
  lastClamped = false;

  constructor(public bounds: FrameBounds) {}

  /** Pick the vehicle whose frame-0 box contains the click; the
   * smallest box wins when boxes overlap. */
  selectVehicleAt(x: number, y: number, vehicles: VehicleInfo[]): number | null {
    let best: VehicleInfo | null = null;
    for (const v of vehicles) {
      if (!v.bbox) continue;
      const [bx, by, bw, bh] = v.bbox;
      if (x >= bx && x <= bx + bw && y >= by && y <= by + bh) {
        if (!best || bw * bh < best.bbox![2] * best.bbox![3]) best = v;
      }
    }
    this.activeVehicle = best ? best.id : this.activeVehicle;
    return best ? best.id : null;
  }

  /** Append one drawn point, clamping out-of-bounds clicks to the
   * frame border. No-op once the sketch is closed. */
  addPoint(x: number, y: number): AddPointResult | null {
    if (this.closed) return null;
    const cx = Math.min(Math.max(x, 0), this.bounds.width - 1);
    const cy = Math.min(Math.max(y, 0), this.bounds.height - 1);
    const clamped = cx !== x || cy !== y;
    const point: Point = [cx, cy];
    this.points.push(point);
    this.lastClamped = clamped;
    return { point, clamped };
  }

  /** Double-action: seal the sketch. */
  close(): void {
    this.closed = true;
  }

  clear(): void {
    this.points = [];
    this.closed = false;
    this.lastClamped = false;
  }

  /** Exactly the drawn points; the wire payload must not differ. */
  polyline(): Point[] {
    return this.points.map((p) => [p[0], p[1]]);
  }

  canSubmit(): boolean {
    return (
      this.activeVehicle !== null &&
      this.points.length >= 2 &&
      !this.inFlight.has(this.activeVehicle)
    );
  }

  beginGeneration(): boolean {
    if (!this.canSubmit()) return false;
    this.inFlight.add(this.activeVehicle!);
    return true;
  }

  endGeneration(vehicleId: number): void {
    this.inFlight.delete(vehicleId);
  }

  generationInFlight(vehicleId: number): boolean {
    return this.inFlight.has(vehicleId);
  }
}
