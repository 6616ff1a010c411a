/** Browser wiring: canvas overlays, pointer events, playback loops.
 * All decision logic lives in sketch.ts / playback.ts; this file is
 * DOM glue. */

import { ApiError, StudioApi } from "./api.js";
import { ComparisonStrip } from "./playback.js";
import { SketchState } from "./sketch.js";
import { RenderMode, SessionDescriptor } from "./types.js";

interface Elements {
  bundleInput: HTMLInputElement;
  openButton: HTMLButtonElement;
  status: HTMLElement;
  frameCanvas: HTMLCanvasElement;
  modeSelect: HTMLSelectElement;
  horizonSelect: HTMLSelectElement;
  clearButton: HTMLButtonElement;
  generateButton: HTMLButtonElement;
  errorBadge: HTMLElement;
  strip: HTMLElement;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class StudioApp {
  private api: StudioApi;
  private session: SessionDescriptor | null = null;
  private sketch: SketchState | null = null;
  private strip = new ComparisonStrip();
  private frameImage: HTMLImageElement | null = null;
  private timers: number[] = [];

  constructor(private ui: Elements, baseUrl: string) {
    this.api = new StudioApi(baseUrl);
    ui.openButton.addEventListener("click", () => void this.openSession());
    ui.clearButton.addEventListener("click", () => this.clearSketch());
    ui.generateButton.addEventListener("click", () => void this.generate());
    ui.frameCanvas.addEventListener("pointerdown", (e) => this.onPointer(e));
    ui.frameCanvas.addEventListener("dblclick", () => this.onDouble());
    ui.modeSelect.addEventListener("change", () => {
      if (this.sketch) {
        this.sketch.mode = this.ui.modeSelect.value as RenderMode;
      }
    });
  }

  private setError(message: string | null): void {
    this.ui.errorBadge.textContent = message ?? "";
    this.ui.errorBadge.style.display = message ? "inline-block" : "none";
  }

  private async openSession(): Promise<void> {
    this.setError(null);
    try {
      const descriptor = await this.api.openSession(
        this.ui.bundleInput.value.trim()
      );
      this.session = descriptor;
      const [width, height] = descriptor.image_size;
      this.sketch = new SketchState({ width, height });
      this.sketch.mode = this.ui.modeSelect.value as RenderMode;
      this.ui.frameCanvas.width = width;
      this.ui.frameCanvas.height = height;
      this.ui.status.textContent =
        `session ${descriptor.session_id}: ${descriptor.vehicles.length} ` +
        `vehicle(s), ${descriptor.frame_count} frames` +
        (descriptor.approximate_intrinsics ? " [approximate intrinsics]" : "");
      const img = new Image();
      img.onload = () => {
        this.frameImage = img;
        this.redraw();
      };
      img.src = this.api.frameUrl(descriptor.session_id, 0);
    } catch (err) {
      this.setError(err instanceof ApiError ? err.message : String(err));
    }
  }

  private onPointer(event: PointerEvent): void {
    if (!this.session || !this.sketch) return;
    const rect = this.ui.frameCanvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) *
      this.ui.frameCanvas.width;
    const y = ((event.clientY - rect.top) / rect.height) *
      this.ui.frameCanvas.height;
    if (this.sketch.activeVehicle === null) {
      const picked = this.sketch.selectVehicleAt(x, y, this.session.vehicles);
      this.ui.status.textContent = picked === null
        ? "click inside a vehicle box to select it"
        : `vehicle ${picked} selected; draw the trajectory`;
      this.redraw();
      return;
    }
    const added = this.sketch.addPoint(x, y);
    if (added?.clamped) {
      this.ui.status.textContent = "point clamped to the frame border";
    }
    this.redraw();
  }

  private onDouble(): void {
    this.sketch?.close();
    this.redraw();
  }

  private clearSketch(): void {
    this.sketch?.clear();
    this.setError(null);
    this.redraw();
  }

  private async generate(): Promise<void> {
    if (!this.session || !this.sketch) return;
    const horizon = parseFloat(this.ui.horizonSelect.value);
    this.sketch.horizon = horizon;
    if (!this.sketch.beginGeneration()) {
      this.setError("need a vehicle and at least 2 points (one request per vehicle)");
      return;
    }
    const vehicleId = this.sketch.activeVehicle!;
    this.setError(null);
    try {
      const manifest = await this.api.generateFuture(this.session.session_id, {
        vehicle_id: vehicleId,
        polyline: this.sketch.polyline(),
        horizon: this.sketch.horizon,
        timestep: this.sketch.timestep,
        mode: this.sketch.mode,
      });
      const tile = this.strip.add(manifest, (p) => this.api.absolute(p));
      this.renderTile(tile.label, tile.frameUrls, tile.clock.timestepSeconds);
    } catch (err) {
      // the sketch survives a failed request
      this.setError(err instanceof ApiError ? err.message : String(err));
    } finally {
      this.sketch.endGeneration(vehicleId);
    }
  }

  private renderTile(label: string, frameUrls: string[],
                     timestep: number): void {
    const tile = document.createElement("div");
    tile.className = "tile";
    const caption = document.createElement("div");
    caption.textContent = label;
    const img = document.createElement("img");
    let index = 0;
    img.src = frameUrls[0];
    const timer = window.setInterval(() => {
      index = (index + 1) % frameUrls.length;
      img.src = frameUrls[index];
    }, timestep * 1000);
    this.timers.push(timer);
    tile.appendChild(img);
    tile.appendChild(caption);
    this.ui.strip.appendChild(tile);
  }

  private redraw(): void {
    const ctx = this.ui.frameCanvas.getContext("2d");
    if (!ctx || !this.session || !this.sketch) return;
    ctx.clearRect(0, 0, this.ui.frameCanvas.width, this.ui.frameCanvas.height);
    if (this.frameImage) ctx.drawImage(this.frameImage, 0, 0);
    ctx.lineWidth = 1.5;
    for (const v of this.session.vehicles) {
      if (!v.bbox) continue;
      ctx.strokeStyle = v.id === this.sketch.activeVehicle
        ? "#ffd23f" : "#3fa7d6";
      ctx.strokeRect(v.bbox[0], v.bbox[1], v.bbox[2], v.bbox[3]);
    }
    if (this.sketch.points.length > 0) {
      ctx.strokeStyle = this.sketch.lastClamped ? "#ff6b6b" : "#7cff6b";
      ctx.beginPath();
      ctx.moveTo(this.sketch.points[0][0], this.sketch.points[0][1]);
      for (const [x, y] of this.sketch.points.slice(1)) ctx.lineTo(x, y);
      ctx.stroke();
      for (const [x, y] of this.sketch.points) {
        ctx.beginPath();
        ctx.arc(x, y, 2.5, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }
  }
}

export function start(): void {
  const ui: Elements = {
    bundleInput: el("bundle"),
    openButton: el("open"),
    status: el("status"),
    frameCanvas: el("frame"),
    modeSelect: el("mode"),
    horizonSelect: el("horizon"),
    clearButton: el("clear"),
    generateButton: el("generate"),
    errorBadge: el("error"),
    strip: el("strip"),
  };
  new StudioApp(ui, window.location.origin);
}

if (typeof document !== "undefined" && document.getElementById("frame")) {
  start();
}
