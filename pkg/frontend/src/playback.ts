/** Clip playback timing and the side-by-side comparison strip. */

import { ClipManifest } from "./types.js";

export class PlaybackClock {
  constructor(public frameCount: number, public timestepSeconds: number) {
    if (frameCount < 1) throw new Error("playback needs at least one frame");
    if (timestepSeconds <= 0) throw new Error("timestep must be positive");
  }

  /** Looping frame index at a given elapsed time. */
  frameAt(elapsedSeconds: number): number {
    const step = Math.floor(elapsedSeconds / this.timestepSeconds);
    return ((step % this.frameCount) + this.frameCount) % this.frameCount;
  }

  periodSeconds(): number {
    return this.frameCount * this.timestepSeconds;
  }
}

export interface ClipTile {
  manifest: ClipManifest;
  label: string;
  frameUrls: string[];
  clock: PlaybackClock;
}

/** Generated clips accumulate here so alternative futures can be
 * compared side by side. */
export class ComparisonStrip {
  tiles: ClipTile[] = [];

  add(manifest: ClipManifest, toAbsolute: (path: string) => string): ClipTile {
    const tile: ClipTile = {
      manifest,
      label: `${manifest.clip_id} (${manifest.mode}, ` +
        `${manifest.frames.length} frames @ ${manifest.timestep}s)`,
      frameUrls: manifest.frames.map(toAbsolute),
      clock: new PlaybackClock(manifest.frames.length, manifest.timestep),
    };
    this.tiles.push(tile);
    return tile;
  }

  clear(): void {
    this.tiles = [];
  }
}
