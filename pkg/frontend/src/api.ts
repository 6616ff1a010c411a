/** Thin client for the five service endpoints; fetch is injectable so
 * tests can capture exactly what goes over the wire. */

import { ClipManifest, FutureRequest, SessionDescriptor } from "./types.js";

export interface FetchResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string }
) => Promise<FetchResponse>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function raise(resp: FetchResponse): Promise<never> {
  let message = `request failed with status ${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: string };
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(resp.status, message);
}

export class StudioApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = fetch as unknown as FetchLike
  ) {}

  async openSession(bundle: string): Promise<SessionDescriptor> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ bundle }),
    });
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as SessionDescriptor;
  }

  /** The polyline is sent verbatim: resampling is the server's contract. */
  async generateFuture(
    sessionId: string,
    request: FutureRequest
  ): Promise<ClipManifest> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/sessions/${sessionId}/futures`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
      }
    );
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as ClipManifest;
  }

  frameUrl(sessionId: string, index: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/frame/${index}`;
  }

  backgroundUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/background`;
  }

  /** Clip frame refs in manifests are service-absolute paths. */
  absolute(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
