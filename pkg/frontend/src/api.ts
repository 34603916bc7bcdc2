import { buildQueryPayload } from "./payload.js";
import type { QueryResponse, QuerySelection, TrackInfo, Weights } from "./types.js";

/**
 * Thin client over the retrieval service. One query may be in flight at a
 * time: submitting again aborts the pending request.
 */
export class ApiClient {
  private pending: AbortController | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch.bind(globalThis),
  ) {}

  async health(): Promise<{ status: string; tracks: number }> {
    const response = await this.fetchImpl(this.baseUrl + "/api/health");
    if (!response.ok) throw new Error(`health check failed (${response.status})`);
    return response.json();
  }

  async tracks(): Promise<TrackInfo[]> {
    const response = await this.fetchImpl(this.baseUrl + "/api/tracks");
    if (!response.ok) throw new Error(`track listing failed (${response.status})`);
    return response.json();
  }

  audioUrl(trackId: string): string {
    return `${this.baseUrl}/api/audio/${encodeURIComponent(trackId)}`;
  }

  async query(selection: QuerySelection, weights: Weights, k: number): Promise<QueryResponse> {
    this.pending?.abort();
    const controller = new AbortController();
    this.pending = controller;
    try {
      const response = await this.fetchImpl(this.baseUrl + "/api/query", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: buildQueryPayload(selection, weights, k),
        signal: controller.signal,
      });
      if (!response.ok) {
        let detail = `query failed (${response.status})`;
        try {
          const body = await response.json();
          if (body.detail) detail = String(body.detail);
        } catch {
          // keep the generic message
        }
        throw new Error(detail);
      }
      return await response.json();
    } finally {
      if (this.pending === controller) this.pending = null;
    }
  }
}
