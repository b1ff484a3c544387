/**
 * Shared test fixtures: an in-memory storage, canned provenance shaped like
 * the seeded demo corpus (one public handbook, one design-restricted note),
 * and a mock service that filters provenance by user the way the real
 * service does. The mock exists so the suite can assert the UI renders
 * exactly what the wire carries; it implements no logic of its own beyond
 * picking a canned response per user.
 */

import type { FetchLike, ProvenanceCard, QueryResult } from "../src/api.js";
import type { StorageLike } from "../src/session.js";

export class MemoryStorage implements StorageLike {
  private data = new Map<string, string>();

  getItem(key: string): string | null {
    return this.data.get(key) ?? null;
  }

  setItem(key: string, value: string): void {
    this.data.set(key, value);
  }
}

export const PUBLIC_CARD: ProvenanceCard = {
  chunk_id: "dpub00-c00000",
  doc_id: "dpub00",
  category: "Timing",
  access_groups: [],
  fused_score: 0.03278688524590164,
};

export const RESTRICTED_CARD: ProvenanceCard = {
  chunk_id: "dsec01-c00000",
  doc_id: "dsec01",
  category: "DesignGuide",
  access_groups: ["design"],
  fused_score: 0.032,
};

export function result(overrides: Partial<QueryResult> = {}): QueryResult {
  return {
    answer: "Check the slack report.",
    provenance: [PUBLIC_CARD],
    degraded: false,
    timing_ms: 4.2,
    ...overrides,
  };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

/** Demo-corpus stand-in: design users see the restricted chunk, everyone
 * else only the public one. Records every request body it receives. */
export function demoService(): { fetchFn: FetchLike; requests: unknown[] } {
  const requests: unknown[] = [];
  const fetchFn: FetchLike = async (input, init) => {
    if (!input.endsWith("/v1/query")) return jsonResponse(404, { error: "no such route" });
    const body = JSON.parse(String(init?.body ?? "{}"));
    requests.push(body);
    const provenance =
      body.user_id === "alice" ? [RESTRICTED_CARD, PUBLIC_CARD] : [PUBLIC_CARD];
    return jsonResponse(200, result({ provenance }));
  };
  return { fetchFn, requests };
}

export function cannedFetch(status: number, body: unknown): FetchLike {
  return async () => jsonResponse(status, body);
}
