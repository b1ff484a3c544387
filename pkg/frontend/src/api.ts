/**
 * Typed client for the assistant HTTP API.
 *
 * The fetch implementation is injected so tests can mock the wire without
 * touching globals. All filtering happens server-side; this client only
 * carries the user_id along and surfaces whatever the service returned.
 */

export interface ProvenanceCard {
  chunk_id: string;
  doc_id: string;
  category: string;
  access_groups: string[];
  fused_score: number;
}

export interface QueryResult {
  answer: string;
  provenance: ProvenanceCard[];
  degraded: boolean;
  timing_ms: number;
}

export interface CorpusStats {
  docs: number;
  chunks: number;
  chunks_per_category: Record<string, number>;
  history_entries: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly provenance: ProvenanceCard[];
  readonly degraded: boolean;

  constructor(status: number, message: string, provenance: ProvenanceCard[] = [], degraded = false) {
    super(message);
    this.status = status;
    this.provenance = provenance;
    this.degraded = degraded;
  }
}

async function errorFrom(status: number, res: Response): Promise<ApiError> {
  let message = `request failed with status ${status}`;
  let provenance: ProvenanceCard[] = [];
  let degraded = false;
  try {
    const body = await res.json();
    if (typeof body.error === "string") message = body.error;
    if (Array.isArray(body.provenance)) provenance = body.provenance;
    if (typeof body.degraded === "boolean") degraded = body.degraded;
  } catch {
    // non-JSON error body; keep the status message
  }
  return new ApiError(status, message, provenance, degraded);
}

export class AssistantClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike,
  ) {}

  async query(question: string, userId: string): Promise<QueryResult> {
    const res = await this.fetchFn(`${this.base}/v1/query`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ question, user_id: userId }),
    });
    if (!res.ok) throw await errorFrom(res.status, res);
    return (await res.json()) as QueryResult;
  }

  async stats(): Promise<CorpusStats> {
    const res = await this.fetchFn(`${this.base}/v1/corpus/stats`);
    if (!res.ok) throw await errorFrom(res.status, res);
    return (await res.json()) as CorpusStats;
  }
}
