// Typed client for the dupaudit annotation/replacement HTTP API.
// The server is the single source of truth; every call maps to one request.

export type LabelValue = "exact" | "near" | "similar" | "different";

export interface Progress {
  counts: Record<LabelValue, number>;
  consecutive_different: number;
  stop_threshold: number;
  cursor: number;
  queue_length: number;
  state: "active" | "completed";
}

export interface SessionInfo extends Progress {
  phase: "annotation" | "replacement" | "done";
  provenance: { test_features_sha256: string; train_features_sha256: string };
  replacement: {
    targets: number;
    position: number;
    decisions: number;
    approved: number;
    exhausted: { target_index: number; class_index: number }[];
  } | null;
}

export interface PairPayload {
  status: "ok";
  pair_id: number;
  query_index: number;
  neighbor_split: "train" | "test";
  neighbor_index: number;
  distance: number;
  test_image_url: string;
  neighbor_image_url: string;
  diff_image_url: string;
  progress: Progress;
}

export type NextPair = PairPayload | ({ status: "session-complete" } & Progress);

export interface NeighborPayload {
  split: string;
  index: number;
  distance: number;
  image_url: string;
}

export interface CandidatePayload {
  status: "ok";
  candidate_id: number;
  target_index: number;
  class_index: number;
  class_name: string | null;
  candidate_image_url: string;
  target_image_url: string;
  neighbors: NeighborPayload[];
}

export type NextCandidate =
  | CandidatePayload
  | {
      status: "pool-exhausted";
      target_index: number;
      class_index: number;
      class_name: string | null;
    }
  | { status: "replacement-complete"; decisions: number; exhausted: unknown[] };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, init);
  const body = (await response.json()) as T & { error?: string; code?: string };
  if (!response.ok) {
    throw new ApiError(response.status, body.code ?? "unknown", body.error ?? response.statusText);
  }
  return body;
}

export class AuditApi {
  constructor(private readonly base: string = "") {}

  getSession(): Promise<SessionInfo> {
    return request<SessionInfo>(this.base, "/api/session");
  }

  getProgress(): Promise<Progress> {
    return request<Progress>(this.base, "/api/progress");
  }

  getNextPair(): Promise<NextPair> {
    return request<NextPair>(this.base, "/api/pairs/next");
  }

  postLabel(pairId: number, label: LabelValue): Promise<{ status: "ok"; progress: Progress }> {
    return request(this.base, `/api/pairs/${pairId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label }),
    });
  }

  getNextCandidate(): Promise<NextCandidate> {
    return request<NextCandidate>(this.base, "/api/candidates/next");
  }

  postDecision(candidateId: number, approved: boolean): Promise<{ status: "ok" }> {
    return request(this.base, `/api/candidates/${candidateId}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ approved }),
    });
  }
}
