// Thin typed client over the triage service. The UI never caches
// authoritative state: every view is rebuilt from these calls.

import type {
  Finding,
  Group,
  PromoteResponse,
  RunSummary,
  VerdictAck,
} from "./types.js";

export interface ApiSettings {
  baseUrl: string;
  token?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }

  /** 409s mean the run was busy or temporarily unreadable; worth retrying. */
  get retryable(): boolean {
    return this.status === 409 || this.status >= 500;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class TriageApi {
  private fetchFn: FetchLike;

  constructor(
    private settings: ApiSettings,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.settings.token) headers["Authorization"] = `Bearer ${this.settings.token}`;
    return headers;
  }

  private url(path: string): string {
    return this.settings.baseUrl.replace(/\/$/, "") + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.url(path), init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.request("/api/runs", { headers: this.headers() });
  }

  getGroups(runId: string): Promise<Group[]> {
    return this.request(`/api/runs/${runId}/groups`, { headers: this.headers() });
  }

  getGroup(groupId: string): Promise<Group> {
    return this.request(`/api/groups/${groupId}`, { headers: this.headers() });
  }

  getFindings(runId: string): Promise<Finding[]> {
    return this.request(`/api/runs/${runId}/findings`, { headers: this.headers() });
  }

  /** Image pixels always come from this endpoint; the UI never re-encodes. */
  imageUrl(digest: string): string {
    return this.url(`/api/images/${digest}`);
  }

  submitVerdict(verdict: {
    group_id: string;
    decision: string;
    analyst: string;
    note: string;
  }): Promise<VerdictAck> {
    return this.request("/api/verdicts", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(verdict),
    });
  }

  promote(req: {
    run_id: string;
    group_ids: string[];
    target_provider_id: string;
  }): Promise<PromoteResponse> {
    return this.request("/api/sweeps/promote", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(req),
    });
  }
}
