/** Typed client for the chain service.
 *
 * The client is the single funnel for mutations and enforces the
 * preview-before-run rule: a run request for a block is only issued after
 * that block's preview has been fetched at the session's current version.
 */

import type {
  ChainDoc,
  ChainListing,
  PreviewDoc,
  RunDoc,
  SessionSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ConflictError extends ApiError {
  constructor(public readonly currentVersion: number, detail: unknown) {
    super(409, detail);
  }
}

export interface RequestLogEntry {
  method: string;
  path: string;
}

type FetchLike = typeof fetch;

export class ApiClient {
  /** Every request, in order; lets tests audit preview-before-run. */
  readonly requestLog: RequestLogEntry[] = [];

  // (stepId, blockOrAll) -> session version the preview was fetched at
  private previewVersions = new Map<string, number>();

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    this.requestLog.push({ method, path });
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = resp.status === 204 ? null : await resp.json();
    if (!resp.ok) {
      const detail = (payload as { detail?: unknown })?.detail ?? payload;
      if (resp.status === 409) {
        const current = (detail as { currentVersion?: number })?.currentVersion ?? -1;
        throw new ConflictError(current, detail);
      }
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  listChains(): Promise<ChainListing[]> {
    return this.request("GET", "/api/chains");
  }

  getChain(chainId: string): Promise<ChainDoc> {
    return this.request("GET", `/api/chains/${chainId}`);
  }

  registerChain(doc: ChainDoc): Promise<{ id: string }> {
    return this.request("POST", "/api/chains", doc);
  }

  createSession(chainId: string): Promise<SessionSnapshot> {
    return this.request("POST", "/api/sessions", { chainId });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/api/sessions/${sessionId}`);
  }

  async patchEntry(
    sessionId: string,
    entryId: string,
    baseVersion: number,
    patch: { text?: string; frozen?: boolean; delete?: boolean },
  ): Promise<{ version: number }> {
    const result = await this.request<{ version: number }>(
      "PATCH",
      `/api/sessions/${sessionId}/entries/${entryId}`,
      { ...patch, baseVersion },
    );
    this.previewVersions.clear(); // entry edits invalidate fetched previews
    return result;
  }

  async patchStructure(
    sessionId: string,
    baseVersion: number,
    edit: Record<string, unknown>,
  ): Promise<{ version: number }> {
    const result = await this.request<{ version: number }>(
      "PATCH",
      `/api/sessions/${sessionId}/structure`,
      { edit, baseVersion },
    );
    this.previewVersions.clear();
    return result;
  }

  async preview(sessionId: string, stepId: string, block: number): Promise<PreviewDoc> {
    const doc = await this.request<PreviewDoc>(
      "GET",
      `/api/sessions/${sessionId}/steps/${stepId}/preview?block=${block}`,
    );
    this.previewVersions.set(`${stepId}#${block}`, doc.version);
    return doc;
  }

  /** True when every targeted block has a preview at the given version. */
  hasCurrentPreview(stepId: string, block: number | "all", version: number, blockCount = 0): boolean {
    if (block !== "all") {
      return this.previewVersions.get(`${stepId}#${block}`) === version;
    }
    for (let i = 0; i < blockCount; i += 1) {
      if (this.previewVersions.get(`${stepId}#${i}`) !== version) return false;
    }
    return blockCount > 0;
  }

  /** Run a block (or all blocks), fetching any missing previews first. */
  async runStep(
    sessionId: string,
    stepId: string,
    block: number | "all",
    options: { mode?: "full" | "stale"; blockCount?: number } = {},
  ): Promise<{ runId: string }> {
    const session = await this.getSession(sessionId);
    const targets =
      block === "all"
        ? Array.from({ length: options.blockCount ?? 1 }, (_, i) => i)
        : [block];
    for (const index of targets) {
      if (!this.hasCurrentPreview(stepId, index, session.version)) {
        await this.preview(sessionId, stepId, index);
      }
    }
    const mode = options.mode ?? "full";
    return this.request(
      "POST",
      `/api/sessions/${sessionId}/steps/${stepId}/run?block=${block}&mode=${mode}`,
    );
  }

  getRun(sessionId: string, runId: string): Promise<RunDoc> {
    return this.request("GET", `/api/sessions/${sessionId}/runs/${runId}`);
  }

  /** Poll a run until done. Interval defaults to the UI's 500 ms cadence. */
  async waitForRun(
    sessionId: string,
    runId: string,
    intervalMs = 500,
    timeoutMs = 30000,
  ): Promise<RunDoc> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const run = await this.getRun(sessionId, runId);
      if (run.status === "done") return run;
      if (Date.now() > deadline) throw new Error(`run ${runId} timed out`);
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  postEvent(sessionId: string, event: Record<string, unknown>): Promise<{ count: number }> {
    return this.request("POST", `/api/sessions/${sessionId}/events`, event);
  }

  getStats(sessionId: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/api/sessions/${sessionId}/stats`);
  }
}
