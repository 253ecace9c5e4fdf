import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, ConflictError } from "../src/api.js";

interface Scripted {
  status?: number;
  body: unknown;
}

/** Fetch double: answers by method+path, records nothing itself (the
 * client's requestLog is the audited record). */
function fetchStub(routes: Record<string, Scripted | ((body: unknown) => Scripted)>) {
  const fallback: Scripted = { status: 404, body: { detail: "no route" } };
  const impl = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const key = `${method} ${url}`;
    let scripted = routes[key] ?? fallback;
    if (typeof scripted === "function") {
      scripted = scripted(init?.body ? JSON.parse(String(init.body)) : undefined);
    }
    const status = scripted.status ?? 200;
    return new Response(JSON.stringify(scripted.body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return impl as typeof fetch;
}

const SESSION = {
  id: "s1",
  version: 4,
  chain: { formatVersion: 1, id: "c", name: "c", layers: [], steps: [] },
  entries: {},
  runs: [],
};

describe("error mapping", () => {
  it("turns a 409 into a ConflictError carrying the current version", async () => {
    const client = new ApiClient(
      "http://x",
      fetchStub({
        "PATCH http://x/api/sessions/s1/entries/e1": {
          status: 409,
          body: { detail: { reason: "stale version", currentVersion: 7 } },
        },
      }),
    );
    const err = await client
      .patchEntry("s1", "e1", 3, { text: "hi" })
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ConflictError);
    expect((err as ConflictError).currentVersion).toBe(7);
  });

  it("turns other failures into ApiError with the detail payload", async () => {
    const client = new ApiClient(
      "http://x",
      fetchStub({
        "GET http://x/api/chains/ghost": { status: 404, body: { detail: "unknown chain ghost" } },
      }),
    );
    const err = await client
      .getChain("ghost")
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).detail).toBe("unknown chain ghost");
  });
});

function runRoutes() {
  return {
    "GET http://x/api/sessions/s1": { body: SESSION },
    "GET http://x/api/sessions/s1/steps/split/preview?block=0": {
      body: {
        version: 4,
        block: 0,
        status: "pending",
        prompt: "p",
        temperature: 0,
        maxTokens: 256,
        stop: [],
      },
    },
    "GET http://x/api/sessions/s1/steps/split/preview?block=1": {
      body: {
        version: 4,
        block: 1,
        status: "pending",
        prompt: "p",
        temperature: 0,
        maxTokens: 256,
        stop: [],
      },
    },
    "POST http://x/api/sessions/s1/steps/split/run?block=0&mode=full": { body: { runId: "r1" } },
    "POST http://x/api/sessions/s1/steps/split/run?block=all&mode=full": { body: { runId: "r2" } },
  };
}

describe("preview before run", () => {
  it("fetches the preview before posting a run for an unseen block", async () => {
    const client = new ApiClient("http://x", fetchStub(runRoutes()));
    const { runId } = await client.runStep("s1", "split", 0);
    expect(runId).toBe("r1");
    const paths = client.requestLog.map((r) => `${r.method} ${r.path}`);
    const previewAt = paths.indexOf("GET /api/sessions/s1/steps/split/preview?block=0");
    const runAt = paths.indexOf("POST /api/sessions/s1/steps/split/run?block=0&mode=full");
    expect(previewAt).toBeGreaterThanOrEqual(0);
    expect(runAt).toBeGreaterThan(previewAt);
  });

  it("skips the preview when one is already current for this version", async () => {
    const client = new ApiClient("http://x", fetchStub(runRoutes()));
    await client.preview("s1", "split", 0);
    await client.runStep("s1", "split", 0);
    const previews = client.requestLog.filter((r) => r.path.includes("/preview")).length;
    expect(previews).toBe(1);
  });

  it("refetches the preview after an entry edit bumps the version", async () => {
    const routes = runRoutes();
    const client = new ApiClient(
      "http://x",
      fetchStub({
        ...routes,
        "PATCH http://x/api/sessions/s1/entries/e1": { body: { version: 5 } },
      }),
    );
    await client.preview("s1", "split", 0);
    await client.patchEntry("s1", "e1", 4, { text: "new" });
    await client.runStep("s1", "split", 0);
    const previews = client.requestLog.filter((r) => r.path.includes("/preview")).length;
    expect(previews).toBe(2);
  });

  it("previews every block before a run-all", async () => {
    const client = new ApiClient("http://x", fetchStub(runRoutes()));
    await client.runStep("s1", "split", "all", { blockCount: 2 });
    const paths = client.requestLog.map((r) => r.path);
    expect(paths).toContain("/api/sessions/s1/steps/split/preview?block=0");
    expect(paths).toContain("/api/sessions/s1/steps/split/preview?block=1");
    const runAt = paths.findIndex((p) => p.includes("/run?block=all"));
    expect(runAt).toBe(paths.length - 1);
  });

  it("reports preview currency only for the matching version", async () => {
    const client = new ApiClient("http://x", fetchStub(runRoutes()));
    await client.preview("s1", "split", 0);
    expect(client.hasCurrentPreview("split", 0, 4)).toBe(true);
    expect(client.hasCurrentPreview("split", 0, 5)).toBe(false);
    expect(client.hasCurrentPreview("split", "all", 4, 2)).toBe(false);
    await client.preview("s1", "split", 1);
    expect(client.hasCurrentPreview("split", "all", 4, 2)).toBe(true);
  });
});

describe("polling", () => {
  it("polls a run until it reports done", async () => {
    let calls = 0;
    const client = new ApiClient(
      "http://x",
      fetchStub({
        "GET http://x/api/sessions/s1/runs/r1": () => {
          calls += 1;
          return {
            body: {
              id: "r1",
              stepId: "split",
              status: calls < 3 ? "running" : "done",
              blocks: [],
              records: [],
            },
          };
        },
      }),
    );
    const run = await client.waitForRun("s1", "r1", 1);
    expect(run.status).toBe("done");
    expect(calls).toBe(3);
  });
});
