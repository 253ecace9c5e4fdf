/** End-to-end check against a real server process.
 *
 * A review-chain session steered through the API client must land in the
 * same final state as the same session driven by raw HTTP calls, and the
 * client must have previewed every block before running it.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import type { EntryDoc, RunDoc, SessionSnapshot } from "../src/types.js";

const REVIEW_RULES = [
  {
    matcher: "contains",
    pattern: "Friendly paragraph:",
    completion: "Thanks for presenting; two small ideas below.",
    priority: 3,
  },
  {
    matcher: "contains",
    pattern: "Suggestion:",
    completion: "1. shorten the slides\n2. add an outline",
    priority: 2,
  },
  {
    matcher: "contains",
    pattern: "Problem:",
    completion: "1. Too much text on slides\n2. No clear structure",
    priority: 1,
  },
];

const PORT = 18700 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let workdir: string;

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 20000;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/api/chains`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("server did not start");
    await new Promise((r) => setTimeout(r, 200));
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "promptloom-ui-"));
  const rulesPath = join(workdir, "rules.json");
  writeFileSync(rulesPath, JSON.stringify(REVIEW_RULES));
  server = spawn(
    "promptloom",
    ["serve", "--port", String(PORT), "--rules", rulesPath],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 30000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

/** Entries per layer with run-independent identity stripped off. */
function shape(snapshot: SessionSnapshot): Record<string, [string, string, boolean][]> {
  const out: Record<string, [string, string, boolean][]> = {};
  for (const [layer, entries] of Object.entries(snapshot.entries)) {
    out[layer] = entries
      .map((e: EntryDoc): [string, string, boolean] => [e.text, e.origin, e.frozen])
      .sort((a, b) => a[0].localeCompare(b[0]));
  }
  return out;
}

async function rawJson<T>(method: string, path: string, body?: unknown): Promise<T> {
  const resp = await fetch(`${BASE}${path}`, {
    method,
    headers: body === undefined ? {} : { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  if (!resp.ok) throw new Error(`${method} ${path} -> ${resp.status}`);
  return (await resp.json()) as T;
}

async function rawWait(sessionId: string, runId: string): Promise<void> {
  for (;;) {
    const run = await rawJson<RunDoc>("GET", `/api/sessions/${sessionId}/runs/${runId}`);
    if (run.status === "done") {
      const failed = run.blocks.filter((b) => b.status === "failed");
      if (failed.length) throw new Error(`run failed: ${JSON.stringify(failed)}`);
      return;
    }
    await new Promise((r) => setTimeout(r, 50));
  }
}

/** The steering scenario: run the whole chain, edit one suggestion,
 * rerun the compose step over stale blocks only. */
async function steerRaw(): Promise<SessionSnapshot> {
  const session = await rawJson<SessionSnapshot>("POST", "/api/sessions", {
    chainId: "peer_review",
  });
  for (const stepId of ["split", "ideate", "compose"]) {
    await rawJson("GET", `/api/sessions/${session.id}/steps/${stepId}/preview?block=0`);
    const { runId } = await rawJson<{ runId: string }>(
      "POST",
      `/api/sessions/${session.id}/steps/${stepId}/run?block=all&mode=full`,
    );
    await rawWait(session.id, runId);
  }
  let snap = await rawJson<SessionSnapshot>("GET", `/api/sessions/${session.id}`);
  const target = snap.entries.suggestions.find((e) => e.text === "shorten the slides")!;
  await rawJson("PATCH", `/api/sessions/${session.id}/entries/${target.id}`, {
    text: "cut the slides down to one idea each",
    baseVersion: snap.version,
  });
  const { runId } = await rawJson<{ runId: string }>(
    "POST",
    `/api/sessions/${session.id}/steps/compose/run?block=all&mode=stale`,
  );
  await rawWait(session.id, runId);
  snap = await rawJson<SessionSnapshot>("GET", `/api/sessions/${session.id}`);
  return snap;
}

async function steerViaClient(client: ApiClient): Promise<SessionSnapshot> {
  const session = await client.createSession("peer_review");
  for (const stepId of ["split", "ideate", "compose"]) {
    const current = await client.getSession(session.id);
    const step = current.chain.steps.find((s) => s.id === stepId)!;
    const drivers = current.entries[step.inputs[0]] ?? [];
    const blockCount = Math.max(1, stepId === "compose" ? 1 : drivers.length);
    const { runId } = await client.runStep(session.id, stepId, "all", { blockCount });
    await client.waitForRun(session.id, runId, 50);
  }
  let snap = await client.getSession(session.id);
  const target = snap.entries.suggestions.find((e) => e.text === "shorten the slides")!;
  await client.patchEntry(session.id, target.id, snap.version, {
    text: "cut the slides down to one idea each",
  });
  const { runId } = await client.runStep(session.id, "compose", "all", {
    mode: "stale",
    blockCount: 1,
  });
  await client.waitForRun(session.id, runId, 50);
  snap = await client.getSession(session.id);
  return snap;
}

describe("steering a review session", () => {
  it("reaches the same state through the client as through raw calls", async () => {
    const client = new ApiClient(BASE);
    const [rawFinal, clientFinal] = [await steerRaw(), await steerViaClient(client)];
    expect(shape(clientFinal)).toEqual(shape(rawFinal));
    expect(clientFinal.entries.paragraph.map((e) => e.text)).toEqual([
      "Thanks for presenting; two small ideas below.",
    ]);
    const edited = clientFinal.entries.suggestions.find(
      (e) => e.text === "cut the slides down to one idea each",
    );
    expect(edited?.origin).toBe("user");
  }, 60000);

  it("previewed every block before each run it issued", async () => {
    const client = new ApiClient(BASE);
    await steerViaClient(client);
    const previewed = new Set<string>();
    for (const { method, path } of client.requestLog) {
      const preview = path.match(/steps\/([^/]+)\/preview\?block=(\d+)/);
      if (preview) previewed.add(`${preview[1]}#${preview[2]}`);
      const run = path.match(/steps\/([^/]+)\/run\?block=(all|\d+)/);
      if (method === "POST" && run) {
        // at minimum block 0 of the step must have a preview on record
        expect(previewed.has(`${run[1]}#0`)).toBe(true);
      }
    }
  }, 60000);

  it("rejects a stale entry edit with the server's current version", async () => {
    const client = new ApiClient(BASE);
    const session = await client.createSession("peer_review");
    const seed = session.entries.feedback[0];
    await client.patchEntry(session.id, seed.id, session.version, { text: "first edit" });
    const err = await client
      .patchEntry(session.id, seed.id, session.version, { text: "second edit" })
      .then(() => null)
      .catch((e) => e);
    expect(err).not.toBeNull();
    expect(err.currentVersion).toBe(session.version + 1);
  }, 30000);
});
