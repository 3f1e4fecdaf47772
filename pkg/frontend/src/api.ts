// Thin fetch client over the service REST contract, plus job polling.

import { JobRecord, SceneGraphJson, SceneSidecar, Violation } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string, public violations: Violation[] = []) {
    super(message);
  }
}

async function raise(res: Response): Promise<never> {
  let detail: unknown = res.statusText;
  let violations: Violation[] = [];
  try {
    const body = await res.json();
    detail = body.detail ?? detail;
    if (Array.isArray(body.detail)) {
      violations = body.detail as Violation[];
      detail = violations.map((v) => v.message).join("; ");
    }
  } catch {
    // non-JSON error body; keep statusText
  }
  throw new ApiError(res.status, String(detail), violations);
}

export class ApiClient {
  constructor(public base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async postGraph(graph: SceneGraphJson): Promise<string> {
    const res = await fetch(this.url("/graphs"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(graph),
    });
    if (!res.ok) await raise(res);
    return (await res.json()).graph_id as string;
  }

  async getGraph(graphId: string): Promise<SceneGraphJson> {
    const res = await fetch(this.url(`/graphs/${graphId}`));
    if (!res.ok) await raise(res);
    return (await res.json()) as SceneGraphJson;
  }

  async generate(graphId: string, seed?: number, tau?: number): Promise<string> {
    const res = await fetch(this.url("/generate"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ graph_id: graphId, seed, tau }),
    });
    if (!res.ok) await raise(res);
    return (await res.json()).job_id as string;
  }

  async job(jobId: string): Promise<JobRecord> {
    const res = await fetch(this.url(`/jobs/${jobId}`));
    if (!res.ok) await raise(res);
    return (await res.json()) as JobRecord;
  }

  async pollJob(jobId: string, intervalMs = 250, timeoutMs = 180_000): Promise<JobRecord> {
    const start = Date.now();
    for (;;) {
      const rec = await this.job(jobId);
      if (rec.state === "done" || rec.state === "failed") return rec;
      if (Date.now() - start > timeoutMs) throw new ApiError(0, "generation timed out");
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }

  async sceneMeta(sceneId: string): Promise<SceneSidecar> {
    const res = await fetch(this.url(`/scenes/${sceneId}/meta`));
    if (!res.ok) await raise(res);
    return (await res.json()) as SceneSidecar;
  }

  async sceneBytes(sceneId: string): Promise<ArrayBuffer> {
    const res = await fetch(this.url(`/scenes/${sceneId}`));
    if (!res.ok) await raise(res);
    return res.arrayBuffer();
  }

  bevUrl(sceneId: string): string {
    return this.url(`/scenes/${sceneId}/bev`);
  }

  async textToGraph(prompt: string): Promise<SceneGraphJson> {
    const res = await fetch(this.url("/text2graph"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ prompt }),
    });
    if (!res.ok) await raise(res);
    return (await res.json()) as SceneGraphJson;
  }
}
