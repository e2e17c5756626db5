// Typed fetch wrappers for the registration service.
//
// Every mutation cites the revision it was based on; a stale write comes
// back as HTTP 409 carrying the server's current state so the client can
// reconcile instead of clobbering someone else's edit.

import { PoseRecord } from "./pose.js";

export interface FrameInfo {
  id: string;
  url: string;
}

export interface PoseState {
  revision: number;
  pose: PoseRecord;
}

export interface SaveResult {
  revision: number;
  path: string;
}

/** Error raised for non-2xx responses; `detail` is the parsed JSON body's
 * `detail` field when there is one (FastAPI convention), else the raw text. */
export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }

  /** Server state attached to a conflict response, if present. */
  conflictState(): PoseState | null {
    if (
      this.status === 409 &&
      typeof this.detail === "object" &&
      this.detail !== null &&
      "revision" in this.detail &&
      "pose" in this.detail
    ) {
      const d = this.detail as { revision: number; pose: PoseRecord };
      return { revision: d.revision, pose: d.pose };
    }
    return null;
  }
}

async function raiseFor(r: Response): Promise<never> {
  const text = await r.text();
  let detail: unknown = text;
  try {
    const body = JSON.parse(text);
    if (typeof body === "object" && body !== null && "detail" in body) {
      detail = (body as { detail: unknown }).detail;
    }
  } catch {
    // non-JSON error body; keep the raw text
  }
  throw new ApiError(r.status, detail);
}

async function getJson<T>(url: string): Promise<T> {
  const r = await fetch(url);
  if (!r.ok) {
    await raiseFor(r);
  }
  return (await r.json()) as T;
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  const r = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!r.ok) {
    await raiseFor(r);
  }
  return (await r.json()) as T;
}

export interface Client {
  listFrames(): Promise<FrameInfo[]>;
  frameUrl(id: string): string;
  getPose(id: string): Promise<PoseState>;
  /** Write `pose` on top of `revision`; throws ApiError(409) when stale. */
  writePose(id: string, revision: number, pose: PoseRecord): Promise<PoseState>;
  saveGroundTruth(id: string): Promise<SaveResult>;
  renderOverlay(id: string, pose: PoseRecord, opacity: number): Promise<ArrayBuffer>;
}

export function makeClient(base = ""): Client {
  return {
    async listFrames() {
      const body = await getJson<{ frames: FrameInfo[] }>(`${base}/api/frames`);
      return body.frames;
    },

    frameUrl(id: string) {
      return `${base}/api/frame/${encodeURIComponent(id)}`;
    },

    getPose(id: string) {
      return getJson<PoseState>(`${base}/api/pose/${encodeURIComponent(id)}`);
    },

    writePose(id: string, revision: number, pose: PoseRecord) {
      return postJson<PoseState>(`${base}/api/pose/${encodeURIComponent(id)}`, {
        revision,
        pose,
      });
    },

    saveGroundTruth(id: string) {
      return postJson<SaveResult>(`${base}/api/pose/${encodeURIComponent(id)}/save`, {});
    },

    async renderOverlay(id: string, pose: PoseRecord, opacity: number) {
      const r = await fetch(`${base}/api/render`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ frame: id, pose, opacity }),
      });
      if (!r.ok) {
        await raiseFor(r);
      }
      return r.arrayBuffer();
    },
  };
}
