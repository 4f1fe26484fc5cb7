/** HTTP client for the servo service. Uses only fetch and ReadableStream,
 * so it runs unchanged in the browser and under Node. */

import { decodePFM, decodePPM } from "./codecs.js";
import type { StartResult } from "./state.js";
import type {
  ConstraintKindName,
  Frame,
  ProbMap,
  SceneDoc,
  SessionSnapshot,
  TelemetryLine,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ServoClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async getScene(): Promise<SceneDoc> {
    const res = await fetch(this.url("/scene"));
    if (!res.ok) throw new ApiError(`GET /scene -> ${res.status}`, res.status);
    return (await res.json()) as SceneDoc;
  }

  async getView(): Promise<Frame> {
    const res = await fetch(this.url("/view"));
    if (!res.ok) throw new ApiError(`GET /view -> ${res.status}`, res.status);
    return decodePPM(await res.arrayBuffer());
  }

  async getMask(prompt: string, provider?: string): Promise<ProbMap> {
    const params = new URLSearchParams({ prompt });
    if (provider !== undefined) params.set("provider", provider);
    const res = await fetch(this.url(`/mask?${params.toString()}`));
    if (!res.ok) throw new ApiError(`GET /mask -> ${res.status}`, res.status);
    return decodePFM(await res.arrayBuffer());
  }

  async startSession(
    prompt: string,
    kinds: ConstraintKindName[],
    reset = false,
  ): Promise<StartResult> {
    const res = await fetch(this.url("/session"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt, kinds, reset }),
    });
    if (res.status === 409) {
      await res.text();
      return { ok: false, conflict: true, status: 409 };
    }
    if (!res.ok) {
      return { ok: false, status: res.status, detail: await res.text() };
    }
    const body = (await res.json()) as { session_id: string };
    return { ok: true, sessionId: body.session_id, status: res.status };
  }

  async getSnapshot(sessionId: string): Promise<SessionSnapshot> {
    const res = await fetch(this.url(`/session/${sessionId}`));
    if (!res.ok) {
      throw new ApiError(`GET /session/${sessionId} -> ${res.status}`, res.status);
    }
    return (await res.json()) as SessionSnapshot;
  }

  async abortSession(sessionId: string): Promise<void> {
    const res = await fetch(this.url(`/session/${sessionId}/abort`), {
      method: "POST",
    });
    if (!res.ok) {
      throw new ApiError(`POST abort -> ${res.status}`, res.status);
    }
    await res.text();
  }

  /** Reads the NDJSON telemetry stream, invoking onLine once per complete
   * line, in order. Resolves when the server closes the stream. */
  async streamTelemetry(
    sessionId: string,
    onLine: (line: TelemetryLine) => void,
  ): Promise<void> {
    const res = await fetch(this.url(`/session/${sessionId}/telemetry`));
    if (!res.ok || res.body == null) {
      throw new ApiError(`GET telemetry -> ${res.status}`, res.status);
    }
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    let pending = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      pending += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = pending.indexOf("\n")) >= 0) {
        const raw = pending.slice(0, nl).trim();
        pending = pending.slice(nl + 1);
        if (raw.length > 0) onLine(JSON.parse(raw) as TelemetryLine);
      }
    }
    const tail = (pending + decoder.decode()).trim();
    if (tail.length > 0) onLine(JSON.parse(tail) as TelemetryLine);
  }
}
