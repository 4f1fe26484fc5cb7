/** Console state machine, DOM-free.
 *
 * All mutation happens through a single serialized event queue: telemetry
 * lines, poll results and button presses are appended as events and applied
 * one at a time, so the view never sees a half-applied update regardless of
 * how the async sources interleave.
 */

import { ResidualChart } from "./chart.js";
import { TaskLog } from "./tasklog.js";
import type {
  ConstraintKindName,
  Overlay,
  SessionSnapshot,
  TelemetryLine,
} from "./types.js";
import { isEndLine } from "./types.js";

export type Connection = "idle" | "connecting" | "live" | "error";

export interface StartResult {
  ok: boolean;
  sessionId?: string;
  conflict?: boolean;
  status?: number;
  detail?: string;
}

/** The slice of the HTTP client the state machine needs; injected so tests
 * can run without a server. */
export interface SessionApi {
  startSession(
    prompt: string,
    kinds: ConstraintKindName[],
    reset: boolean,
  ): Promise<StartResult>;
  abortSession(sessionId: string): Promise<void>;
  streamTelemetry(
    sessionId: string,
    onLine: (line: TelemetryLine) => void,
  ): Promise<void>;
}

export type ConsoleEvent =
  | { type: "telemetry"; line: TelemetryLine }
  | { type: "stream-closed" }
  | { type: "stream-error"; detail: string }
  | { type: "session-started"; sessionId: string }
  | { type: "banner"; text: string }
  | { type: "clear-banner" };

export class ConsoleState {
  connection: Connection = "idle";
  promptDraft = "";
  selectedKinds: Set<ConstraintKindName> = new Set(["p2p"]);
  sessionId: string | null = null;
  /** Mirrors the server's attempt counter verbatim; never computed locally. */
  attempt: number | null = null;
  lastStatus: string | null = null;
  lastOutcome: string | null = null;
  lastError: string | null = null;
  graspSuccess: boolean | null = null;
  overlay: Overlay | null = null;
  banner: string | null = null;
  droppedTotal = 0;
  readonly chart = new ResidualChart();
  readonly taskLog = new TaskLog();

  private queue: ConsoleEvent[] = [];
  private draining = false;
  private listeners: (() => void)[] = [];

  constructor(private readonly api: SessionApi) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  /** Appends an event and drains the queue strictly in order. */
  dispatch(event: ConsoleEvent): void {
    this.queue.push(event);
    if (this.draining) return;
    this.draining = true;
    try {
      while (this.queue.length > 0) {
        const next = this.queue.shift()!;
        this.apply(next);
      }
    } finally {
      this.draining = false;
    }
    this.notify();
  }

  private apply(event: ConsoleEvent): void {
    switch (event.type) {
      case "session-started":
        this.sessionId = event.sessionId;
        this.connection = "live";
        this.banner = null;
        this.chart.clear();
        this.overlay = null;
        this.droppedTotal = 0;
        this.lastStatus = "Running";
        this.lastOutcome = null;
        this.lastError = null;
        this.graspSuccess = null;
        break;
      case "telemetry":
        this.applyTelemetry(event.line);
        break;
      case "stream-closed":
        if (this.connection === "live") this.connection = "idle";
        break;
      case "stream-error":
        this.connection = "error";
        this.banner = `telemetry stream failed: ${event.detail}`;
        break;
      case "banner":
        this.banner = event.text;
        break;
      case "clear-banner":
        this.banner = null;
        break;
    }
  }

  private applyTelemetry(line: TelemetryLine): void {
    this.droppedTotal = line.dropped;
    if (isEndLine(line)) {
      this.attempt = line.attempt;
      this.lastOutcome = line.outcome ?? null;
      this.lastError = line.error ?? null;
      this.graspSuccess = line.grasp_success ?? null;
      this.lastStatus = line.error != null ? "Error" : line.outcome ?? null;
      this.connection = "idle";
      return;
    }
    this.lastStatus = line.status;
    this.overlay = line.overlay;
    this.chart.append(line.step, line.e_norm);
  }

  /** Validates the draft, posts the session and subscribes to telemetry.
   * An empty prompt never reaches the network; a 409 raises the standing
   * conflict banner. */
  async startAttempt(reset = false): Promise<boolean> {
    const prompt = this.promptDraft.trim();
    if (prompt.length === 0) {
      this.dispatch({ type: "banner", text: "prompt must not be empty" });
      return false;
    }
    if (this.selectedKinds.size === 0) {
      this.dispatch({ type: "banner", text: "select at least one constraint kind" });
      return false;
    }
    this.connection = "connecting";
    this.notify();
    let result: StartResult;
    try {
      result = await this.api.startSession(prompt, [...this.selectedKinds], reset);
    } catch (err) {
      this.connection = "error";
      this.dispatch({ type: "banner", text: `request failed: ${String(err)}` });
      return false;
    }
    if (result.conflict) {
      this.connection = "idle";
      this.dispatch({ type: "banner", text: "session already running" });
      return false;
    }
    if (!result.ok || result.sessionId == null) {
      this.connection = "error";
      this.dispatch({
        type: "banner",
        text: `start failed (${result.status ?? "?"}): ${result.detail ?? "unknown"}`,
      });
      return false;
    }
    this.dispatch({ type: "session-started", sessionId: result.sessionId });
    void this.api
      .streamTelemetry(result.sessionId, (line) =>
        this.dispatch({ type: "telemetry", line }),
      )
      .then(
        () => this.dispatch({ type: "stream-closed" }),
        (err) => this.dispatch({ type: "stream-error", detail: String(err) }),
      );
    return true;
  }

  async abortAttempt(): Promise<void> {
    if (this.sessionId == null) return;
    await this.api.abortSession(this.sessionId);
  }

  /** Folds a terminal snapshot into the task log. */
  recordOutcome(category: string, name: string, snapshot: SessionSnapshot): void {
    this.taskLog.add({
      category,
      name,
      success: snapshot.grasp_success === true,
      attempts: snapshot.attempt,
      outcome: snapshot.error != null ? "Error" : snapshot.outcome ?? snapshot.status,
    });
  }
}
