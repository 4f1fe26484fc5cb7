/** Wire types for the servobench HTTP API. */

export type ConstraintKindName = "p2p" | "p2l" | "l2l" | "par";

export const ALL_KINDS: ConstraintKindName[] = ["p2p", "p2l", "l2l", "par"];

/** Pixel-space constraint geometry sent with every telemetry step. */
export interface Overlay {
  points: [number, number][];
  lines: [number, number, number][]; // a*u + b*v + c = 0, unit-normalized
}

/** One servo step as streamed over /session/{id}/telemetry. */
export interface StepLine {
  step: number;
  q: number[];
  e: number[];
  e_norm: number;
  status: string;
  overlay: Overlay;
  dropped: number;
}

/** Stream terminator; also carries the server-side attempt counter. */
export interface EndLine {
  event: "end";
  attempt: number;
  outcome?: string;
  steps?: number;
  grasp_success?: boolean;
  final_error_norm?: number | null;
  error?: string;
  dropped: number;
}

export type TelemetryLine = StepLine | EndLine;

export function isEndLine(line: TelemetryLine): line is EndLine {
  return (line as EndLine).event === "end";
}

/** GET /session/{id} snapshot. */
export interface SessionSnapshot {
  session_id: string;
  prompt: string;
  kinds: ConstraintKindName[];
  provider: string;
  attempt: number;
  status: string;
  running: boolean;
  steps: number;
  outcome?: string;
  grasp_success?: boolean;
  final_error_norm?: number | null;
  error?: string;
}

/** GET /scene (only the parts the console reads). */
export interface SceneDoc {
  camera: { resolution: [number, number] };
  primitives: unknown[];
}

/** A decoded RGB(A) frame from /view. */
export interface Frame {
  width: number;
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>; // width * height * 4
}

/** A decoded probability map from /mask. */
export interface ProbMap {
  width: number;
  height: number;
  values: Float32Array; // row-major, top-down, in [0, 1]
}
