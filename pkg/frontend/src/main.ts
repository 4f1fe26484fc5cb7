/** Browser entry point: wires the state machine to the DOM.
 *
 * The camera frame refreshes on a fixed 2 Hz poll; telemetry arrives pushed
 * over the NDJSON stream. Everything else is plain DOM plumbing.
 */

import { ServoClient } from "./api.js";
import { blendMask, buildOverlayShapes } from "./overlay.js";
import { ConsoleState } from "./state.js";
import { ALL_KINDS, type Frame, type ProbMap } from "./types.js";

const FRAME_POLL_MS = 500;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const client = new ServoClient("");
  const state = new ConsoleState(client);

  const viewCanvas = el<HTMLCanvasElement>("view");
  const chartCanvas = el<HTMLCanvasElement>("chart");
  const promptInput = el<HTMLInputElement>("prompt");
  const providerInput = el<HTMLInputElement>("provider");
  const opacityInput = el<HTMLInputElement>("opacity");
  const maskToggle = el<HTMLInputElement>("show-mask");
  const resetToggle = el<HTMLInputElement>("reset-pose");
  const startBtn = el<HTMLButtonElement>("start");
  const abortBtn = el<HTMLButtonElement>("abort");
  const exportBtn = el<HTMLButtonElement>("export-log");
  const bannerBox = el<HTMLDivElement>("banner");
  const statusBox = el<HTMLSpanElement>("status");
  const attemptBox = el<HTMLSpanElement>("attempt");
  const droppedBox = el<HTMLSpanElement>("dropped");
  const kindsBox = el<HTMLDivElement>("kinds");
  const logBody = el<HTMLTableSectionElement>("log-body");

  let frame: Frame | null = null;
  let mask: ProbMap | null = null;

  // one checkbox per constraint kind, p2p on by default
  for (const kind of ALL_KINDS) {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.value = kind;
    box.checked = state.selectedKinds.has(kind);
    box.addEventListener("change", () => {
      if (box.checked) state.selectedKinds.add(kind);
      else state.selectedKinds.delete(kind);
    });
    label.appendChild(box);
    label.appendChild(document.createTextNode(kind));
    kindsBox.appendChild(label);
  }

  promptInput.addEventListener("input", () => {
    state.promptDraft = promptInput.value;
  });

  startBtn.addEventListener("click", () => {
    void state.startAttempt(resetToggle.checked);
  });
  abortBtn.addEventListener("click", () => {
    void state.abortAttempt();
  });
  exportBtn.addEventListener("click", () => {
    const blob = new Blob([state.taskLog.toCsv()], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "task-log.csv";
    a.click();
    URL.revokeObjectURL(a.href);
  });

  function paintView(): void {
    if (frame === null) return;
    viewCanvas.width = frame.width;
    viewCanvas.height = frame.height;
    const ctx = viewCanvas.getContext("2d");
    if (ctx === null) return;
    const shown: Frame = {
      width: frame.width,
      height: frame.height,
      rgba: new Uint8ClampedArray(frame.rgba),
    };
    if (maskToggle.checked && mask !== null) {
      const ok = blendMask(shown, mask, Number(opacityInput.value));
      if (!ok) {
        state.dispatch({
          type: "banner",
          text: "mask dimensions do not match the frame; overlay suppressed",
        });
      }
    }
    ctx.putImageData(new ImageData(shown.rgba, shown.width, shown.height), 0, 0);
    if (state.overlay !== null) {
      for (const shape of buildOverlayShapes(state.overlay, shown.width, shown.height)) {
        ctx.strokeStyle = shape.color;
        ctx.lineWidth = 1.5;
        if (shape.shape === "segment") {
          ctx.beginPath();
          ctx.moveTo(shape.from[0], shape.from[1]);
          ctx.lineTo(shape.to[0], shape.to[1]);
          ctx.stroke();
        } else {
          ctx.beginPath();
          ctx.arc(shape.u, shape.v, 5, 0, 2 * Math.PI);
          ctx.stroke();
        }
      }
    }
  }

  function paintChart(): void {
    const ctx = chartCanvas.getContext("2d");
    if (ctx === null) return;
    ctx.clearRect(0, 0, chartCanvas.width, chartCanvas.height);
    const pts = state.chart.polyline(chartCanvas.width, chartCanvas.height);
    if (pts.length === 0) return;
    ctx.strokeStyle = "#40c4ff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(pts[0][0], pts[0][1]);
    for (const [x, y] of pts.slice(1)) ctx.lineTo(x, y);
    ctx.stroke();
  }

  function paintLog(): void {
    logBody.textContent = "";
    for (const s of state.taskLog.stats()) {
      const tr = document.createElement("tr");
      for (const cell of [s.category, `${s.tasks}`, `${s.successes}`, s.rate.toFixed(4)]) {
        const td = document.createElement("td");
        td.textContent = cell;
        tr.appendChild(td);
      }
      logBody.appendChild(tr);
    }
  }

  state.onChange(() => {
    bannerBox.textContent = state.banner ?? "";
    bannerBox.style.display = state.banner === null ? "none" : "block";
    statusBox.textContent = state.lastStatus ?? "-";
    attemptBox.textContent = state.attempt === null ? "-" : `${state.attempt}`;
    droppedBox.textContent = `${state.droppedTotal}`;
    abortBtn.disabled = state.connection !== "live";
    startBtn.disabled = state.connection === "live" || state.connection === "connecting";
    paintView();
    paintChart();
    paintLog();
  });

  async function pollFrame(): Promise<void> {
    try {
      frame = await client.getView();
      const prompt = state.promptDraft.trim();
      if (maskToggle.checked && prompt.length > 0) {
        const provider = providerInput.value.trim();
        mask = await client.getMask(prompt, provider.length > 0 ? provider : undefined);
      } else {
        mask = null;
      }
      paintView();
    } catch {
      // the next poll retries; a dead server just freezes the frame
    }
  }

  void pollFrame();
  window.setInterval(() => void pollFrame(), FRAME_POLL_MS);
}

main();
