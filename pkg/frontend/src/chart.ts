/** Residual-norm strip chart backing store.
 *
 * Values are kept exactly as streamed: no smoothing, no resampling. The
 * only processing is the pixel-space projection done at draw time.
 */

export interface ChartPoint {
  step: number;
  value: number;
}

export class ResidualChart {
  private series: ChartPoint[] = [];

  append(step: number, value: number): void {
    this.series.push({ step, value });
  }

  clear(): void {
    this.series = [];
  }

  get length(): number {
    return this.series.length;
  }

  /** Stored values, in arrival order, bit-identical to what was appended. */
  values(): number[] {
    return this.series.map((p) => p.value);
  }

  steps(): number[] {
    return this.series.map((p) => p.step);
  }

  /** Projects the series into pixel space for a width x height canvas.
   * Returns [] when there is nothing to draw. */
  polyline(width: number, height: number, pad = 4): [number, number][] {
    if (this.series.length === 0) return [];
    const steps = this.steps();
    const vals = this.values();
    const minStep = steps[0];
    const maxStep = steps[steps.length - 1];
    const top = Math.max(...vals);
    const spanX = Math.max(maxStep - minStep, 1);
    const spanY = Math.max(top, 1e-12);
    const innerW = width - 2 * pad;
    const innerH = height - 2 * pad;
    return this.series.map((p) => [
      pad + ((p.step - minStep) / spanX) * innerW,
      pad + (1 - p.value / spanY) * innerH,
    ]);
  }
}
