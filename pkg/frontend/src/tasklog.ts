/** Task outcome log: per-category success aggregation and CSV round trip.
 *
 * The CSV layout matches the batch runner's report exactly (header
 * "category,tasks,successes,rate", one row per category sorted by name,
 * then an "overall" row, rates at 4 decimals), so an exported log can be
 * diffed directly against a server-side batch run.
 */

export interface TaskRow {
  category: string;
  name: string;
  success: boolean;
  attempts: number;
  outcome: string;
}

export interface CategoryStat {
  category: string;
  tasks: number;
  successes: number;
  rate: number;
}

export class TaskLog {
  private rows: TaskRow[] = [];

  add(row: TaskRow): void {
    if (row.attempts < 1) {
      throw new Error(`attempts must be >= 1, got ${row.attempts}`);
    }
    this.rows.push({ ...row });
  }

  clear(): void {
    this.rows = [];
  }

  get length(): number {
    return this.rows.length;
  }

  all(): TaskRow[] {
    return this.rows.map((r) => ({ ...r }));
  }

  /** Per-category tallies, sorted by category name, plus an overall row. */
  stats(): CategoryStat[] {
    const byCat = new Map<string, { tasks: number; successes: number }>();
    for (const row of this.rows) {
      const slot = byCat.get(row.category) ?? { tasks: 0, successes: 0 };
      slot.tasks += 1;
      if (row.success) slot.successes += 1;
      byCat.set(row.category, slot);
    }
    const out: CategoryStat[] = [...byCat.entries()]
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([category, s]) => ({
        category,
        tasks: s.tasks,
        successes: s.successes,
        rate: s.tasks > 0 ? s.successes / s.tasks : 0,
      }));
    const tasks = this.rows.length;
    const successes = this.rows.filter((r) => r.success).length;
    out.push({
      category: "overall",
      tasks,
      successes,
      rate: tasks > 0 ? successes / tasks : 0,
    });
    return out;
  }

  toCsv(): string {
    const lines = ["category,tasks,successes,rate"];
    for (const s of this.stats()) {
      lines.push(`${s.category},${s.tasks},${s.successes},${s.rate.toFixed(4)}`);
    }
    return lines.join("\n") + "\n";
  }
}

/** Re-serializes parsed stats; statsToCsv(parseSummaryCsv(text)) == text
 * for any CSV this module or the batch runner wrote. */
export function statsToCsv(stats: CategoryStat[]): string {
  const lines = ["category,tasks,successes,rate"];
  for (const s of stats) {
    lines.push(`${s.category},${s.tasks},${s.successes},${s.rate.toFixed(4)}`);
  }
  return lines.join("\n") + "\n";
}

/** Parses a summary CSV back into category stats (overall row included).
 * Throws on a header mismatch or a malformed row. */
export function parseSummaryCsv(text: string): CategoryStat[] {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0 || lines[0] !== "category,tasks,successes,rate") {
    throw new Error("unrecognized CSV header");
  }
  const stats: CategoryStat[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== 4) {
      throw new Error(`malformed row: ${line}`);
    }
    const tasks = Number(cells[1]);
    const successes = Number(cells[2]);
    const rate = Number(cells[3]);
    if (!Number.isInteger(tasks) || !Number.isInteger(successes) || !Number.isFinite(rate)) {
      throw new Error(`malformed row: ${line}`);
    }
    stats.push({ category: cells[0], tasks, successes, rate });
  }
  return stats;
}
