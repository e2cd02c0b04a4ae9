import { writeFileSync } from 'fs';
import { CSV_COLUMNS } from '../src/csv.js';

export interface FixtureSeries {
  outputsPerJob: number;
  useAltDir: boolean;
  backend: string;
  scheduleDurations: number[];
  finishDurations: number[];
}

/** Deterministic two-series workload shaped like a real harness run. */
export function twoSeries(n = 40): FixtureSeries[] {
  const wave = (i: number, base: number, amp: number) =>
    base + amp * (((i * 37) % 11) / 10);
  return [
    {
      outputsPerJob: 4,
      useAltDir: false,
      backend: 'sim',
      scheduleDurations: Array.from({ length: n }, (_, i) => wave(i, 0.4, 0.2)),
      finishDurations: Array.from({ length: n }, (_, i) => wave(i, 1.1, 0.5)),
    },
    {
      outputsPerJob: 8,
      useAltDir: true,
      backend: 'sim',
      scheduleDurations: Array.from({ length: n }, (_, i) => wave(i, 0.55, 0.25)),
      finishDurations: Array.from({ length: n }, (_, i) => wave(i, 1.6, 0.8)),
    },
  ];
}

export function writeFixtureCsv(path: string, series: FixtureSeries[]): void {
  const rows: string[] = [CSV_COLUMNS.join(',')];
  let files = 1;
  for (const s of series) {
    s.scheduleDurations.forEach((d, i) => {
      rows.push(
        `SCHEDULE,${i},${d},${s.outputsPerJob},${s.useAltDir},${files},${s.backend}`,
      );
    });
  }
  for (const s of series) {
    s.finishDurations.forEach((d, i) => {
      files += s.outputsPerJob;
      rows.push(
        `FINISH,${i},${d},${s.outputsPerJob},${s.useAltDir},${files},${s.backend}`,
      );
    });
  }
  writeFileSync(path, rows.join('\n') + '\n');
}
