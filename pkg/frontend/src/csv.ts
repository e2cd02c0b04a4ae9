import { readFileSync } from 'fs';
import Papa from 'papaparse';

/** Exact header contract of the benchmark harness CSV. */
export const CSV_COLUMNS = [
  'phase',
  'job_index',
  'duration_seconds',
  'outputs_per_job',
  'use_alt_dir',
  'files_in_repo_before',
  'backend',
] as const;

export type Phase = 'SCHEDULE' | 'FINISH';

export interface BenchSample {
  phase: Phase;
  jobIndex: number;
  durationSeconds: number;
  outputsPerJob: number;
  useAltDir: boolean;
  filesInRepoBefore: number;
  backend: string;
}

export class SchemaMismatch extends Error {}

function toNumber(raw: string, column: string, row: number): number {
  const value = Number(raw);
  if (raw === '' || Number.isNaN(value)) {
    throw new SchemaMismatch(`row ${row}: ${column} is not a number: '${raw}'`);
  }
  return value;
}

/** Parse a harness CSV; refuses foreign headers and empty data outright. */
export function parseCsv(path: string): BenchSample[] {
  const text = readFileSync(path, 'utf-8');
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  const header = parsed.meta.fields ?? [];
  if (header.join(',') !== CSV_COLUMNS.join(',')) {
    throw new SchemaMismatch(
      `${path}: header [${header.join(',')}] does not match the benchmark schema [${CSV_COLUMNS.join(',')}]`,
    );
  }
  if (parsed.data.length === 0) {
    throw new SchemaMismatch(`${path}: no data rows (header-only CSV)`);
  }
  return parsed.data.map((row, i) => {
    const phase = row.phase;
    if (phase !== 'SCHEDULE' && phase !== 'FINISH') {
      throw new SchemaMismatch(`row ${i}: unknown phase '${phase}'`);
    }
    if (row.use_alt_dir !== 'true' && row.use_alt_dir !== 'false') {
      throw new SchemaMismatch(`row ${i}: use_alt_dir must be true/false, got '${row.use_alt_dir}'`);
    }
    return {
      phase,
      jobIndex: toNumber(row.job_index, 'job_index', i),
      durationSeconds: toNumber(row.duration_seconds, 'duration_seconds', i),
      outputsPerJob: toNumber(row.outputs_per_job, 'outputs_per_job', i),
      useAltDir: row.use_alt_dir === 'true',
      filesInRepoBefore: toNumber(row.files_in_repo_before, 'files_in_repo_before', i),
      backend: row.backend,
    };
  });
}

/** Human-readable series identity: one line/histogram per configuration. */
export function seriesLabel(sample: BenchSample): string {
  const alt = sample.useAltDir ? ', alt-dir' : '';
  return `${sample.outputsPerJob} outputs${alt} (${sample.backend})`;
}

/** Group one phase's samples into per-configuration series, job order kept. */
export function groupSeries(samples: BenchSample[], phase: Phase): Map<string, BenchSample[]> {
  const groups = new Map<string, BenchSample[]>();
  for (const s of samples) {
    if (s.phase !== phase) continue;
    const key = seriesLabel(s);
    const bucket = groups.get(key);
    if (bucket) {
      bucket.push(s);
    } else {
      groups.set(key, [s]);
    }
  }
  for (const bucket of groups.values()) {
    bucket.sort((a, b) => a.jobIndex - b.jobIndex);
  }
  return new Map([...groups.entries()].sort(([a], [b]) => a.localeCompare(b)));
}

export function phasesPresent(samples: BenchSample[]): Phase[] {
  const phases: Phase[] = [];
  for (const p of ['SCHEDULE', 'FINISH'] as const) {
    if (samples.some((s) => s.phase === p)) phases.push(p);
  }
  return phases;
}
