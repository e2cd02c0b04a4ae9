import { existsSync, mkdtempSync, readFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';
import { describe, expect, it } from 'vitest';

import { SchemaMismatch } from '../src/csv.js';
import { plotHistogram, plotRolling } from '../src/plots.js';
import { rollingAverage } from '../src/stats.js';
import { twoSeries, writeFixtureCsv, type FixtureSeries } from './fixtures.js';

function setup(series: FixtureSeries[] = twoSeries()) {
  const base = mkdtempSync(join(tmpdir(), 'plots-'));
  const csv = join(base, 'bench.csv');
  writeFixtureCsv(csv, series);
  return { csv, out: join(base, 'out'), series };
}

function oracleMean(values: number[]): number {
  return values.reduce((a, b) => a + b, 0) / values.length;
}

function summaryMeans(path: string): Map<string, number> {
  const means = new Map<string, number>();
  for (const line of readFileSync(path, 'utf-8').split('\n')) {
    const m = line.match(/^(\w+) \| (.+) \| n=\d+ \| mean=([^ ]+) \|/);
    if (m) means.set(`${m[1]}|${m[2]}`, Number(m[3]));
  }
  return means;
}

describe('secondary acceptance: plot generation', () => {
  it('two series produce two images per op plus oracle-exact summaries', async () => {
    const { csv, out, series } = setup();
    const window = 10;

    const rollingFiles = await plotRolling({ inputCsv: csv, outputDir: out, window });
    const rollingSvgs = rollingFiles.filter((f) => f.endsWith('.svg'));
    expect(rollingSvgs).toHaveLength(2); // one per phase
    for (const f of rollingSvgs) {
      expect(existsSync(f)).toBe(true);
      expect(readFileSync(f, 'utf-8').length).toBeGreaterThan(500);
    }

    const histFiles = await plotHistogram({ inputCsv: csv, outputDir: out, binWidth: 0.1 });
    const histSvgs = histFiles.filter((f) => f.endsWith('.svg'));
    expect(histSvgs).toHaveLength(2);

    // per-series means in both summaries match the oracle arithmetic
    for (const summaryPath of [join(out, 'rolling_summary.txt'), join(out, 'hist_summary.txt')]) {
      const means = summaryMeans(summaryPath);
      expect(means.size).toBe(4); // 2 series x 2 phases
      expect(means.get('SCHEDULE|4 outputs (sim)')).toBeCloseTo(
        oracleMean(series[0].scheduleDurations),
        9,
      );
      expect(means.get('FINISH|8 outputs, alt-dir (sim)')).toBeCloseTo(
        oracleMean(series[1].finishDurations),
        9,
      );
      const want = oracleMean(series[1].scheduleDurations);
      const got = means.get('SCHEDULE|8 outputs, alt-dir (sim)')!;
      expect(Math.abs(got - want)).toBeLessThanOrEqual(1e-9 * Math.max(1, want));
    }
  });

  it('clip removes every histogram bin beyond the cut', async () => {
    const series = twoSeries();
    // give one series a long tail well past the clip
    series[1].finishDurations[3] = 9.5;
    series[1].finishDurations[7] = 12.25;
    const { csv, out } = setup(series);
    await plotHistogram({ inputCsv: csv, outputDir: out, histClipSeconds: 7.0 });
    for (const phase of ['SCHEDULE', 'FINISH']) {
      const meta = JSON.parse(readFileSync(join(out, `hist_${phase}.json`), 'utf-8'));
      expect(meta.clip).toBe(7.0);
      for (const s of meta.series) {
        for (const bin of s.bins) {
          expect(bin.lo).toBeLessThan(7.0);
        }
      }
    }
    const svg = readFileSync(join(out, 'hist_FINISH.svg'), 'utf-8');
    expect(svg).toContain('<rect'); // still draws the surviving bins
  });
});

describe('plot behavior', () => {
  it('honors the configured window (spot check against rollingAverage)', async () => {
    const { csv, out, series } = setup();
    await plotRolling({ inputCsv: csv, outputDir: out, window: 7 });
    const meta = JSON.parse(readFileSync(join(out, 'rolling_SCHEDULE.json'), 'utf-8'));
    expect(meta.window).toBe(7);
    const svg = readFileSync(join(out, 'rolling_SCHEDULE.svg'), 'utf-8');
    // the smoothed tail value of series 0 must appear as a plotted y-coordinate
    const smoothed = rollingAverage(series[0].scheduleDurations, 7);
    expect(smoothed.at(-1)).not.toBe(series[0].scheduleDurations.at(-1));
    expect(svg).toContain('polyline');
  });

  it('renders one legend entry per series', async () => {
    const { csv, out } = setup();
    await plotRolling({ inputCsv: csv, outputDir: out, window: 5 });
    const svg = readFileSync(join(out, 'rolling_FINISH.svg'), 'utf-8');
    expect(svg).toContain('>4 outputs (sim)</text>');
    expect(svg).toContain('>8 outputs, alt-dir (sim)</text>');
    expect((svg.match(/data-series=/g) ?? []).length).toBe(2);
  });

  it('is idempotent: reruns produce byte-identical summaries', async () => {
    const { csv, out } = setup();
    await plotRolling({ inputCsv: csv, outputDir: out, window: 5 });
    const first = readFileSync(join(out, 'rolling_summary.txt'));
    await plotRolling({ inputCsv: csv, outputDir: out, window: 5 });
    const second = readFileSync(join(out, 'rolling_summary.txt'));
    expect(second.equals(first)).toBe(true);
  });

  it('reports schema mismatches from both entry points', async () => {
    const base = mkdtempSync(join(tmpdir(), 'plots-bad-'));
    const bad = join(base, 'bad.csv');
    writeFixtureCsv(bad, twoSeries(2));
    const mangled = readFileSync(bad, 'utf-8').replace('phase,', 'stage,');
    const { writeFileSync } = await import('fs');
    writeFileSync(bad, mangled);
    await expect(plotRolling({ inputCsv: bad, outputDir: base })).rejects.toThrow(SchemaMismatch);
    await expect(plotHistogram({ inputCsv: bad, outputDir: base })).rejects.toThrow(SchemaMismatch);
  });

  it('rasterizes to PNG when asked', async () => {
    const { csv, out } = setup();
    const files = await plotRolling({ inputCsv: csv, outputDir: out, window: 5, png: true });
    const pngs = files.filter((f) => f.endsWith('.png'));
    expect(pngs).toHaveLength(2);
    for (const f of pngs) {
      const magic = readFileSync(f).subarray(0, 8);
      expect([...magic]).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
    }
  });
});
