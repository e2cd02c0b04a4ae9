import { mkdirSync, writeFileSync } from 'fs';
import { join } from 'path';

import { groupSeries, parseCsv, phasesPresent, type BenchSample, type Phase } from './csv.js';
import { clipBins, histogram, mean, median, rollingAverage, type HistogramBin } from './stats.js';
import { renderHistogram, renderLineChart, type HistSeries, type LineSeries } from './svg.js';

export interface PlotConfig {
  inputCsv: string;
  outputDir: string;
  /** Smoothing window for the rolling curves. */
  window?: number;
  /** Cut histogram tails at this many seconds. */
  histClipSeconds?: number;
  /** Histogram bin width in seconds. */
  binWidth?: number;
  /** Also rasterize each SVG to PNG. */
  png?: boolean;
}

export const DEFAULT_WINDOW = 100;
export const DEFAULT_BIN_WIDTH = 0.1;

function summaryLine(phase: Phase, label: string, durations: number[]): string {
  return (
    `${phase} | ${label} | n=${durations.length}` +
    ` | mean=${mean(durations).toExponential(12)}` +
    ` | median=${median(durations).toExponential(12)}`
  );
}

async function rasterize(svgPath: string, svg: string): Promise<string> {
  const { Resvg } = await import('@resvg/resvg-js');
  const pngPath = svgPath.replace(/\.svg$/, '.png');
  writeFileSync(pngPath, new Resvg(svg).render().asPng());
  return pngPath;
}

async function emit(
  config: PlotConfig,
  name: string,
  svg: string,
  sidecar: unknown,
  written: string[],
): Promise<void> {
  const svgPath = join(config.outputDir, `${name}.svg`);
  writeFileSync(svgPath, svg);
  written.push(svgPath);
  const metaPath = join(config.outputDir, `${name}.json`);
  writeFileSync(metaPath, JSON.stringify(sidecar, null, 1) + '\n');
  written.push(metaPath);
  if (config.png) {
    written.push(await rasterize(svgPath, svg));
  }
}

/** One smoothed runtime curve per configuration, one image per phase. */
export async function plotRolling(config: PlotConfig): Promise<string[]> {
  const window = config.window ?? DEFAULT_WINDOW;
  const samples = parseCsv(config.inputCsv);
  mkdirSync(config.outputDir, { recursive: true });
  const written: string[] = [];
  const summary: string[] = [`# per-series runtime summary (window=${window})`];

  for (const phase of phasesPresent(samples)) {
    const groups = groupSeries(samples, phase);
    const series: LineSeries[] = [];
    const meta: Array<{ label: string; n: number }> = [];
    for (const [label, rows] of groups) {
      const durations = rows.map((r) => r.durationSeconds);
      const smoothed = rollingAverage(durations, window);
      series.push({
        label,
        points: rows.map((r, i) => [r.jobIndex, smoothed[i]]),
      });
      meta.push({ label, n: rows.length });
      summary.push(summaryLine(phase, label, durations));
    }
    await emit(
      config,
      `rolling_${phase}`,
      renderLineChart(
        `${phase.toLowerCase()} runtime, rolling average over ${window}`,
        'job index',
        'runtime [s]',
        series,
      ),
      { kind: 'rolling', phase, window, series: meta },
      written,
    );
  }
  const summaryPath = join(config.outputDir, 'rolling_summary.txt');
  writeFileSync(summaryPath, summary.join('\n') + '\n');
  written.push(summaryPath);
  return written;
}

/** Runtime histograms per configuration, one image per phase. */
export async function plotHistogram(config: PlotConfig): Promise<string[]> {
  const binWidth = config.binWidth ?? DEFAULT_BIN_WIDTH;
  const samples = parseCsv(config.inputCsv);
  mkdirSync(config.outputDir, { recursive: true });
  const written: string[] = [];
  const summary: string[] = [
    `# per-series runtime summary (bin width=${binWidth}s` +
      (config.histClipSeconds !== undefined ? `, clipped at ${config.histClipSeconds}s` : '') +
      ')',
  ];

  for (const phase of phasesPresent(samples)) {
    const groups = groupSeries(samples, phase);
    const series: HistSeries[] = [];
    const meta: Array<{ label: string; n: number; bins: HistogramBin[] }> = [];
    for (const [label, rows] of groups) {
      const durations = rows.map((r) => r.durationSeconds);
      let bins = histogram(durations, binWidth);
      if (config.histClipSeconds !== undefined) {
        bins = clipBins(bins, config.histClipSeconds);
      }
      series.push({ label, bins });
      meta.push({ label, n: rows.length, bins });
      summary.push(summaryLine(phase, label, durations));
    }
    await emit(
      config,
      `hist_${phase}`,
      renderHistogram(
        `${phase.toLowerCase()} runtime histogram`,
        'runtime [s]',
        'jobs per bin',
        series,
      ),
      { kind: 'histogram', phase, binWidth, clip: config.histClipSeconds ?? null, series: meta },
      written,
    );
  }
  const summaryPath = join(config.outputDir, 'hist_summary.txt');
  writeFileSync(summaryPath, summary.join('\n') + '\n');
  written.push(summaryPath);
  return written;
}
