import type { HistogramBin } from './stats.js';

/** Matplotlib-like default cycle; enough for the six benchmark series. */
const PALETTE = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b'];

const WIDTH = 860;
const HEIGHT = 480;
const MARGIN = { top: 40, right: 30, bottom: 48, left: 64 };

export interface LineSeries {
  label: string;
  points: Array<[number, number]>;
}

export interface HistSeries {
  label: string;
  bins: HistogramBin[];
}

function esc(text: string): string {
  return text.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;');
}

function fmt(value: number): string {
  if (value === 0) return '0';
  const abs = Math.abs(value);
  if (abs >= 1000 || abs < 0.001) return value.toExponential(1);
  return String(Number(value.toPrecision(4)));
}

/** Round ticks: ~n steps of 1/2/5 x 10^k spanning [lo, hi]. */
function ticks(lo: number, hi: number, n = 5): number[] {
  if (hi <= lo) return [lo];
  const rawStep = (hi - lo) / n;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const norm = rawStep / mag;
  const step = (norm >= 5 ? 5 : norm >= 2 ? 2 : 1) * mag;
  const out: number[] = [];
  for (let t = Math.ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) {
    out.push(Number(t.toPrecision(12)));
  }
  return out;
}

interface Frame {
  x: (v: number) => number;
  y: (v: number) => number;
  body: string[];
}

function frame(
  title: string,
  xLabel: string,
  yLabel: string,
  xDomain: [number, number],
  yDomain: [number, number],
): Frame {
  const [x0, x1] = xDomain[0] === xDomain[1] ? [xDomain[0] - 1, xDomain[1] + 1] : xDomain;
  const [y0raw, y1raw] = yDomain;
  const pad = (y1raw - y0raw || 1) * 0.05;
  const y0 = Math.min(y0raw, 0) === y0raw && y0raw >= 0 ? 0 : y0raw - pad;
  const y1 = y1raw + pad;
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const x = (v: number) => MARGIN.left + ((v - x0) / (x1 - x0)) * plotW;
  const y = (v: number) => MARGIN.top + plotH - ((v - y0) / (y1 - y0)) * plotH;

  const body: string[] = [];
  body.push(`<rect x="0" y="0" width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  body.push(
    `<text x="${WIDTH / 2}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">${esc(title)}</text>`,
  );
  for (const t of ticks(y0, y1)) {
    const py = y(t);
    body.push(
      `<line x1="${MARGIN.left}" y1="${py}" x2="${WIDTH - MARGIN.right}" y2="${py}" stroke="#dddddd" stroke-width="1"/>`,
      `<text x="${MARGIN.left - 6}" y="${py + 4}" text-anchor="end" font-size="11" font-family="sans-serif">${fmt(t)}</text>`,
    );
  }
  for (const t of ticks(x0, x1)) {
    const px = x(t);
    body.push(
      `<line x1="${px}" y1="${HEIGHT - MARGIN.bottom}" x2="${px}" y2="${HEIGHT - MARGIN.bottom + 4}" stroke="#333333"/>`,
      `<text x="${px}" y="${HEIGHT - MARGIN.bottom + 18}" text-anchor="middle" font-size="11" font-family="sans-serif">${fmt(t)}</text>`,
    );
  }
  body.push(
    `<line x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${HEIGHT - MARGIN.bottom}" stroke="#333333"/>`,
    `<line x1="${MARGIN.left}" y1="${HEIGHT - MARGIN.bottom}" x2="${WIDTH - MARGIN.right}" y2="${HEIGHT - MARGIN.bottom}" stroke="#333333"/>`,
    `<text x="${WIDTH / 2}" y="${HEIGHT - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">${esc(xLabel)}</text>`,
    `<text x="16" y="${HEIGHT / 2}" transform="rotate(-90 16 ${HEIGHT / 2})" text-anchor="middle" font-size="12" font-family="sans-serif">${esc(yLabel)}</text>`,
  );
  return { x, y, body };
}

function legend(body: string[], labels: string[]): void {
  labels.forEach((label, i) => {
    const ly = MARGIN.top + 8 + i * 18;
    const lx = WIDTH - MARGIN.right - 220;
    body.push(
      `<line x1="${lx}" y1="${ly}" x2="${lx + 22}" y2="${ly}" stroke="${PALETTE[i % PALETTE.length]}" stroke-width="3"/>`,
      `<text x="${lx + 28}" y="${ly + 4}" font-size="12" font-family="sans-serif">${esc(label)}</text>`,
    );
  });
}

function wrap(body: string[]): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">\n` +
    body.join('\n') +
    '\n</svg>\n'
  );
}

export function renderLineChart(
  title: string,
  xLabel: string,
  yLabel: string,
  series: LineSeries[],
): string {
  const xs = series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = series.flatMap((s) => s.points.map((p) => p[1]));
  const f = frame(
    title,
    xLabel,
    yLabel,
    [Math.min(...xs), Math.max(...xs)],
    [Math.min(...ys), Math.max(...ys)],
  );
  series.forEach((s, i) => {
    const pts = s.points.map(([px, py]) => `${f.x(px).toFixed(2)},${f.y(py).toFixed(2)}`).join(' ');
    f.body.push(
      `<polyline points="${pts}" fill="none" stroke="${PALETTE[i % PALETTE.length]}" stroke-width="1.5" data-series="${esc(s.label)}"/>`,
    );
  });
  legend(f.body, series.map((s) => s.label));
  return wrap(f.body);
}

export function renderHistogram(
  title: string,
  xLabel: string,
  yLabel: string,
  series: HistSeries[],
): string {
  const nonEmpty = series.filter((s) => s.bins.length > 0);
  const los = nonEmpty.flatMap((s) => s.bins.map((b) => b.lo));
  const his = nonEmpty.flatMap((s) => s.bins.map((b) => b.hi));
  const counts = nonEmpty.flatMap((s) => s.bins.map((b) => b.count));
  const f = frame(
    title,
    xLabel,
    yLabel,
    [Math.min(0, ...los), Math.max(1e-9, ...his)],
    [0, Math.max(1, ...counts)],
  );
  nonEmpty.forEach((s, i) => {
    for (const b of s.bins) {
      if (b.count === 0) continue;
      const x0 = f.x(b.lo);
      const w = Math.max(0.5, f.x(b.hi) - x0);
      const y1 = f.y(b.count);
      const h = f.y(0) - y1;
      f.body.push(
        `<rect x="${x0.toFixed(2)}" y="${y1.toFixed(2)}" width="${w.toFixed(2)}" height="${h.toFixed(2)}" ` +
          `fill="${PALETTE[i % PALETTE.length]}" fill-opacity="0.45" data-series="${esc(s.label)}"/>`,
      );
    }
  });
  legend(f.body, series.map((s) => s.label));
  return wrap(f.body);
}
